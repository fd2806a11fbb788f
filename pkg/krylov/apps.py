from django.apps import AppConfig


class KrylovConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'krylov'
    verbose_name = "Krylov solvers"
