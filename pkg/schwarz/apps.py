from django.apps import AppConfig


class SchwarzConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'schwarz'
    verbose_name = "Two-level additive Schwarz preconditioners"
