from django.apps import AppConfig


class DiscretizationConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'discretization'
    verbose_name = "Meshes and IIPG discretization"
