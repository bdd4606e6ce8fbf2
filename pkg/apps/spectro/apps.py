from django.apps import AppConfig


class SpectroConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.spectro'
