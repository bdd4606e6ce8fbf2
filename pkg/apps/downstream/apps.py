from django.apps import AppConfig


class DownstreamConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.downstream'
