from django.apps import AppConfig


class ConditioningConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.conditioning'
