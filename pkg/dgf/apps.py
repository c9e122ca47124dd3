from django.apps import AppConfig


class DgfConfig(AppConfig):
    name = 'dgf'
    verbose_name = 'Deep Guided Filtering'
