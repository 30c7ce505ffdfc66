from django.apps import AppConfig


class RepeaterConfig(AppConfig):
    name = 'repeater'
    verbose_name = 'Quantum repeater simulator'
