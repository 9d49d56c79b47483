from django.apps import AppConfig


class CoreConfig(AppConfig):
    name = 'core'
    verbose_name = 'Tactile pattern library'

    def ready(self):
        from django.core.signals import setting_changed

        from .conf import reload_tactag_settings

        setting_changed.connect(reload_tactag_settings)
