# -*- coding: utf-8
from django.apps import AppConfig
from django.utils.translation import gettext_lazy as _


class DjangoVPredConfig(AppConfig):
    name = 'django_vpred'
    verbose_name = _("v-prediction diffusion lab")
    default = True

    def ready(self):
        # Fail at startup rather than halfway through a training run
        from .conf import vpred_settings
        vpred_settings.check()
