"""
App settings.

Override any of these through a ``VPRED`` dict in your Django settings::

    VPRED = {
        'SCHEDULE_KIND': 'linear',
        'NUM_STEPS': 500,
    }
"""
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured
from django.core.signals import setting_changed

DEFAULTS = {
    # Never guessed from data: the schedule is always a parameter
    'SCHEDULE_KIND': 'cosine',
    'NUM_STEPS': 1000,
    # bfloat16 spacing bound
    'DELTA_MAX': 1 / 128,
    'ILL_POSED_FLOOR': 1e-6,
    'ALPHA_BAR_FLOOR': 1e-9,
    'OUT_DIR': 'runs',
    'SAMPLING_STEPS': 100,
}


class VPredSettings:
    def __init__(self, user_settings=None):
        self._user_settings = user_settings

    @property
    def user_settings(self):
        if self._user_settings is None:
            # Plain library use without a configured Django project
            if not settings.configured:
                return {}
            self._user_settings = getattr(settings, 'VPRED', {})
        return self._user_settings

    def check(self):
        unknown = set(self.user_settings) - set(DEFAULTS)
        if unknown:
            raise ImproperlyConfigured(
                'Unknown VPRED setting(s): %s' % ', '.join(sorted(unknown))
            )

    def __getattr__(self, name):
        if name not in DEFAULTS:
            raise AttributeError('Invalid VPRED setting: %r' % name)
        return self.user_settings.get(name, DEFAULTS[name])

    def reload(self):
        self._user_settings = None


vpred_settings = VPredSettings()


def _reload(*, setting, **kwargs):
    if setting == 'VPRED':
        vpred_settings.reload()


setting_changed.connect(_reload)
