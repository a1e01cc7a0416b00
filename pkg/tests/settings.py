"""
Django settings for the example project and the test suite.

No database is needed: every command works on files in ``--out``.
"""

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = "v7!q3r0x^kz-vpred-example-only-(not-for-production)"

DEBUG = True

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',

    # For actual testing
    'django_vpred',
]

DATABASES = {}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'django_vpred': {
            'handlers': ['console'],
            'level': 'WARNING',
        },
    },
}

# App settings; anything left out falls back to django_vpred.conf.DEFAULTS
VPRED = {
    'OUT_DIR': 'runs',
}

# Internationalization
# https://docs.djangoproject.com/en/3.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
