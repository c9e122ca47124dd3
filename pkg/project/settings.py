"""
Django settings for the deep guided filtering project.

The project has no web surface: Django provides the management-command CLI,
settings, form validation of command flags, logging configuration and the
test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

DEBUG = False


# Application definition

INSTALLED_APPS = [
    'dgf.apps.DgfConfig',
]

# Nothing here is stored in a database.
DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

USE_I18N = False

USE_TZ = True


# Logging
# Diagnostics go to stderr; stdout is reserved for command data (CSV, reports).

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'dgf': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
    },
}


# Guided filtering defaults, read through dgf.conf.get_setting().

DGF = {
    'RADIUS': 1,
    'EPS': 1e-8,
    'LOW_RES_SHORT_SIDE': 64,
    'GUIDANCE_CHANNELS': 64,
    'LEARNING_RATE': 1e-4,
    'GRADCHECK_TOLERANCE': 1e-5,
    'BENCH_REPEAT': 3,
    'TOY_SAMPLES': 20,
    'TOY_SIZE': 96,
    'TOY_STEPS': 500,
}
