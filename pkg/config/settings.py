"""
Django settings for config project.

The project hosts a single app, ``repeater``: a discrete-event simulator of
multiplexed quantum repeaters driven by management commands and, for large
sweeps, Celery workers.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')


def _env_bool(key, default):
    return os.getenv(key, default).lower() in ('1', 'true', 'yes')


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'django-insecure-repeater-simulation-only')

DEBUG = _env_bool('DJANGO_DEBUG', 'True')

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'repeater',
]


# Database
# No models: results live in CSV files, so Django falls back to its dummy backend.

DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'fr-fr'

TIME_ZONE = 'Europe/Paris'

USE_I18N = True

USE_TZ = True


# Redis / Celery defaults
REDIS_URL = os.getenv('REDIS_URL', 'redis://127.0.0.1:6379/0')
CELERY_BROKER_URL = REDIS_URL
CELERY_RESULT_BACKEND = REDIS_URL
CELERY_ACCEPT_CONTENT = ['json']
CELERY_TASK_SERIALIZER = 'json'
CELERY_RESULT_SERIALIZER = 'json'
CELERY_TIMEZONE = TIME_ZONE
CELERY_ENABLE_UTC = False
CELERY_WORKER_POOL = os.getenv('CELERY_WORKER_POOL', 'solo')

# Simulation
# Bare file names given to --out are written in this directory.
REPEATER_OUTPUT_DIR = Path(os.getenv('REPEATER_OUTPUT_DIR', BASE_DIR / 'results'))
REPEATER_RUNS_PER_POINT = int(os.getenv('REPEATER_RUNS_PER_POINT', '3'))
# Validates every density matrix and register transition; about 2x slower.
REPEATER_STATE_CHECKS = _env_bool('REPEATER_STATE_CHECKS', 'true' if DEBUG else 'false')
# Sweep points run in the command process unless set to false (then Celery).
REPEATER_SWEEP_INLINE_RUN = _env_bool('REPEATER_SWEEP_INLINE_RUN', 'true')
REPEATER_ORACLE_Z_LIMIT = float(os.getenv('REPEATER_ORACLE_Z_LIMIT', '3.0'))
REPEATER_LOG_LEVEL = os.getenv('REPEATER_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {'format': '{asctime} {levelname} {name}: {message}', 'style': '{'},
    },
    'handlers': {
        'console': {'class': 'logging.StreamHandler', 'formatter': 'simple'},
    },
    'loggers': {
        'repeater': {'handlers': ['console'], 'level': REPEATER_LOG_LEVEL, 'propagate': False},
    },
}
