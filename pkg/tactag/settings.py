"""
Django settings for the tactag project.

tactag has no web surface: Django provides configuration, logging and the
management-command runner (``python manage.py <command>``). Everything
tunable about pattern generation, classification, registration and the
imprint simulator lives in the ``TACTAG`` dict below and can be overridden
from the environment (or a ``.env`` file) with ``TACTAG_<NAME>``.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')


def env_float(name, default):
    value = os.environ.get(f'TACTAG_{name}')
    return float(value) if value not in (None, '') else default


def env_int(name, default):
    value = os.environ.get(f'TACTAG_{name}')
    return int(value) if value not in (None, '') else default


def env_bool(name, default):
    value = os.environ.get(f'TACTAG_{name}')
    if value in (None, ''):
        return default
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


# Only used to satisfy Django's startup checks; nothing is signed.
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-tactag-local-only')

DEBUG = env_bool('DEBUG', False)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'core',
]

# No database: libraries are directories of files (see core.library).
DATABASES = {}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# REST Framework settings
# Only the serializers, parser and renderer are used (manifest validation and I/O).
REST_FRAMEWORK = {
    'DEFAULT_RENDERER_CLASSES': [
        'rest_framework.renderers.JSONRenderer',
    ],
    'DEFAULT_PARSER_CLASSES': [
        'rest_framework.parsers.JSONParser',
    ],
    'UNAUTHENTICATED_USER': None,
}


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'core': {
            'handlers': ['console'],
            'level': os.environ.get('TACTAG_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# tactag settings
# Defaults and their meaning are listed in core.conf.DEFAULTS.
TACTAG = {
    'LIBRARY_DIR': os.environ.get('TACTAG_LIBRARY_DIR', str(BASE_DIR / 'library')),

    # Pattern grid and generation
    'GRID_DIVISIONS': env_int('GRID_DIVISIONS', 4),
    'GRID_EXTENT': env_float('GRID_EXTENT', 4.0),
    'N_MIN': env_int('N_MIN', 10),
    'N_MAX': env_int('N_MAX', 20),
    'ALPHA': env_float('ALPHA', 0.1),
    'ANNEAL_T0': env_float('ANNEAL_T0', 1.0),
    'ANNEAL_BETA': env_float('ANNEAL_BETA', 0.01),
    'ANNEAL_MAX_ITERS': env_int('ANNEAL_MAX_ITERS', 5000),

    # Rasterization and classification
    'SCALE_MM': env_float('SCALE_MM', 5.0),
    'DEPTH_MM': env_float('DEPTH_MM', 1.0),
    'PITCH_MM': env_float('PITCH_MM', 0.05),
    'MARGIN_MM': env_float('MARGIN_MM', 0.25),
    'DILATION_RADIUS_PX': env_int('DILATION_RADIUS_PX', 2),
    'CLASSIFY_ROTATIONS_DEG': (-3.0, -1.5, 0.0, 1.5, 3.0),

    # Mesh and point cloud
    'SUBDIVISION': env_float('SUBDIVISION', 0.1),
    'VOXEL_MM': env_float('VOXEL_MM', 0.2),
    'CLOUD_FULL_PRISM': env_bool('CLOUD_FULL_PRISM', False),

    # Registration
    'REG_MAX_ITERATIONS': env_int('REG_MAX_ITERATIONS', 50),
    'REG_TOLERANCE_MM': env_float('REG_TOLERANCE_MM', 1e-3),
    'REG_SIGMA0_MM': env_float('REG_SIGMA0_MM', 1.0),
    'REG_SIGMA_DECAY': env_float('REG_SIGMA_DECAY', 0.7),
    'REG_SIGMA_MIN_MM': env_float('REG_SIGMA_MIN_MM', 0.1),
    'REG_OUTLIER_WEIGHT': env_float('REG_OUTLIER_WEIGHT', 0.1),

    # Imprint simulator
    'SENSOR_WIDTH_MM': env_float('SENSOR_WIDTH_MM', 16.0),
    'SENSOR_HEIGHT_MM': env_float('SENSOR_HEIGHT_MM', 12.0),
    'DEPTH_NOISE_SIGMA_MM': env_float('DEPTH_NOISE_SIGMA_MM', 0.02),
    'DROPOUT_FRACTION': env_float('DROPOUT_FRACTION', 0.05),
    'PERTURB_XY_MM': env_float('PERTURB_XY_MM', 2.5),
    'PERTURB_THETA_DEG': env_float('PERTURB_THETA_DEG', 3.0),
    'PEG_SIDE_MM': env_float('PEG_SIDE_MM', 30.2),
    'HOLE_SIDE_MM': env_float('HOLE_SIDE_MM', 31.6),
}
