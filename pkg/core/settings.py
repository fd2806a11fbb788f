"""
Django settings for the Schwarz preconditioning laboratory.

The project has no web surface: Django provides configuration, logging,
management commands and the test runner. Every value below can be overridden
from a ``.env`` file at the project root or from the environment.

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
import environ
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Initialise environment variables
env = environ.Env(
    DEBUG=(bool, False),
    PENALTY_ETA=(float, 5.0),
    PENALTY_ETA0=(float, 5.0),
    SOLVER_THREADS=(int, 1),
    SOLVER_REL_TOL=(float, 1e-6),
    SOLVER_MAX_ITER=(int, 500),
    COARSE_INNER_RESTART=(int, 20),
    COARSE_INNER_PRECONDITIONER=(str, 'symmetric'),
    ANALYSIS_DENSE_LIMIT=(int, 4000),
    LOG_LEVEL=(str, 'INFO'),
    LOG_FORMAT=(str, 'verbose'),
)
# Locates the .env file
environ.Env.read_env(os.path.join(BASE_DIR, '.env'))

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = env('SECRET_KEY', default='schwarzlab-dev-key-not-for-deployment')

DEBUG = env('DEBUG')

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'linalg.apps.LinalgConfig',
    'discretization.apps.DiscretizationConfig',
    'schwarz.apps.SchwarzConfig',
    'krylov.apps.KrylovConfig',
    'analysis.apps.AnalysisConfig',
    'experiments.apps.ExperimentsConfig',
]


# Numerical defaults
# Kernels take explicit arguments; only the runner and the management commands read these.

PENALTY_ETA = env('PENALTY_ETA')
PENALTY_ETA0 = env('PENALTY_ETA0')

SOLVER_THREADS = env('SOLVER_THREADS')
SOLVER_REL_TOL = env('SOLVER_REL_TOL')
SOLVER_MAX_ITER = env('SOLVER_MAX_ITER')

# Inner GMRES of the inexact coarse solver; "symmetric" preconditions it with the LU of the coarse A0
COARSE_INNER_RESTART = env('COARSE_INNER_RESTART')
COARSE_INNER_PRECONDITIONER = env('COARSE_INNER_PRECONDITIONER')

ANALYSIS_DENSE_LIMIT = env('ANALYSIS_DENSE_LIMIT')

EXPORT_DIR = Path(env('EXPORT_DIR', default=str(BASE_DIR / 'exports')))


# Logging

LOG_LEVEL = env('LOG_LEVEL')
LOG_FORMAT = env('LOG_FORMAT')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
        'json': {
            '()': 'pythonjsonlogger.json.JsonFormatter',
            'fmt': '%(levelname)s %(asctime)s %(name)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': LOG_FORMAT,
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': True,
        },
        **{
            app: {
                'handlers': ['console'],
                'level': LOG_LEVEL,
                'propagate': False,
            }
            for app in ('linalg', 'discretization', 'schwarz', 'krylov', 'analysis', 'experiments')
        },
    },
}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

# Default primary key field type
# https://docs.djangoproject.com/en/5.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
