# config/settings/test.py
"""
Test settings: in-memory ledger database, quiet logging, single worker.
"""

import tempfile
from pathlib import Path

from .base import *

DEBUG = False

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': ':memory:',
    }
}

PASSWORD_HASHERS = ['django.contrib.auth.hashers.MD5PasswordHasher']

LOGGING['handlers']['console']['level'] = 'WARNING'
LOGGING['handlers']['file'] = {'class': 'logging.NullHandler'}

MIDT = {
    **MIDT,
    'RUNS_DIR': Path(tempfile.gettempdir()) / 'midt-test-runs',
    'THREADS': 1,
}
