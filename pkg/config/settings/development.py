# config/settings/development.py
"""
Development settings for the midt project.
"""

import sys

from .base import *

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = True

ALLOWED_HOSTS = ['localhost', '127.0.0.1', '0.0.0.0']

# Development-specific installed apps
INSTALLED_APPS += [
    'django_extensions',  # shell_plus, runscript
]

# # Development logging - more verbose
# LOGGING['handlers']['console']['level'] = 'DEBUG'
# LOGGING['loggers']['apps']['level'] = 'DEBUG'

# Disable some security features for development
SECURE_SSL_REDIRECT = False
SESSION_COOKIE_SECURE = False
CSRF_COOKIE_SECURE = False

# Keep stdout clean for commands that stream CSV
print("=" * 50, file=sys.stderr)
print("Running in DEVELOPMENT mode", file=sys.stderr)
print("=" * 50, file=sys.stderr)
