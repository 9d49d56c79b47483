"""Configure Django before test modules are collected."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'tactag.settings')
django.setup()
