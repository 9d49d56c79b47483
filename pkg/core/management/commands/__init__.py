# Django management commands 