# Django management commands package 