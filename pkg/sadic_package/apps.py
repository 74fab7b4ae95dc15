"""
Django app configuration for the S-adic toolkit.
"""

from django.apps import AppConfig


class SadicPackageConfig(AppConfig):
    """Configuration for the sadic_package app."""

    default_auto_field = 'django.db.models.BigAutoField'
    name = 'sadic_package'
    verbose_name = 'S-adic Diophantine approximation'
