"""
Settings resolution for the S-adic toolkit.

A value is looked up in Django settings (``SADIC_*``), then in the process
environment (a ``.env`` file is honoured), then falls back to the default.
The math modules work without a configured Django project.
"""

import json
import os
from functools import lru_cache

from django.conf import settings
from django.core.exceptions import ImproperlyConfigured
from dotenv import load_dotenv

DEFAULTS = {
    "SADIC_ENUMERATION_CAP": 10_000_000,
    "SADIC_PADIC_PRECISION": 64,
    "SADIC_MIN_SIGNIFICANT_DIGITS": 8,
    "SADIC_TAU_ARCH": 1e-9,
    "SADIC_TAU_RANK": 1e-8,
    "SADIC_SAMPLE_DIGITS": 32,
    "SADIC_WORKERS": 1,
    "SADIC_BOX_SAFETY": 2.0,
    "SADIC_BESICOVITCH": {},
}

_CASTS = {
    "SADIC_ENUMERATION_CAP": int,
    "SADIC_PADIC_PRECISION": int,
    "SADIC_MIN_SIGNIFICANT_DIGITS": int,
    "SADIC_TAU_ARCH": float,
    "SADIC_TAU_RANK": float,
    "SADIC_SAMPLE_DIGITS": int,
    "SADIC_WORKERS": int,
    "SADIC_BOX_SAFETY": float,
    "SADIC_BESICOVITCH": lambda raw: {
        int(k): float(v) for k, v in (json.loads(raw) if isinstance(raw, str) else raw).items()
    },
}


class SadicSettings:
    """Resolves toolkit settings."""

    def __init__(self, overrides=None):
        self.overrides = dict(overrides or {})
        load_dotenv()

    def _get_raw(self, name):
        """Get a raw value from overrides, Django settings or environment."""
        if name in self.overrides and self.overrides[name] is not None:
            return self.overrides[name]

        if settings.configured:
            value = getattr(settings, name, None)
            if value is not None:
                return value

        value = os.environ.get(name)
        if value:
            return value

        return DEFAULTS[name]

    def get(self, name):
        if name not in DEFAULTS:
            raise ImproperlyConfigured(f"Unknown sadic setting '{name}'.")
        raw = self._get_raw(name)
        try:
            return _CASTS[name](raw)
        except (TypeError, ValueError) as e:
            raise ImproperlyConfigured(f"Invalid value for {name}: {raw!r} ({e})")

    @property
    def enumeration_cap(self):
        return self.get("SADIC_ENUMERATION_CAP")

    @property
    def padic_precision(self):
        return self.get("SADIC_PADIC_PRECISION")

    @property
    def min_significant_digits(self):
        return self.get("SADIC_MIN_SIGNIFICANT_DIGITS")

    @property
    def tau_arch(self):
        return self.get("SADIC_TAU_ARCH")

    @property
    def tau_rank(self):
        return self.get("SADIC_TAU_RANK")

    @property
    def sample_digits(self):
        return self.get("SADIC_SAMPLE_DIGITS")

    @property
    def workers(self):
        return self.get("SADIC_WORKERS")

    @property
    def box_safety(self):
        return self.get("SADIC_BOX_SAFETY")

    @property
    def besicovitch(self):
        return self.get("SADIC_BESICOVITCH")


@lru_cache(maxsize=1)
def get_settings():
    """Process-wide settings resolver."""
    return SadicSettings()
