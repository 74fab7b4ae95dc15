import django
import pytest
from django.conf import settings

from sadic_package.number_field import NumberField
from sadic_package.s_adic import SConfig


def pytest_configure(config):
    if not settings.configured:
        settings.configure(INSTALLED_APPS=['rest_framework', 'sadic_package'], USE_TZ=True)
        django.setup()


@pytest.fixture
def Q():
    return NumberField.rationals()


@pytest.fixture
def QI():
    return NumberField.imaginary_quadratic(1)


@pytest.fixture
def q_inf(Q):
    return SConfig.from_primes(Q)


@pytest.fixture
def q_inf_2(Q):
    return SConfig.from_primes(Q, [2])


@pytest.fixture
def qi_inf(QI):
    return SConfig.from_primes(QI)
