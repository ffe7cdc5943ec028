import math

import numpy as np
import pytest

from spinreadout.core_model import (
    TWO_PI,
    QGaussianShape,
    RelaxationComponent,
    ResonatorParams,
    SpinEnsembleParams,
)

F0 = 5.51e9
KAPPA_HZ = 170e3
G_ENS_HZ = 4.52e6
FWHM_HZ = 6.2e6


@pytest.fixture
def resonator():
    return ResonatorParams(TWO_PI * F0, TWO_PI * 85e3, TWO_PI * 85e3)


def make_spins(omega_s, g_hz=G_ENS_HZ, fwhm_hz=FWHM_HZ, q=2.0, components=None, **kw):
    relax = components or (RelaxationComponent(1.0, 1e-3),)
    return SpinEnsembleParams(2.0, TWO_PI * g_hz, QGaussianShape(omega_s, TWO_PI * fwhm_hz, q),
                              relax, **kw)


@pytest.fixture
def spins_factory():
    return make_spins


def rel(a, b):
    return abs(a - b) / abs(b)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running simulations")


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion; the outcome line is printed in the summary."""

    def record(number, ok, detail):
        ACCEPTANCE[number] = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(ACCEPTANCE[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
