import os
import tempfile

# Logs of the test session go to a scratch directory; must be set before
# any module creates its AppLogger.
os.environ.setdefault("BLINDCHAN_LOG_DIR", tempfile.mkdtemp(prefix="blindchan-logs-"))

import numpy as np
import pytest

from models.channel import ArrayGeometry, ArrayKind, build_dictionary


def _complex_normal(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def complex_normal():
    return _complex_normal


@pytest.fixture
def small_geometry():
    return ArrayGeometry(kind=ArrayKind.ULA, n1=4, n2=1, spacing_d=0.5, carrier_fc=28e9, bandwidth_B=1e8)


@pytest.fixture
def flat_dictionary(small_geometry):
    return build_dictionary(small_geometry, T=3, T_D=0, frequency_dependent=False)


@pytest.fixture
def wideband_dictionary():
    geometry = ArrayGeometry(kind=ArrayKind.ULA, n1=3, n2=1, spacing_d=0.5, carrier_fc=60.5e9, bandwidth_B=7e9)
    return build_dictionary(geometry, T=5, T_D=1, frequency_dependent=True)


@pytest.fixture
def wirtinger_gradient():
    """
    Central-difference estimate of −∂f/∂S* = −(∂f/∂X + j∂f/∂Y)/2 for a
    real function of a complex matrix S = X + jY.
    """
    def estimate(f, S, h=1e-6):
        S = np.asarray(S, dtype=complex)
        G = np.zeros_like(S)
        for index in np.ndindex(S.shape):
            E = np.zeros_like(S)
            E[index] = h
            d_re = (f(S + E) - f(S - E)) / (2 * h)
            d_im = (f(S + 1j * E) - f(S - 1j * E)) / (2 * h)
            G[index] = -0.5 * (d_re + 1j * d_im)
        return G
    return estimate
