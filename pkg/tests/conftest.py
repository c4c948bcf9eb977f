import mpmath
import numpy as np
import pytest

from timeleak.leakage import table1_receiver


def eq1_mp(t, t0, tau_e, tau_g):
    """Direct high-precision evaluation of the response density (test oracle)."""
    with mpmath.workdps(40):
        x = mpmath.mpf(t) - t0
        return (1 / (2 * mpmath.mpf(tau_e)) * mpmath.exp(-mpmath.mpf(tau_g) ** 2 / (4 * mpmath.mpf(tau_e) ** 2))
                * mpmath.exp(x / tau_e) * mpmath.erfc(x / tau_g))


@pytest.fixture
def rcv():
    return table1_receiver()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
