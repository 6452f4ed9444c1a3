import math

import numpy as np
import pytest

from qgtrabi.models import ConstantModel, RotatedModel, builtin_model, decompose_bands

REF_LAMBDA = (0.7, 0.3, 1.1, -0.4)


@pytest.fixture(scope="session")
def generic():
    return builtin_model("dirac4_generic")


@pytest.fixture(scope="session")
def ref_bands(generic):
    return decompose_bands(generic, REF_LAMBDA)


def ratio_pi_settings():
    """Settings for a dirac4_generic variant whose drive j=0 couples two
    pairs with eigenvalues pi^2 and 1 at lambda = 0."""
    e = np.zeros((5, 4))
    e[4, 0] = 1.0
    K = np.zeros((4, 4, 4))
    K[0, 0, 2] = K[0, 2, 0] = 1.0
    K[0, 1, 3] = K[0, 3, 1] = math.pi
    return {"c": np.zeros((5, 4)).tolist(), "e": e.tolist(), "generators": K.tolist()}


@pytest.fixture(scope="session")
def ratio_pi_model():
    return builtin_model("dirac4_generic", ratio_pi_settings())


def synthetic_model(b):
    """2N-level model with equal band energies -1, +1 whose drive j=0 couples
    pair nu with coupling eigenvalue b[nu]^2."""
    N = len(b)
    H0 = np.diag(np.concatenate([-np.ones(N), np.ones(N)])).astype(complex)
    K = np.zeros((2 * N, 2 * N))
    K[:N, N:] = np.diag(b)
    K = K + K.T
    return RotatedModel(ConstantModel(H0, 1), [K], "synthetic")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import ACCEPTANCE
    except ImportError:
        return
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
