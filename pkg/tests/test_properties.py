import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from qgtrabi.geometry import curvature, metric, pair_basis, qgt_resolvent
from qgtrabi.models import builtin_model, decompose_bands
from qgtrabi.numerics import hermitian_eig, propagate_step
from qgtrabi.protocols import plan_fidelity
from qgtrabi.results import dumps

angles = st.floats(min_value=-math.pi, max_value=math.pi, allow_nan=False)
GENERIC = builtin_model("dirac4_generic")


@settings(max_examples=40, deadline=None)
@given(st.lists(angles, min_size=4, max_size=4), st.integers(0, 3), st.integers(0, 3),
       st.sampled_from([-1, 1]))
def test_qgt_algebraic_structure(lam, j, k, s):
    b = decompose_bands(GENERIC, lam)
    Qjk = qgt_resolvent(GENERIC, lam, s, j, k, b).matrix
    Qkj = qgt_resolvent(GENERIC, lam, s, k, j, b).matrix
    scale = max(np.max(np.abs(Qjk)), 1.0)
    assert np.allclose(Qjk.conj().T, Qkj, atol=1e-12 * scale)
    g, F = metric(Qjk), curvature(Qjk)
    assert np.allclose(g + F / 2j, Qjk, atol=1e-12 * scale)
    Qjj = qgt_resolvent(GENERIC, lam, s, j, j, b).matrix
    assert np.min(np.linalg.eigvalsh(Qjj)) >= -1e-12 * max(np.max(np.abs(Qjj)), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(angles, min_size=4, max_size=4), st.integers(0, 3))
def test_band_eigenvalues_shared(lam, j):
    b = decompose_bands(GENERIC, lam)
    qm = np.linalg.eigvalsh(qgt_resolvent(GENERIC, lam, -1, j, j, b).matrix)
    qp = np.linalg.eigvalsh(qgt_resolvent(GENERIC, lam, 1, j, j, b).matrix)
    assert np.allclose(qm, qp, atol=1e-10 * max(qm.max(), 1.0))
    pairs = pair_basis(GENERIC, lam, j, bands=b)
    assert np.allclose(pairs.minus.conj().T @ pairs.minus, np.eye(2), atol=1e-10)
    assert np.allclose(pairs.plus.conj().T @ pairs.plus, np.eye(2), atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 10.0))
def test_propagation_preserves_norm(D, seed, dt):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    psi = rng.normal(size=D) + 1j * rng.normal(size=D)
    psi /= np.linalg.norm(psi)
    out = propagate_step(X + X.conj().T, psi, dt)
    assert abs(np.linalg.norm(out) - 1) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2 ** 32 - 1))
def test_eig_deterministic(D, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    H = X + X.conj().T
    a, b = hermitian_eig(H), hermitian_eig(H.copy())
    assert np.array_equal(a.values, b.values) and np.array_equal(a.vectors, b.vectors)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.05, 5.0), min_size=2, max_size=4), st.floats(0.1, 100.0))
def test_plan_fidelity_is_probability(omegas, T):
    even = (0,)
    odd = tuple(range(1, len(omegas)))
    F = plan_fidelity(omegas, even, odd, T)
    assert -1e-12 <= F <= 1 + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_serialization_round_trips(x):
    assert float(dumps(x)) == x
