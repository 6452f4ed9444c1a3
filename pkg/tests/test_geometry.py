import math

import numpy as np
import pytest

from qgtrabi.errors import NotHermitian
from qgtrabi.geometry import (coupling_operator, curvature, diagonalize_qgt, drive_block,
                              factorized_consistency, metric, pair_basis, qgt_fd, qgt_resolvent)
from qgtrabi.models import builtin_model, decompose_bands

from conftest import REF_LAMBDA


@pytest.mark.parametrize("theta", [0.3, 1.1, math.pi / 2, 2.5])
def test_spin_half_abelian_values(theta):
    m = builtin_model("spin_half")
    lam = (theta, 0.8)
    Qtt = qgt_resolvent(m, lam, -1, 0, 0).matrix[0, 0]
    Qpp = qgt_resolvent(m, lam, -1, 1, 1).matrix[0, 0]
    Qtp = qgt_resolvent(m, lam, -1, 0, 1)
    assert Qtt == pytest.approx(0.25, abs=1e-12)
    assert Qpp == pytest.approx(math.sin(theta) ** 2 / 4, abs=1e-12)
    assert curvature(Qtp)[0, 0].real == pytest.approx(math.sin(theta) / 2, abs=1e-12)
    # the upper band has opposite curvature and the same metric
    Qtp_plus = qgt_resolvent(m, lam, 1, 0, 1)
    assert curvature(Qtp_plus)[0, 0].real == pytest.approx(-math.sin(theta) / 2, abs=1e-12)
    assert metric(Qtp_plus)[0, 0].real == pytest.approx(metric(Qtp)[0, 0].real, abs=1e-12)


def test_qgt_structure(generic):
    for s in (-1, 1):
        for j in range(4):
            Q = qgt_resolvent(generic, REF_LAMBDA, s, j, j).matrix
            assert np.allclose(Q, Q.conj().T, atol=1e-14)
            assert np.all(np.linalg.eigvalsh(Q) >= -1e-14)
        Q01 = qgt_resolvent(generic, REF_LAMBDA, s, 0, 1).matrix
        Q10 = qgt_resolvent(generic, REF_LAMBDA, s, 1, 0).matrix
        assert np.allclose(Q01.conj().T, Q10, atol=1e-14)
        F = curvature(Q01)
        assert np.allclose(F, F.conj().T, atol=1e-14)
        assert np.allclose(curvature(Q10), -F, atol=1e-14)


def test_generic_model_is_non_abelian(generic):
    Q = qgt_resolvent(generic, REF_LAMBDA, -1, 2, 2).matrix
    w = np.linalg.eigvalsh(Q)
    assert w[1] - w[0] > 0.1 * w[1]


@pytest.mark.parametrize("name", ["dirac4", "dirac4_generic", "weyl4"])
def test_oracle_equivalence(name):
    m = builtin_model(name)
    rng = np.random.default_rng(3)
    lam = rng.uniform(-1, 1, 4) + 0.2
    for s in (-1, 1):
        for j, k in ((0, 0), (1, 2), (3, 1)):
            Q = qgt_resolvent(m, lam, s, j, k).matrix
            F = qgt_fd(m, lam, s, j, k).matrix
            assert np.max(np.abs(Q - F)) <= 1e-5 * np.max(np.abs(Q))


def test_fd_step_bounds(generic):
    with pytest.raises(Exception):
        qgt_fd(generic, REF_LAMBDA, -1, 0, 0, h=1.0)


def test_diagonalize_descending_and_identity():
    e = diagonalize_qgt(np.diag([0.2, 0.7]))
    assert np.allclose(e.eigenvalues, [0.7, 0.2])
    ident = diagonalize_qgt(0.3 * np.eye(2))
    assert np.allclose(ident.transform, np.eye(2))
    with pytest.raises(NotHermitian):
        diagonalize_qgt(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_two_tone_identities(generic, ref_bands):
    for s in (-1, 1):
        Qjj = qgt_resolvent(generic, REF_LAMBDA, s, 2, 2, ref_bands).matrix
        Qkk = qgt_resolvent(generic, REF_LAMBDA, s, 3, 3, ref_bands).matrix
        Qjk = qgt_resolvent(generic, REF_LAMBDA, s, 2, 3, ref_bands)
        c = coupling_operator(generic, REF_LAMBDA, s, 2, 3, math.pi / 2, ref_bands).matrix
        g = coupling_operator(generic, REF_LAMBDA, s, 2, 3, 0.0, ref_bands).matrix
        assert np.max(np.abs(c - Qjj - Qkk - s * curvature(Qjk))) <= 1e-12
        assert np.max(np.abs(g - Qjj - Qkk - 2 * metric(Qjk))) <= 1e-12


def test_drive_block_reproduces_both_couplings(generic, ref_bands):
    K = drive_block(generic, REF_LAMBDA, 2, 3, 0.4, ref_bands)
    cm = coupling_operator(generic, REF_LAMBDA, -1, 2, 3, 0.4, ref_bands).matrix
    cp = coupling_operator(generic, REF_LAMBDA, 1, 2, 3, 0.4, ref_bands).matrix
    assert np.allclose(K @ K.conj().T, cm, atol=1e-13)
    assert np.allclose(K.conj().T @ K, cp, atol=1e-13)


def test_pair_basis_couples_one_to_one(generic, ref_bands):
    pairs = pair_basis(generic, REF_LAMBDA, 2, bands=ref_bands)
    K = drive_block(generic, REF_LAMBDA, 2, bands=ref_bands)
    W = pairs.minus.conj().T @ K @ pairs.plus
    assert np.allclose(W, np.diag(np.sqrt(pairs.eigenvalues)), atol=1e-12)
    eig = np.linalg.eigvalsh(qgt_resolvent(generic, REF_LAMBDA, -1, 2, 2, ref_bands).matrix)
    assert np.allclose(pairs.eigenvalues, eig[::-1], atol=1e-13)


def test_dark_pair_gets_partner():
    m = builtin_model("dirac4", {"mass": 1.0})
    lam = np.zeros(4)
    pairs = pair_basis(m, lam, 0)
    assert np.allclose(pairs.plus.conj().T @ pairs.plus, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("j", range(4))
def test_factorized_consistency(generic, j):
    rep = factorized_consistency(generic, REF_LAMBDA, j)
    assert rep["passed"]
    assert np.allclose(rep["eigenvalues_minus"], rep["eigenvalues_plus"], atol=1e-12)
