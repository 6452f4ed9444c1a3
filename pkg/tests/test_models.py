import math

import numpy as np
import pytest
from scipy.stats import unitary_group

from qgtrabi.errors import GapCollapse, IndexOutOfRange, InvalidSetting, NotTwoBand, UnknownModel
from qgtrabi.models import (BUILTIN_MODELS, GAMMA4, ConstantModel, FunctionModel, band_sign,
                            builtin_model, decompose_bands, gradient_fd)

from conftest import REF_LAMBDA


def test_clifford_algebra():
    for a in range(5):
        for b in range(5):
            ac = GAMMA4[a] @ GAMMA4[b] + GAMMA4[b] @ GAMMA4[a]
            assert np.allclose(ac, 2 * (a == b) * np.eye(4))


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_gradient_matches_fd(name):
    m = builtin_model(name)
    rng = np.random.default_rng(0)
    for _ in range(3):
        lam = rng.uniform(-1, 1, m.param_count) + 0.3
        for j in range(m.param_count):
            g = m.gradient(lam, j)
            assert np.allclose(g, g.conj().T)
            assert np.max(np.abs(g - gradient_fd(m, lam, j))) <= 1e-6 * max(np.max(np.abs(g)), 1)


@pytest.mark.parametrize("name", BUILTIN_MODELS)
def test_two_degenerate_bands(name):
    m = builtin_model(name)
    lam = np.full(m.param_count, 0.4)
    b = decompose_bands(m, lam)
    N = m.dim // 2
    assert b.degeneracy == N
    H = m.evaluate(lam)
    assert np.allclose(H @ b.frame_minus, b.energy_minus * b.frame_minus, atol=1e-12)
    assert np.allclose(H @ b.frame_plus, b.energy_plus * b.frame_plus, atol=1e-12)
    assert np.allclose(b.basis.conj().T @ b.basis, np.eye(2 * N), atol=1e-12)


def test_spin_half_energies():
    m = builtin_model("spin_half", {"delta": 2.0})
    b = decompose_bands(m, (0.3, 1.0))
    assert b.energy_minus == pytest.approx(-1.0)
    assert b.gap == pytest.approx(2.0)


def test_dirac_point_collapses():
    m = builtin_model("dirac4", {"mass": -4.0})
    with pytest.raises(GapCollapse):
        decompose_bands(m, np.zeros(4))


def test_weyl4_gap_is_twice_norm():
    m = builtin_model("weyl4")
    lam = np.array([0.1, -0.2, 0.3, 0.25])
    assert decompose_bands(m, lam).gap == pytest.approx(2 * np.linalg.norm(lam))


def test_not_two_band():
    m = ConstantModel(np.diag([0.0, 1.0, 2.0]), 1)
    with pytest.raises(NotTwoBand):
        decompose_bands(m, [0.0])


def test_function_model_and_indices():
    m = FunctionModel(lambda lam: np.diag([-lam[0], lam[0]]), 2, 1)
    assert np.allclose(m.gradient([1.0], 0), np.diag([-1.0, 1.0]), atol=1e-6)
    with pytest.raises(IndexOutOfRange):
        m.gradient([1.0], 1)


def test_builtin_validation():
    with pytest.raises(UnknownModel):
        builtin_model("graphene")
    with pytest.raises(InvalidSetting):
        builtin_model("spin_half", {"mass": 1.0})
    with pytest.raises(InvalidSetting):
        builtin_model("dirac4_generic", {"c": [[1.0]]})


def test_band_sign():
    assert band_sign("minus") == -1 and band_sign(1) == 1 and band_sign("+") == 1


def test_regauged_and_band_coordinates(generic, ref_bands):
    W1 = unitary_group.rvs(2, random_state=0)
    W2 = unitary_group.rvs(2, random_state=1)
    g = ref_bands.regauged(W1, W2)
    assert np.allclose(g.frame_minus, ref_bands.frame_minus @ W1)
    psi = ref_bands.frame_minus[:, 0]
    assert np.allclose(g.from_band(g.to_band(psi)), psi)


def test_generic_model_is_seeded():
    a = builtin_model("dirac4_generic").evaluate(REF_LAMBDA)
    b = builtin_model("dirac4_generic").evaluate(REF_LAMBDA)
    c = builtin_model("dirac4_generic", {"coeff_seed": 8}).evaluate(REF_LAMBDA)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
    assert math.isfinite(float(np.abs(a).sum()))
