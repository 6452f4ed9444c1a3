import math

import numpy as np
import pytest

from qgtrabi.dynamics import DrivePulse
from qgtrabi.errors import DegenerateRabi, IndexOutOfRange, NoPeaks, NoPlan, PlanMismatch
from qgtrabi.geometry import pair_basis
from qgtrabi.models import builtin_model, decompose_bands
from qgtrabi.protocols import (build_plan_tree, extract_metric_curvature, gauge_rows,
                               hadamard_in_subspace, ideal_amplitudes, iterate_preparation,
                               lz_extraction, measure_energy, mixing_ground_truth,
                               pair_coordinates, pair_state, phase_in_subspace, plan_fidelity,
                               plan_preparation, prepare_eigenstate, rabi_spectroscopy,
                               record_duration, tomography_mixing)

from conftest import REF_LAMBDA, synthetic_model


@pytest.fixture(scope="module")
def ref_pulse(generic, ref_bands):
    return DrivePulse.resonant(generic, REF_LAMBDA, 2, 0.02, bands=ref_bands)


def test_spectroscopy_recovers_q(generic, ref_bands, ref_pulse):
    sp = rabi_spectroscopy(generic, REF_LAMBDA, "minus", ref_pulse, bands=ref_bands)
    truth = pair_basis(generic, REF_LAMBDA, 2, bands=ref_bands).eigenvalues
    assert len(sp.inferred_q) == 2
    assert np.allclose(sp.inferred_q, truth, rtol=1e-3)
    assert np.allclose(sp.omegas, ref_pulse.amplitude * np.sqrt(sp.inferred_q))
    assert sp.basis_tag.startswith("minus:single")
    # the record covers at least 30 periods of the slowest oscillation
    assert sp.trace.times[-1] * min(sp.omegas) / (2 * math.pi) >= 29.99


def test_spectroscopy_single_pair_state(generic, ref_bands, ref_pulse):
    pairs = pair_basis(generic, REF_LAMBDA, 2, bands=ref_bands)
    sp = rabi_spectroscopy(generic, REF_LAMBDA, -1, ref_pulse, pair_state(pairs, 1, -1),
                           bands=ref_bands)
    assert len(sp.inferred_q) == 1
    assert sp.inferred_q[0] == pytest.approx(pairs.eigenvalues[1], rel=1e-3)


def test_dark_drive_has_no_peaks():
    m = builtin_model("spin_half")
    lam = (0.9, 0.0)
    p = DrivePulse.resonant(m, lam, 0, 0.0)
    assert record_duration(m, lam, p, 30) is None
    with pytest.raises(NoPeaks):
        rabi_spectroscopy(m, lam, -1, p)


def test_plan_reference_numbers():
    om = (math.pi, 1.0)
    p3 = plan_preparation(om, ((1,), (0,)), n=3)
    assert p3.T == pytest.approx(3 * math.pi)
    assert p3.predicted_fidelity == pytest.approx(0.973, abs=1e-3)
    p25 = plan_preparation(om, ((1,), (0,)), n=25)
    assert p25.predicted_fidelity == pytest.approx(0.992, abs=1e-3)
    best = plan_preparation(om, ((1,), (0,)), T_max=30 * math.pi)
    assert best.predicted_fidelity >= p25.predicted_fidelity
    assert "predicted fidelity" in p3.describe()


def test_plan_commensurate_is_exact():
    plan = plan_preparation((2.5, 1.0), ((1,), (0,)), T_max=10 * math.pi)
    assert plan.predicted_fidelity == pytest.approx(1.0, abs=1e-12)
    assert plan.T == pytest.approx(math.pi)
    n, m = ideal_amplitudes((2.5, 1.0), (1,), (0,), plan.T)
    assert n == (1,) and m == (2,)


def test_plan_failures():
    with pytest.raises(DegenerateRabi):
        plan_preparation((1.0, 1.0), ((0,), (1,)), T_max=100)
    with pytest.raises(NoPlan):
        # doubled frequency: the fast pair completes whole cycles whenever the slow one does
        plan_preparation((2.0, 1.0), ((1,), (0,)), T_max=50)
    with pytest.raises(IndexOutOfRange):
        plan_preparation((2.0, 1.0), ((2,), (0,)), T_max=50)


def test_plan_fidelity_bounds():
    rng = np.random.default_rng(0)
    for _ in range(20):
        om = rng.uniform(0.1, 2, 3)
        F = plan_fidelity(om, (0,), (1, 2), rng.uniform(1, 50))
        assert 0 <= F <= 1 + 1e-12


def test_measure_energy_modes():
    c = np.array([0.6, 0, 0, 0.8])
    recs = measure_energy(c, 2)
    assert [r.outcome for r in recs] == [-1, 1]
    assert recs[0].probability == pytest.approx(0.36)
    assert np.allclose(recs[1].post_state, [0, 0, 0, 1])
    s1 = measure_energy(c, 2, "sample", seed=7)
    s2 = measure_energy(c, 2, "sample", seed=7)
    assert len(s1) == 1 and s1[0].outcome == s2[0].outcome


def test_prepare_ratio_pi(ratio_pi_model):
    lam = np.zeros(4)
    b = decompose_bands(ratio_pi_model, lam)
    pulse = DrivePulse.resonant(ratio_pi_model, lam, 0, 0.02, bands=b)
    pairs = pair_basis(ratio_pi_model, lam, 0, bands=b)
    assert np.allclose(pairs.eigenvalues, [math.pi ** 2, 1.0])
    omegas = pulse.amplitude * np.sqrt(pairs.eigenvalues)
    psi0 = (pair_state(pairs, 0, -1) + pair_state(pairs, 1, -1)) / math.sqrt(2)
    plan = plan_preparation(omegas, ((1,), (0,)), n=3)
    res = prepare_eigenstate(ratio_pi_model, lam, pulse, psi0, plan, bands=b)
    assert res.fidelity == pytest.approx(0.973, abs=5e-3)
    assert sum(r.probability for r in res.records) == pytest.approx(1.0)
    # the upper-band branch holds only the transferred fast pair
    up = [r for r in res.records if r.outcome > 0][0]
    assert abs(np.vdot(pair_state(pairs, 0, 1), up.post_state)) ** 2 > 0.99


def test_prepare_rejects_foreign_plan(ratio_pi_model):
    lam = np.zeros(4)
    pulse = DrivePulse.resonant(ratio_pi_model, lam, 0, 0.02)
    plan = plan_preparation((0.1, 0.04), ((1,), (0,)), n=1)
    with pytest.raises(PlanMismatch):
        prepare_eigenstate(ratio_pi_model, lam, pulse, np.array([1, 0, 0, 0]), plan)


def test_iterated_preparation_n4():
    b = [0.75, 1.5, 1.0, 2.0]
    m = synthetic_model(b)
    lam = [0.0]
    bands = decompose_bands(m, lam)
    pulse = DrivePulse.resonant(m, lam, 0, 0.02, bands=bands)
    omegas = pulse.amplitude * np.asarray(sorted(b, reverse=True))
    tree = build_plan_tree(omegas, 40 * math.pi / omegas.min())
    psi0 = np.zeros(8, dtype=complex)
    psi0[:4] = 0.5
    chains = iterate_preparation(m, lam, pulse, tree, psi0, bands=bands)
    assert sum(c.probability for c in chains) == pytest.approx(1.0)
    assert sorted(c.final_pair for c in chains) == [0, 1, 2, 3]
    assert min(c.fidelity for c in chains) > 1 - 1e-6


def test_gates_act_in_subspace():
    frame = np.eye(4, dtype=complex)[:, :2]
    H = hadamard_in_subspace(frame)
    P = phase_in_subspace(frame)
    assert np.allclose(H @ H, np.eye(4))
    assert np.allclose(P[1, 1], 1j) and np.allclose(P[2:, 2:], np.eye(2))


def test_tomography_branch_exact(generic, ref_bands, ref_pulse):
    two = DrivePulse.resonant(generic, REF_LAMBDA, 2, 0.02, k=3, phase=math.pi / 2,
                              bands=ref_bands)
    for band in ("minus", "plus"):
        mix = tomography_mixing(generic, REF_LAMBDA, ref_pulse, two, bands=ref_bands, band=band)
        truth = mixing_ground_truth(generic, REF_LAMBDA, ref_pulse, two, band, ref_bands)
        assert np.allclose(mix.entries, truth, atol=1e-9)
        assert np.allclose(np.sum(mix.magnitudes ** 2, axis=1), 1)


def test_tomography_sampled(generic, ref_bands, ref_pulse):
    two = DrivePulse.resonant(generic, REF_LAMBDA, 2, 0.02, k=3, phase=math.pi / 2,
                              bands=ref_bands)
    mix = tomography_mixing(generic, REF_LAMBDA, ref_pulse, two, "sample", 10_000, 42,
                            ref_bands)
    truth = mixing_ground_truth(generic, REF_LAMBDA, ref_pulse, two, "minus", ref_bands)
    assert np.max(np.abs(mix.magnitudes - np.abs(truth))) < 0.02
    again = tomography_mixing(generic, REF_LAMBDA, ref_pulse, two, "sample", 10_000, 42,
                              ref_bands)
    assert np.array_equal(mix.entries, again.entries)


def test_gauge_rows():
    a = gauge_rows(np.array([[1j, 1], [-1, 2j]]) / math.sqrt(2))
    assert np.allclose(a[:, 0].imag, 0) and np.all(a[:, 0].real >= 0)


def test_pair_coordinates_roundtrip(generic, ref_bands):
    pairs = pair_basis(generic, REF_LAMBDA, 2, bands=ref_bands)
    cm, cp = pair_coordinates(pairs, pair_state(pairs, 1, 1))
    assert np.allclose(cm, 0) and np.allclose(cp, [0, 1])


@pytest.mark.parametrize("band", ["minus", "plus"])
def test_extract_generic(generic, ref_bands, band):
    est = extract_metric_curvature(generic, REF_LAMBDA, 2, 3, 0.02 * ref_bands.gap, band=band,
                                   bands=ref_bands)
    assert est.report["curvature"]["relative_error"] < 0.02
    assert est.report["metric"]["relative_error"] < 0.02
    assert np.allclose(est.curvature, est.curvature.conj().T)


@pytest.mark.parametrize("band,sign", [("minus", 1), ("plus", -1)])
def test_extract_spin_half_curvature(band, sign):
    m = builtin_model("spin_half")
    th = 1.1
    est = extract_metric_curvature(m, (th, 0.3), 0, 1, 0.02, band=band,
                                   curvature_phase=-math.pi / 2)
    assert est.curvature[0, 0].real == pytest.approx(sign * math.sin(th) / 2, rel=1e-4)
    assert abs(est.metric[0, 0]) < 1e-6
    assert est.report["metric"]["relative_error"] is None


def test_lz_extraction(generic, ref_bands, ref_pulse):
    q = pair_basis(generic, REF_LAMBDA, 2, bands=ref_bands).eigenvalues[0]
    V2 = ref_pulse.amplitude ** 2 * q
    fit = lz_extraction(generic, REF_LAMBDA, ref_pulse, [30 * V2, 50 * V2, 100 * V2],
                        q_reference=q, bands=ref_bands)
    assert fit.reference_deviation < 1e-3
    assert fit.residual < 1e-3
    # the linearized law is biased low at alpha = 30 |V|^2
    assert fit.q_linear < fit.q
