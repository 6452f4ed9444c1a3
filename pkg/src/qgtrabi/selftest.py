"""Fast invariant suite behind ``qgtrabi selftest``.

Each check computes a deviation and compares it with a tolerance. The
``tolerance_scale`` and ``inject`` hooks shrink tolerances (all of them,
or only the named check) so that failure reporting can itself be tested.
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np

from .dynamics import DrivePulse, LZSweep, evolve, lz_probability, lz_run
from .geometry import (coupling_operator, curvature, factorized_consistency, metric, pair_basis,
                       qgt_fd, qgt_resolvent)
from .models import GAMMA4, builtin_model, decompose_bands, gradient_fd
from .numerics import dominant_frequencies, hermitian_eig, propagate_step
from .protocols import plan_fidelity


@dataclass(frozen=True)
class CheckResult:
    name: str
    deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.deviation <= self.tolerance)


def _eig_residual():
    rng = np.random.default_rng(11)
    worst = 0.0
    for D in (2, 4, 8, 16):
        for _ in range(5):
            X = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
            H = X + X.conj().T
            w, V = hermitian_eig(H)
            worst = max(worst, np.max(np.abs(H @ V - V * w)) / np.max(np.abs(H)))
    return worst, 1e-9


def _step_norm():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    psi = rng.normal(size=8) + 1j * rng.normal(size=8)
    psi /= np.linalg.norm(psi)
    out = propagate_step(X + X.conj().T, psi, 0.37)
    return abs(np.linalg.norm(out) - 1), 1e-12


def _single_tone():
    Om = 1.3
    t = np.linspace(0, 40 * 2 * math.pi / Om, 4096, endpoint=False)
    pk = dominant_frequencies(np.cos(Om * t), t[1] - t[0], 1)[0]
    return abs(pk.frequency - Om) / Om, 1e-3


def _clifford():
    worst = 0.0
    for a in range(5):
        for b in range(5):
            ac = GAMMA4[a] @ GAMMA4[b] + GAMMA4[b] @ GAMMA4[a]
            worst = max(worst, np.max(np.abs(ac - 2 * (a == b) * np.eye(4))))
    return worst, 1e-14


def _gradient():
    m = builtin_model("dirac4", {"mass": 1.0})
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(5):
        lam = rng.uniform(-math.pi, math.pi, 4)
        for j in range(4):
            g = m.gradient(lam, j)
            worst = max(worst, np.max(np.abs(g - gradient_fd(m, lam, j))) / np.max(np.abs(g)))
    return worst, 1e-6


def _abelian_geometry():
    m = builtin_model("spin_half", {"delta": 1.0})
    th = 1.1
    lam = (th, 0.4)
    Q = qgt_resolvent(m, lam, -1, 0, 1).matrix[0, 0]
    dev = max(abs(qgt_resolvent(m, lam, -1, 0, 0).matrix[0, 0] - 0.25),
              abs(qgt_resolvent(m, lam, -1, 1, 1).matrix[0, 0] - math.sin(th) ** 2 / 4),
              abs(curvature(np.array([[Q]]))[0, 0] - math.sin(th) / 2))
    return dev, 1e-12


def _oracle():
    m = builtin_model("dirac4_generic")
    lam = (0.7, 0.3, 1.1, -0.4)
    Q = qgt_resolvent(m, lam, -1, 2, 2).matrix
    F = qgt_fd(m, lam, -1, 2, 2).matrix
    return np.max(np.abs(Q - F)) / np.max(np.abs(Q)), 1e-5


def _factorized():
    m = builtin_model("dirac4_generic")
    return factorized_consistency(m, (0.7, 0.3, 1.1, -0.4), 2)["max_deviation"], 1e-10


def _two_tone():
    m = builtin_model("dirac4_generic")
    lam = (0.7, 0.3, 1.1, -0.4)
    worst = 0.0
    for s in (-1, 1):
        Qjj = qgt_resolvent(m, lam, s, 2, 2).matrix
        Qkk = qgt_resolvent(m, lam, s, 3, 3).matrix
        Qjk = qgt_resolvent(m, lam, s, 2, 3)
        c = coupling_operator(m, lam, s, 2, 3, math.pi / 2).matrix
        g = coupling_operator(m, lam, s, 2, 3, 0.0).matrix
        worst = max(worst, np.max(np.abs(c - Qjj - Qkk - s * curvature(Qjk))),
                    np.max(np.abs(g - Qjj - Qkk - 2 * metric(Qjk))))
    return worst, 1e-12


def _rabi_law():
    m = builtin_model("dirac4_generic")
    lam = (0.7, 0.3, 1.1, -0.4)
    b = decompose_bands(m, lam)
    pairs = pair_basis(m, lam, 2, bands=b)
    Om = 0.02 * b.gap * math.sqrt(pairs.eigenvalues[0])
    pulse = DrivePulse.resonant(m, lam, 2, 0.02, duration=3 * math.pi / Om, bands=b)
    tr = evolve(m, lam, pulse, pairs.band_coordinates()[:, 0], mode="rwa", bands=b)
    dev = np.max(np.abs(tr.pop_plus - np.sin(Om * tr.times) ** 2))
    return dev, 1e-9


def _morris_shore():
    m = builtin_model("dirac4_generic")
    lam = (0.7, 0.3, 1.1, -0.4)
    b = decompose_bands(m, lam)
    pairs = pair_basis(m, lam, 2, bands=b)
    pulse = DrivePulse.resonant(m, lam, 2, 0.02, duration=2000.0, bands=b)
    ref = pairs.band_coordinates()
    tr = evolve(m, lam, pulse, ref[:, 0], mode="rwa", reference_frame=ref, bands=b)
    return float(np.max(tr.state_pop[:, [1, 3]])), 1e-8


def _plan_numbers():
    om = (1.0, math.pi)
    dev = max(abs(plan_fidelity(om, (0,), (1,), 3 * math.pi) - 0.973),
              abs(plan_fidelity(om, (0,), (1,), 25 * math.pi) - 0.992))
    return dev, 5e-3


def _lz_half():
    m = builtin_model("spin_half", {"delta": 1.0})
    lam = (math.pi / 2, 0.0)
    pulse = DrivePulse.resonant(m, lam, 0, 0.02)
    V = pulse.amplitude * 0.5
    alpha = math.pi * V * V / math.log(2)
    _, p = lz_run(m, lam, LZSweep.symmetric(alpha, pulse, V))
    return abs(p - 0.5), 0.02


CHECKS = {
    "eigen_residual": _eig_residual,
    "step_norm": _step_norm,
    "single_tone_peak": _single_tone,
    "clifford_algebra": _clifford,
    "gradient_vs_fd": _gradient,
    "abelian_geometry": _abelian_geometry,
    "oracle_equivalence": _oracle,
    "factorized_consistency": _factorized,
    "two_tone_identities": _two_tone,
    "rabi_frequency_law": _rabi_law,
    "morris_shore_decoupling": _morris_shore,
    "plan_fidelity_numbers": _plan_numbers,
    "lz_half_probability": _lz_half,
}


def run_selftest(tolerance_scale: float = 1.0, inject: str | None = None) -> list[CheckResult]:
    """Run every check; ``inject`` names a check whose tolerance is set to -1."""
    if inject is not None and inject not in CHECKS:
        raise KeyError(f"unknown check {inject!r}")
    out = []
    for name, fn in CHECKS.items():
        dev, tol = fn()
        tol = tol * tolerance_scale
        if name == inject:
            tol = -1.0
        out.append(CheckResult(name, float(dev), float(tol)))
    return out


def report_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  result  deviation  tolerance"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL'}    "
                     f"{r.deviation:.3e}  {r.tolerance:.3e}")
    return "\n".join(lines)


def report_hash(results: list[CheckResult]) -> str:
    return hashlib.sha256(report_table(results).encode()).hexdigest()


def timed_selftest(**kw):
    start = time.perf_counter()
    res = run_selftest(**kw)
    return res, time.perf_counter() - start
