"""Parametric Hamiltonians H(lam) with an exact two-band degenerate
spectrum, their parameter gradients, and the band decomposition.

Gamma-matrix convention (4x4, all Hermitian, squares equal to identity,
pairwise anticommuting), with s1, s2, s3 the Pauli matrices and s0 the
2x2 identity::

    G1 = kron(s1, s1)    G2 = kron(s1, s2)    G3 = kron(s1, s3)
    G4 = kron(s2, s0)    G5 = kron(s3, s0)

Any H = sum_a d_a G_a has eigenvalues -|d|, +|d|, each twofold. Its
single-parameter QGT is always proportional to the identity, so the
generic models additionally conjugate H with a parameter-dependent
unitary U(lam) = exp(-i lam_1 K_1) ... exp(-i lam_M K_M). The
conjugation keeps the spectrum and breaks that accidental symmetry.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import (GapCollapse, IndexOutOfRange, InvalidSetting, NotTwoBand,
                     UnknownModel)
from .numerics import as_hermitian, hermitian_eig

PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
ID2 = np.eye(2, dtype=complex)

GAMMA4 = (
    np.kron(PAULI[0], PAULI[0]),
    np.kron(PAULI[0], PAULI[1]),
    np.kron(PAULI[0], PAULI[2]),
    np.kron(PAULI[1], ID2),
    np.kron(PAULI[2], ID2),
)

BUILTIN_MODELS = ("spin_half", "dirac4", "dirac4_generic", "weyl4")


def as_point(lam, param_count: int | None = None) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.ndim != 1:
        raise InvalidSetting("parameter point must be a flat vector")
    if not np.all(np.isfinite(lam)):
        raise InvalidSetting("parameter point has non-finite entries")
    if param_count is not None and len(lam) != param_count:
        raise InvalidSetting(f"expected {param_count} parameters, got {len(lam)}")
    return lam


def band_sign(band) -> int:
    """Normalize a band label ('-', 'minus', -1, ...) to -1 or +1."""
    if band in (-1, "-", "minus", "lower"):
        return -1
    if band in (1, "+", "plus", "upper"):
        return 1
    raise InvalidSetting(f"unknown band label {band!r}")


class HamiltonianModel:
    """Base class: subclasses implement ``_evaluate`` and optionally ``_gradient``."""

    name = "model"
    dim: int
    param_count: int

    @property
    def degeneracy(self) -> int:
        return self.dim // 2

    def evaluate(self, lam) -> np.ndarray:
        return as_hermitian(self._evaluate(as_point(lam, self.param_count)))

    def gradient(self, lam, j: int) -> np.ndarray:
        lam = as_point(lam, self.param_count)
        self._check_index(j)
        grad = self._gradient(lam, j)
        if grad is None:
            return gradient_fd(self, lam, j, 1e-5)
        return as_hermitian(grad)

    def _gradient(self, lam, j):
        return None

    def _evaluate(self, lam):
        raise NotImplementedError

    def _check_index(self, j):
        if not 0 <= j < self.param_count:
            raise IndexOutOfRange(f"parameter index {j} outside 0..{self.param_count - 1}")

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} D={self.dim} M={self.param_count}>"


class ConstantModel(HamiltonianModel):
    """lam-independent Hamiltonian; all geometry vanishes."""

    def __init__(self, H, param_count: int = 2, name: str = "constant"):
        self.H = as_hermitian(H)
        self.dim = self.H.shape[0]
        self.param_count = param_count
        self.name = name

    def _evaluate(self, lam):
        return self.H

    def _gradient(self, lam, j):
        return np.zeros_like(self.H)


class FunctionModel(HamiltonianModel):
    """Model from plain callables; gradient falls back to central differences."""

    def __init__(self, evaluate: Callable, dim: int, param_count: int,
                 gradient: Callable | None = None, name: str = "custom"):
        self._fn = evaluate
        self._grad_fn = gradient
        self.dim = dim
        self.param_count = param_count
        self.name = name

    def _evaluate(self, lam):
        return self._fn(lam)

    def _gradient(self, lam, j):
        return None if self._grad_fn is None else self._grad_fn(lam, j)


class CliffordModel(HamiltonianModel):
    """H = sum_a d_a(lam) Gamma_a for an anticommuting set Gamma_a."""

    def __init__(self, d: Callable, d_jacobian: Callable, gammas: Sequence[np.ndarray],
                 param_count: int, name: str):
        self.d = d
        self.d_jacobian = d_jacobian  # (len(gammas), M) array
        self.gammas = np.array(gammas)
        self.dim = self.gammas.shape[1]
        self.param_count = param_count
        self.name = name

    def _evaluate(self, lam):
        return np.tensordot(self.d(lam), self.gammas, axes=1)

    def _gradient(self, lam, j):
        return np.tensordot(self.d_jacobian(lam)[:, j], self.gammas, axes=1)


class RotatedModel(HamiltonianModel):
    """H(lam) = U(lam) H_base(lam) U(lam)^dagger with
    U(lam) = exp(-i lam_0 K_0) exp(-i lam_1 K_1) ... (ordered product)."""

    def __init__(self, base: HamiltonianModel, generators: Sequence[np.ndarray], name: str):
        if len(generators) != base.param_count:
            raise InvalidSetting("need one generator per parameter")
        self.base = base
        self.generators = [as_hermitian(K) for K in generators]
        self._eig = [np.linalg.eigh(K) for K in self.generators]
        self.dim = base.dim
        self.param_count = base.param_count
        self.name = name

    def _factors(self, lam):
        return [v @ np.diag(np.exp(-1j * x * w)) @ v.conj().T
                for x, (w, v) in zip(lam, self._eig)]

    def _unitary(self, lam):
        U = np.eye(self.dim, dtype=complex)
        for E in self._factors(lam):
            U = U @ E
        return U

    def _evaluate(self, lam):
        U = self._unitary(lam)
        return U @ self.base.evaluate(lam) @ U.conj().T

    def _gradient(self, lam, j):
        factors = self._factors(lam)
        left = np.eye(self.dim, dtype=complex)
        for E in factors[:j]:
            left = left @ E
        right = np.eye(self.dim, dtype=complex)
        for E in factors[j:]:
            right = right @ E
        U = left @ right
        dU = left @ (-1j * self.generators[j]) @ right
        B = self.base.evaluate(lam)
        dB = self.base.gradient(lam, j)
        term = dU @ B @ U.conj().T
        return term + term.conj().T + U @ dB @ U.conj().T


def gradient_fd(model: HamiltonianModel, lam, j: int, h: float = 1e-5) -> np.ndarray:
    """Central difference (H(lam + h e_j) - H(lam - h e_j)) / 2h, symmetrized."""
    if not 1e-8 <= h <= 1e-2:
        raise InvalidSetting(f"finite-difference step {h} outside [1e-8, 1e-2]")
    lam = as_point(lam, model.param_count)
    model._check_index(j)
    step = np.zeros_like(lam)
    step[j] = h
    diff = (model.evaluate(lam + step) - model.evaluate(lam - step)) / (2 * h)
    return 0.5 * (diff + diff.conj().T)


# -- builtin gallery --------------------------------------------------------

def _spin_half(delta: float) -> CliffordModel:
    def d(lam):
        th, ph = lam
        return 0.5 * delta * np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])

    def jac(lam):
        th, ph = lam
        return 0.5 * delta * np.array([
            [np.cos(th) * np.cos(ph), -np.sin(th) * np.sin(ph)],
            [np.cos(th) * np.sin(ph), np.sin(th) * np.cos(ph)],
            [-np.sin(th), 0.0],
        ])

    return CliffordModel(d, jac, PAULI, 2, "spin_half")


def _dirac4(mass: float) -> CliffordModel:
    def d(lam):
        return np.concatenate([np.sin(lam), [mass + np.cos(lam).sum()]])

    def jac(lam):
        return np.vstack([np.diag(np.cos(lam)), -np.sin(lam)[np.newaxis, :]])

    return CliffordModel(d, jac, GAMMA4, 4, "dirac4")


def _trig_clifford(c: np.ndarray, e: np.ndarray, name: str) -> CliffordModel:
    """d_a(lam) = sum_i c_ai sin(lam_i) + e_ai cos(lam_i)."""

    def d(lam):
        return c @ np.sin(lam) + e @ np.cos(lam)

    def jac(lam):
        return c * np.cos(lam)[np.newaxis, :] - e * np.sin(lam)[np.newaxis, :]

    return CliffordModel(d, jac, GAMMA4, c.shape[1], name)


def _linear_clifford(mass: float) -> CliffordModel:
    def d(lam):
        return np.concatenate([lam, [mass]])

    def jac(lam):
        return np.vstack([np.eye(4), np.zeros((1, 4))])

    return CliffordModel(d, jac, GAMMA4, 4, "weyl4")


def random_generators(seed: int, count: int, dim: int, scale: float) -> list[np.ndarray]:
    """Seeded Hermitian generators with spectral norm ``scale``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        X = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        K = 0.5 * (X + X.conj().T)
        out.append(scale * K / np.linalg.norm(K, 2))
    return out


GENERIC_SEED = 7
GENERIC_ROTATION_SCALE = 0.6


def _generic_coefficients(seed: int):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(5, 4)), rng.normal(size=(5, 4))


def _matrix_setting(settings, key, shape):
    arr = np.asarray(settings[key], dtype=float)
    if arr.shape != shape:
        raise InvalidSetting(f"{key} must have shape {shape}, got {arr.shape}")
    return arr


def _generators_setting(settings, count, dim):
    re = np.asarray(settings["generators"], dtype=float)
    im = np.asarray(settings.get("generators_imag", np.zeros_like(re)), dtype=float)
    if re.shape != (count, dim, dim) or im.shape != re.shape:
        raise InvalidSetting(f"generators must have shape {(count, dim, dim)}")
    gens = re + 1j * im
    for K in gens:
        if np.max(np.abs(K - K.conj().T)) > 1e-12 * max(np.max(np.abs(K)), 1.0):
            raise InvalidSetting("generators must be Hermitian")
    return list(gens)


_ALLOWED = {
    "spin_half": {"delta"},
    "dirac4": {"mass"},
    "dirac4_generic": {"coeff_seed", "c", "e", "rotation_seed", "rotation_scale",
                       "generators", "generators_imag"},
    "weyl4": {"mass", "rotation_seed", "rotation_scale", "generators", "generators_imag"},
}


def builtin_model(name: str, settings: dict | None = None) -> HamiltonianModel:
    """Construct one of the gallery models.

    ``spin_half``       D=2, M=2, H = (delta/2) n(theta, phi) . sigma
    ``dirac4``          D=4, M=4, d = (sin lam_1..4, mass + sum cos lam_i)
    ``dirac4_generic``  trig Clifford model with seeded coefficients, conjugated
                        by seeded generators
    ``weyl4``           d = (lam_1..4, mass) near the gap closing at lam=0,
                        conjugated like ``dirac4_generic``
    """
    settings = dict(settings or {})
    if name not in _ALLOWED:
        raise UnknownModel(f"unknown model {name!r}; choose from {', '.join(BUILTIN_MODELS)}")
    extra = set(settings) - _ALLOWED[name]
    if extra:
        raise InvalidSetting(f"unknown settings for {name}: {sorted(extra)}")
    for key, val in settings.items():
        if isinstance(val, (int, float)) and not np.isfinite(val):
            raise InvalidSetting(f"setting {key} is not finite")

    if name == "spin_half":
        delta = float(settings.get("delta", 1.0))
        if delta <= 0:
            raise InvalidSetting("delta must be positive")
        return _spin_half(delta)
    if name == "dirac4":
        return _dirac4(float(settings.get("mass", 1.0)))

    seed = int(settings.get("rotation_seed", settings.get("coeff_seed", GENERIC_SEED)))
    scale = float(settings.get("rotation_scale", GENERIC_ROTATION_SCALE))
    if "generators" in settings:
        gens = _generators_setting(settings, 4, 4)
    else:
        gens = random_generators(seed + 1000, 4, 4, scale)

    if name == "dirac4_generic":
        c, e = _generic_coefficients(int(settings.get("coeff_seed", GENERIC_SEED)))
        if "c" in settings:
            c = _matrix_setting(settings, "c", (5, 4))
        if "e" in settings:
            e = _matrix_setting(settings, "e", (5, 4))
        return RotatedModel(_trig_clifford(c, e, "dirac4_generic_base"), gens, "dirac4_generic")
    return RotatedModel(_linear_clifford(float(settings.get("mass", 0.0))), gens, "weyl4")


# -- band decomposition -----------------------------------------------------

@dataclass(frozen=True)
class BandDecomposition:
    energy_minus: float
    energy_plus: float
    frame_minus: np.ndarray  # D x N
    frame_plus: np.ndarray   # D x N
    grouping_tol: float
    hamiltonian: np.ndarray = field(repr=False)

    @property
    def gap(self) -> float:
        return self.energy_plus - self.energy_minus

    @property
    def degeneracy(self) -> int:
        return self.frame_minus.shape[1]

    @property
    def dim(self) -> int:
        return self.frame_minus.shape[0]

    def frame(self, band) -> np.ndarray:
        return self.frame_minus if band_sign(band) < 0 else self.frame_plus

    def energy(self, band) -> float:
        return self.energy_minus if band_sign(band) < 0 else self.energy_plus

    @property
    def basis(self) -> np.ndarray:
        """D x 2N matrix [frame_minus | frame_plus] defining band coordinates."""
        return np.hstack([self.frame_minus, self.frame_plus])

    def regauged(self, w_minus: np.ndarray, w_plus: np.ndarray) -> "BandDecomposition":
        """Same bands, frames rotated by N x N unitaries (frame -> frame @ W)."""
        return replace(self, frame_minus=self.frame_minus @ w_minus,
                       frame_plus=self.frame_plus @ w_plus)

    def to_band(self, psi) -> np.ndarray:
        return self.basis.conj().T @ np.asarray(psi, dtype=complex)

    def from_band(self, coeffs) -> np.ndarray:
        return self.basis @ np.asarray(coeffs, dtype=complex)


def decompose_bands(model: HamiltonianModel, lam, grouping_tol: float | None = None,
                    previous: BandDecomposition | None = None) -> BandDecomposition:
    """Split the spectrum of H(lam) into two N-fold degenerate bands."""
    H = model.evaluate(lam)
    D = H.shape[0]
    if D % 2:
        raise NotTwoBand(f"dimension {D} is odd")
    N = D // 2
    scale = float(np.max(np.abs(H)))
    if grouping_tol is None:
        grouping_tol = 1e-8 * scale
    prev = None if previous is None else previous.basis
    values, vectors = hermitian_eig(H, previous=prev, cluster_tol=grouping_tol)
    lower, upper = values[:N], values[N:]
    gap = upper[0] - lower[-1]
    if scale == 0.0 or gap <= 10 * grouping_tol:
        if scale == 0.0:
            raise GapCollapse("Hamiltonian vanishes: the bands touch (gap closed)")
        raise GapCollapse(f"band gap {gap:.3e} below {10 * grouping_tol:.3e}: the bands touch")
    if lower[-1] - lower[0] > grouping_tol or upper[-1] - upper[0] > grouping_tol:
        raise NotTwoBand(f"eigenvalues {values} do not form two {N}-fold degenerate bands")
    return BandDecomposition(float(lower.mean()), float(upper.mean()),
                             vectors[:, :N], vectors[:, N:], grouping_tol, H)
