"""Numerical kernel: Hermitian eigendecomposition, exact short-time
propagation, and spectral peak extraction.

Units throughout the package: hbar = 1, energies in a reference unit,
times in inverse energy units, frequencies angular.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.signal import get_window

from .errors import NonConvergence, NotHermitian, TooShort

HERMITIAN_RTOL = 1e-12


def as_hermitian(H, tol: float = HERMITIAN_RTOL) -> np.ndarray:
    """Validate and symmetrize a square complex matrix.

    Deviations ``max|H - H^dagger|`` up to ``tol * max|H|`` are removed by
    symmetrization; larger ones raise :class:`NotHermitian`.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise NotHermitian(f"expected a square matrix, got shape {H.shape}")
    scale = np.max(np.abs(H)) if H.size else 0.0
    dev = np.max(np.abs(H - H.conj().T)) if H.size else 0.0
    if not np.isfinite(scale):
        raise NotHermitian("matrix has non-finite entries")
    if dev > tol * scale:
        raise NotHermitian(f"Hermiticity violated: deviation {dev:.3e} vs scale {scale:.3e}")
    return 0.5 * (H + H.conj().T)


@dataclass(frozen=True)
class EigenSystem:
    values: np.ndarray   # ascending, real
    vectors: np.ndarray  # columns orthonormal

    def __iter__(self):
        return iter((self.values, self.vectors))


@dataclass(frozen=True)
class SpectralPeak:
    frequency: float   # angular
    amplitude: float   # single-sided amplitude of the tone
    resolution: float  # angular bin width 2*pi/(n*dt)


def fix_column_phase(v: np.ndarray) -> np.ndarray:
    """Rotate a vector so that its largest-magnitude entry is real positive.

    Entries within a relative 1e-8 of the maximum count as ties and the
    first one wins, which keeps the choice stable under rounding.
    """
    mag = np.abs(v)
    top = mag.max()
    if top == 0.0:
        return v
    idx = int(np.flatnonzero(mag >= top * (1.0 - 1e-8))[0])
    return v * (np.conj(v[idx]) / mag[idx])


def polar_unitary(O: np.ndarray) -> np.ndarray:
    """Unitary factor U of the polar decomposition O = U P."""
    X, _, Yh = np.linalg.svd(O)
    return X @ Yh


def canonical_basis(P: np.ndarray, rank: int) -> np.ndarray:
    """Deterministic orthonormal basis of the range of a projector.

    Pivoted QR of the projector; the basis depends only on ``P`` (not on
    whichever basis produced it). Column phases are fixed so that the
    triangular factor has a positive real diagonal.
    """
    Q, R, _ = scipy.linalg.qr(P, pivoting=True)
    Q = Q[:, :rank]
    d = np.diag(R)[:rank]
    phases = np.where(np.abs(d) > 0, d / np.where(np.abs(d) > 0, np.abs(d), 1.0), 1.0)
    return Q * phases[np.newaxis, :]


def _clusters(values: np.ndarray, tol: float) -> list[np.ndarray]:
    groups = [[0]]
    for i in range(1, len(values)):
        if values[i] - values[groups[-1][-1]] <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return [np.array(g) for g in groups]


def hermitian_eig(H, previous: np.ndarray | None = None,
                  cluster_tol: float | None = None) -> EigenSystem:
    """Eigendecomposition of a Hermitian matrix with deterministic gauge.

    Eigenvalues are ascending. Within a numerically degenerate cluster
    (consecutive values closer than ``cluster_tol``, default
    ``1e-10 * max|H|``) the columns are aligned to ``previous`` when given
    (polar factor of the overlap), otherwise replaced by the canonical basis
    of the cluster projector. Non-degenerate columns get their phase aligned
    to ``previous`` or fixed by :func:`fix_column_phase`.
    """
    H = as_hermitian(H)
    scale = float(np.max(np.abs(H))) if H.size else 0.0
    try:
        values, vectors = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(str(exc)) from exc
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(vectors))):
        raise NonConvergence("eigensolver returned non-finite output")

    if cluster_tol is None:
        cluster_tol = 1e-10 * max(scale, 1e-300)
    vectors = vectors.copy()
    for idx in _clusters(values, cluster_tol):
        block = vectors[:, idx]
        if previous is not None:
            ref = previous[:, idx]
            if len(idx) == 1:
                ov = np.vdot(block[:, 0], ref[:, 0])
                block = block * (ov / abs(ov) if abs(ov) > 0 else 1.0)
            else:
                block = block @ polar_unitary(block.conj().T @ ref)
        elif len(idx) == 1:
            block = fix_column_phase(block[:, 0])[:, np.newaxis]
        else:
            block = canonical_basis(block @ block.conj().T, len(idx))
        vectors[:, idx] = block

    eye = np.eye(H.shape[0])
    if np.max(np.abs(vectors.conj().T @ vectors - eye)) > 1e-10:
        raise NonConvergence("eigenvectors lost orthonormality")
    if np.max(np.abs(H @ vectors - vectors * values)) > 1e-9 * max(scale, 1e-300):
        raise NonConvergence("eigen-residual above tolerance")
    return EigenSystem(values, vectors)


def propagate_step(H_mid, psi, dt: float) -> np.ndarray:
    """Apply ``exp(-i H_mid dt)`` to ``psi`` via the eigendecomposition.

    ``H_mid`` is the Hamiltonian frozen at the step midpoint, so the step
    is exactly unitary.
    """
    psi = np.asarray(psi, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
        raise ValueError("state must be normalized")
    if not dt > 0:
        raise ValueError("dt must be positive")
    values, vectors = hermitian_eig(H_mid)
    return vectors @ (np.exp(-1j * values * dt) * (vectors.conj().T @ psi))


def step_unitaries(H_batch: np.ndarray, dt: float) -> np.ndarray:
    """Batched ``exp(-i H dt)`` for a stack of Hermitian matrices (K, D, D)."""
    H_batch = 0.5 * (H_batch + np.conj(np.swapaxes(H_batch, -1, -2)))
    try:
        w, v = np.linalg.eigh(H_batch)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(str(exc)) from exc
    phases = np.exp(-1j * w * dt)
    return np.einsum("kab,kb,kcb->kac", v, phases, v.conj())


def _windowed_spectrum(trace: np.ndarray, window: str):
    n = len(trace)
    x = trace - trace.mean()
    w = get_window(window, n, fftbins=True) if window != "boxcar" else np.ones(n)
    return np.abs(np.fft.rfft(x * w)), w


def dominant_frequencies(trace, dt: float, max_peaks: int = 8,
                         rel_threshold: float = 1e-3,
                         window: str = "blackmanharris") -> list[SpectralPeak]:
    """Strongest oscillation frequencies in a real time series.

    Local maxima of the windowed DFT magnitude of the mean-subtracted
    trace, refined by a parabola through the log-magnitude of the three
    bins around each maximum. Peaks weaker than ``rel_threshold`` times the
    strongest are dropped. Sorted by amplitude, strongest first.
    """
    trace = np.asarray(trace, dtype=float)
    n = len(trace)
    if n < 16:
        raise TooShort(f"trace length {n} < 16")
    if not dt > 0:
        raise ValueError("dt must be positive")
    mag, w = _windowed_spectrum(trace, window)
    resolution = 2 * np.pi / (n * dt)
    wsum = w.sum()
    top = mag[1:].max() if len(mag) > 1 else 0.0
    scale = max(np.max(np.abs(trace)), 1e-300)
    if top <= 1e-10 * wsum * scale:
        return []

    peaks = []
    for k in range(1, len(mag) - 1):
        if not (mag[k] > mag[k - 1] and mag[k] >= mag[k + 1]):
            continue
        if mag[k] < rel_threshold * top:
            continue
        a, b, c = np.log(mag[k - 1:k + 2] + 1e-300)
        denom = a - 2 * b + c
        p = 0.5 * (a - c) / denom if denom != 0 else 0.0
        height = b - 0.25 * (a - c) * p
        peaks.append(SpectralPeak((k + p) * resolution, 2 * np.exp(height) / wsum, resolution))
    peaks.sort(key=lambda pk: -pk.amplitude)
    return peaks[:max_peaks]


def spectral_floor(trace, window: str = "blackmanharris") -> float:
    """Median single-sided amplitude over all non-DC bins of the spectrum."""
    trace = np.asarray(trace, dtype=float)
    mag, w = _windowed_spectrum(trace, window)
    return float(2 * np.median(mag[1:]) / w.sum())


def shot_noise_floor(n: int, shots: int, window: str = "blackmanharris") -> float:
    """RMS single-sided amplitude of white binomial noise in one spectral bin.

    Each of the ``n`` samples is taken as an independent estimate of a
    probability from ``shots`` projective measurements, with the worst-case
    variance 1/(4 shots).
    """
    if n < 1 or shots < 1:
        raise ValueError("need n >= 1 and shots >= 1")
    w = get_window(window, n, fftbins=True) if window != "boxcar" else np.ones(n)
    sigma = 0.5 / np.sqrt(shots)
    return float(2 * sigma * np.sqrt(np.sum(w ** 2)) / w.sum())
