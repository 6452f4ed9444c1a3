"""Non-Abelian quantum geometric tensor of a degenerate two-band model.

For band s with frame {|psi_nu^s>} the tensor is

    [Q_jk^s]_{nu mu} = <d_j psi_nu^s| (1 - P_s) |d_k psi_mu^s>

evaluated here in resolvent form through the interband matrix elements of
dH/d lam_j, which needs no eigenvector derivatives. The literal
frame-derivative form is kept as an independent finite-difference oracle
(:func:`qgt_fd`).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentSingular, InvalidSetting, NotHermitian
from .models import BandDecomposition, HamiltonianModel, band_sign, decompose_bands
from .numerics import as_hermitian, canonical_basis, hermitian_eig, polar_unitary


@dataclass(frozen=True)
class QGTensor:
    band: int
    j: int
    k: int
    matrix: np.ndarray

    @property
    def metric(self) -> np.ndarray:
        return metric(self)

    @property
    def curvature(self) -> np.ndarray:
        return curvature(self)


@dataclass(frozen=True)
class QGTEigenbasis:
    eigenvalues: np.ndarray    # descending
    transform: np.ndarray      # U~ with U~ Q U~^dagger diagonal
    rotated_frame: np.ndarray  # frame @ U~^dagger, columns |psi~_nu>


@dataclass(frozen=True)
class CouplingOperator:
    band: int
    matrix: np.ndarray
    description: str


@dataclass(frozen=True)
class PairBasis:
    """QGT eigenpairs |psi~_nu^->, |psi~_nu^+> coupled one-to-one by a drive.

    ``minus``/``plus`` are N x N coordinate matrices in the band frames;
    the D-dimensional states are ``frame_minus @ minus`` etc. The partner
    states are chosen so the RWA coupling of pair nu is the real positive
    number ``A * sqrt(eigenvalues[nu])``.
    """
    eigenvalues: np.ndarray
    minus: np.ndarray
    plus: np.ndarray
    bands: BandDecomposition

    @property
    def minus_states(self) -> np.ndarray:
        return self.bands.frame_minus @ self.minus

    @property
    def plus_states(self) -> np.ndarray:
        return self.bands.frame_plus @ self.plus

    def band_coordinates(self) -> np.ndarray:
        """2N x 2N matrix whose columns are [psi~_1^- .. psi~_N^-, psi~_1^+ .. psi~_N^+]
        in band coordinates."""
        N = len(self.eigenvalues)
        out = np.zeros((2 * N, 2 * N), dtype=complex)
        out[:N, :N] = self.minus
        out[N:, N:] = self.plus
        return out


def _bands(model, lam, bands):
    return decompose_bands(model, lam) if bands is None else bands


def interband_block(model: HamiltonianModel, lam, j: int,
                    bands: BandDecomposition | None = None) -> np.ndarray:
    """C_j = <psi^-_nu| dH/d lam_j |psi^+_mu>, an N x N matrix."""
    b = _bands(model, lam, bands)
    return b.frame_minus.conj().T @ model.gradient(lam, j) @ b.frame_plus


def qgt_resolvent(model: HamiltonianModel, lam, band, j: int, k: int,
                  bands: BandDecomposition | None = None) -> QGTensor:
    """QGT of one band from interband gradient elements over the squared gap."""
    s = band_sign(band)
    b = _bands(model, lam, bands)
    Cj = interband_block(model, lam, j, b)
    Ck = Cj if k == j else interband_block(model, lam, k, b)
    if s < 0:
        Q = Cj @ Ck.conj().T
    else:
        Q = Cj.conj().T @ Ck
    return QGTensor(s, j, k, Q / b.gap ** 2)


def _aligned_frame(model, lam, band, ref):
    F = decompose_bands(model, lam).frame(band)
    O = F.conj().T @ ref
    if np.linalg.svd(O, compute_uv=False).min() < 0.5:
        raise AlignmentSingular("frame overlap nearly singular; reduce the step h")
    return F @ polar_unitary(O)


def qgt_fd(model: HamiltonianModel, lam, band, j: int, k: int, h: float = 1e-4) -> QGTensor:
    """QGT from parallel-transport aligned finite-difference frame derivatives."""
    if not 1e-6 <= h <= 1e-2:
        raise InvalidSetting(f"step h={h} outside [1e-6, 1e-2]")
    s = band_sign(band)
    lam = np.asarray(lam, dtype=float)
    ref = decompose_bands(model, lam).frame(s)

    def derivative(idx):
        e = np.zeros_like(lam)
        e[idx] = h
        up = _aligned_frame(model, lam + e, s, ref)
        down = _aligned_frame(model, lam - e, s, ref)
        return (up - down) / (2 * h)

    dj = derivative(j)
    dk = dj if k == j else derivative(k)
    complement = np.eye(ref.shape[0]) - ref @ ref.conj().T
    return QGTensor(s, j, k, dj.conj().T @ complement @ dk)


def metric(Q: QGTensor | np.ndarray) -> np.ndarray:
    M = Q.matrix if isinstance(Q, QGTensor) else np.asarray(Q)
    return 0.5 * (M + M.conj().T)


def curvature(Q: QGTensor | np.ndarray) -> np.ndarray:
    M = Q.matrix if isinstance(Q, QGTensor) else np.asarray(Q)
    return 1j * (M - M.conj().T)


def diagonalize_qgt(Q, frame: np.ndarray | None = None) -> QGTEigenbasis:
    """Eigenbasis of a Hermitian QGT or coupling matrix, eigenvalues descending.

    Degenerate eigenvalues get the canonical (pivoted) basis, so a multiple
    of the identity returns the identity transform.
    """
    M = Q.matrix if isinstance(Q, (QGTensor, CouplingOperator)) else np.asarray(Q, dtype=complex)
    try:
        M = as_hermitian(M, tol=1e-10)
    except NotHermitian as exc:
        raise NotHermitian(f"cannot diagonalize a non-Hermitian combination: {exc}") from exc
    N = M.shape[0]
    if not np.any(M):
        values, vecs = np.zeros(N), np.eye(N, dtype=complex)
    else:
        neg_values, vecs = hermitian_eig(-M)
        values = -neg_values
    if frame is None:
        frame = np.eye(N, dtype=complex)
    transform = vecs.conj().T
    return QGTEigenbasis(values, transform, frame @ vecs)


def coupling_operator(model: HamiltonianModel, lam, band, j: int, k: int | None = None,
                      phase="single", bands: BandDecomposition | None = None) -> CouplingOperator:
    """Effective coupling entering the RWA dynamics of band ``band``.

    Single tone: Q_jj. Two tones with relative phase phi:
    Q_jj + Q_kk + exp(i s phi) Q_jk + exp(-i s phi) Q_kj with s the band sign.
    """
    s = band_sign(band)
    b = _bands(model, lam, bands)
    Qjj = qgt_resolvent(model, lam, s, j, j, b).matrix
    if phase == "single" or k is None:
        return CouplingOperator(s, Qjj, f"single j={j}")
    if k == j:
        raise InvalidSetting("two-tone coupling needs distinct indices j and k")
    phi = float(phase)
    Qkk = qgt_resolvent(model, lam, s, k, k, b).matrix
    Qjk = qgt_resolvent(model, lam, s, j, k, b).matrix
    Qkj = qgt_resolvent(model, lam, s, k, j, b).matrix
    M = Qjj + Qkk + np.exp(1j * s * phi) * Qjk + np.exp(-1j * s * phi) * Qkj
    return CouplingOperator(s, M, f"two-tone j={j} k={k} phi={phi:.17g}")


def drive_block(model: HamiltonianModel, lam, j: int, k: int | None = None,
                phase: float = 0.0, bands: BandDecomposition | None = None) -> np.ndarray:
    """Interband drive block K with RWA coupling W = A K.

    K = (C_j + exp(i phi) C_k) / (E_+ - E_-); K K^dagger and K^dagger K are
    the band-minus and band-plus coupling operators.
    """
    b = _bands(model, lam, bands)
    K = interband_block(model, lam, j, b)
    if k is not None:
        K = K + np.exp(1j * phase) * interband_block(model, lam, k, b)
    return K / b.gap


def pair_basis(model: HamiltonianModel, lam, j: int, k: int | None = None,
               phase: float | None = None, bands: BandDecomposition | None = None) -> PairBasis:
    """Morris-Shore pairs of a one- or two-tone drive (eigenvalues descending)."""
    b = _bands(model, lam, bands)
    K = drive_block(model, lam, j, k, 0.0 if phase is None else phase, b)
    eig = diagonalize_qgt(K @ K.conj().T)
    q = np.clip(eig.eigenvalues, 0.0, None)
    vm = eig.rotated_frame
    N = len(q)
    vp = np.zeros((N, N), dtype=complex)
    smax = np.sqrt(q.max()) if q.max() > 0 else 0.0
    bright = np.sqrt(q) > 1e-9 * max(smax, 1e-300)
    for nu in np.flatnonzero(bright):
        vp[:, nu] = K.conj().T @ vm[:, nu] / np.sqrt(q[nu])
    dark = np.flatnonzero(~bright)
    if len(dark):
        used = vp[:, bright]
        P = np.eye(N) - used @ used.conj().T
        vp[:, dark] = canonical_basis(P, len(dark))
    return PairBasis(q, vm, vp, b)


def factorized_consistency(model: HamiltonianModel, lam, j: int,
                           bands: BandDecomposition | None = None) -> dict:
    """Check Q_jj^- = C C^dagger / gap^2 and Q_jj^+ = C^dagger C / gap^2 with
    C = <psi^-|dH_j|psi^+>, and that both bands share their eigenvalues."""
    b = _bands(model, lam, bands)
    C = interband_block(model, lam, j, b)
    dH = model.gradient(lam, j)
    proj_m = b.frame_minus @ b.frame_minus.conj().T
    proj_p = b.frame_plus @ b.frame_plus.conj().T
    # operator form through the complementary projector
    qm = b.frame_minus.conj().T @ dH @ proj_p @ dH @ b.frame_minus / b.gap ** 2
    qp = b.frame_plus.conj().T @ dH @ proj_m @ dH @ b.frame_plus / b.gap ** 2
    dev_m = float(np.max(np.abs(qm - C @ C.conj().T / b.gap ** 2)))
    dev_p = float(np.max(np.abs(qp - C.conj().T @ C / b.gap ** 2)))
    ev_m = np.linalg.eigvalsh(qm)
    ev_p = np.linalg.eigvalsh(qp)
    dev_ev = float(np.max(np.abs(ev_m - ev_p)))
    deviation = max(dev_m, dev_p, dev_ev)
    return {
        "j": j,
        "deviation_minus": dev_m,
        "deviation_plus": dev_p,
        "eigenvalue_deviation": dev_ev,
        "eigenvalues_minus": ev_m[::-1],
        "eigenvalues_plus": ev_p[::-1],
        "max_deviation": deviation,
        "passed": deviation <= 1e-10,
    }
