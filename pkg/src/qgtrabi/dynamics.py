"""Driven dynamics: lab-frame and RWA Hamiltonians, time evolution,
closed-form resonant pair rotations, and Landau-Zener sweeps.

Band coordinates order the 2N amplitudes as [band minus (N), band plus (N)]
in the frames of a :class:`~qgtrabi.models.BandDecomposition`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AsymptoticViolation, DetunedNotClosedForm, InvalidPulse, StepTooLarge
from .geometry import CouplingOperator, diagonalize_qgt, drive_block, pair_basis
from .models import BandDecomposition, HamiltonianModel, decompose_bands
from .numerics import (dominant_frequencies, polar_unitary, propagate_step, shot_noise_floor,
                       spectral_floor, step_unitaries)

DEFAULT_DT_DIVISOR = 64
DEFAULT_STRIDE = 4
MODES = ("full", "full_exact_modulation", "rwa")


@dataclass(frozen=True)
class DrivePulse:
    """Rectangular modulation lam_j -> lam_j + (2A/omega) cos(omega t)
    (plus lam_k -> lam_k + (2A/omega) cos(omega t + phase) for two tones)."""

    j: int
    amplitude: float
    omega: float
    duration: float
    k: int | None = None
    phase: float = 0.0
    ratio_max: float = 0.05
    force: bool = False

    def __post_init__(self):
        for name in ("amplitude", "omega", "duration", "phase", "ratio_max"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidPulse(f"{name} must be finite")
        if self.omega <= 0:
            raise InvalidPulse("omega must be positive")
        if self.duration <= 0:
            raise InvalidPulse("duration must be positive")
        if self.amplitude < 0:
            raise InvalidPulse("amplitude must be non-negative")
        if self.k is not None and self.k == self.j:
            raise InvalidPulse("two-tone drive needs k != j")
        if self.amplitude / self.omega > self.ratio_max and not self.force:
            raise InvalidPulse(
                f"A/omega = {self.amplitude / self.omega:.4g} exceeds ratio_max "
                f"{self.ratio_max}; pass force=True to override")

    @property
    def two_tone(self) -> bool:
        return self.k is not None

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega

    def with_duration(self, duration: float) -> "DrivePulse":
        return replace(self, duration=duration)

    def detuning(self, bands: BandDecomposition) -> float:
        return bands.gap - self.omega

    @classmethod
    def resonant(cls, model: HamiltonianModel, lam, j: int, ratio: float = 0.02,
                 duration: float = 1.0, k: int | None = None, phase: float = 0.0,
                 bands: BandDecomposition | None = None, **kw) -> "DrivePulse":
        """Drive at omega = E_+ - E_- with amplitude A = ratio * omega."""
        b = decompose_bands(model, lam) if bands is None else bands
        return cls(j=j, amplitude=ratio * b.gap, omega=b.gap, duration=duration,
                   k=k, phase=phase, **kw)


@dataclass
class PopulationTrace:
    times: np.ndarray
    pop_minus: np.ndarray
    pop_plus: np.ndarray
    state_pop: np.ndarray       # (samples, R) populations of reference columns
    norm: np.ndarray
    final_state: np.ndarray     # lab vector (full modes) or rotating-frame band coordinates (rwa)
    final_coefficients: np.ndarray  # interaction-picture band coordinates c_nu^s(T)
    mode: str
    degeneracy: int
    dt: float
    labels: list = field(default_factory=list)

    @property
    def sample_dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else self.dt

    def columns(self) -> tuple[list[str], np.ndarray]:
        """Header and data for the delimited trace file."""
        header = ["t", "pop_minus", "pop_plus", *self.labels, "norm"]
        data = np.column_stack([self.times, self.pop_minus, self.pop_plus, self.state_pop, self.norm])
        return header, data


def _state_labels(N: int, R: int) -> list[str]:
    if R == 2 * N:
        return [f"pop_state_{i + 1}m" for i in range(N)] + [f"pop_state_{i + 1}p" for i in range(N)]
    return [f"pop_state_{i + 1}" for i in range(R)]


# -- Hamiltonians -----------------------------------------------------------

def lab_hamiltonian(model: HamiltonianModel, lam, pulse: DrivePulse, t: float,
                    exact_modulation: bool = False) -> np.ndarray:
    """Lab-frame drive Hamiltonian at time t (first-order expansion by default)."""
    lam = np.asarray(lam, dtype=float)
    fj = 2 * pulse.amplitude / pulse.omega * math.cos(pulse.omega * t)
    fk = 2 * pulse.amplitude / pulse.omega * math.cos(pulse.omega * t + pulse.phase)
    if exact_modulation:
        shifted = lam.copy()
        shifted[pulse.j] += fj
        if pulse.two_tone:
            shifted[pulse.k] += fk
        return model.evaluate(shifted)
    H = model.evaluate(lam) + fj * model.gradient(lam, pulse.j)
    if pulse.two_tone:
        H = H + fk * model.gradient(lam, pulse.k)
    return H


def rwa_hamiltonian(model: HamiltonianModel, lam, pulse: DrivePulse,
                    bands: BandDecomposition | None = None):
    """Rotating-frame RWA Hamiltonian in band coordinates.

    Diagonal blocks (E_s - s omega/2) 1_N; off-diagonal block
    W = A (C_j + exp(i phase) C_k) / (E_+ - E_-) with C_j the interband
    elements of dH/d lam_j. Returns ``(H, bands)``.
    """
    b = decompose_bands(model, lam) if bands is None else bands
    N = b.degeneracy
    W = pulse.amplitude * drive_block(model, lam, pulse.j, pulse.k, pulse.phase, b)
    H = np.zeros((2 * N, 2 * N), dtype=complex)
    H[:N, :N] = (b.energy_minus + pulse.omega / 2) * np.eye(N)
    H[N:, N:] = (b.energy_plus - pulse.omega / 2) * np.eye(N)
    H[:N, N:] = W
    H[N:, :N] = W.conj().T
    return H, b


def _rotating_diag(b: BandDecomposition, omega: float) -> np.ndarray:
    N = b.degeneracy
    return np.concatenate([np.full(N, b.energy_minus + omega / 2),
                           np.full(N, b.energy_plus - omega / 2)])


# -- propagation helpers ----------------------------------------------------

def _ordered_product(U: np.ndarray) -> np.ndarray:
    """U[..., -1, :, :] @ ... @ U[..., 0, :, :] by pairwise tree reduction."""
    while U.shape[-3] > 1:
        if U.shape[-3] % 2:
            head = U[..., :-1, :, :]
            prod = head[..., 1::2, :, :] @ head[..., 0::2, :, :]
            U = np.concatenate([prod, U[..., -1:, :, :]], axis=-3)
        else:
            U = U[..., 1::2, :, :] @ U[..., 0::2, :, :]
    return U[..., 0, :, :]


def _apply_steps(U: np.ndarray, psi: np.ndarray, stride: int | None):
    """Apply step unitaries U[0], U[1], ... to psi; return the states after
    every ``stride`` steps (none if ``stride`` is None) and the final state."""
    n = len(U)
    if stride is None or stride > n:
        return [], (_ordered_product(U) @ psi if n else psi)
    groups = n // stride
    G = _ordered_product(U[:groups * stride].reshape(groups, stride, *U.shape[1:]))
    samples = []
    for g in G:
        psi = g @ psi
        samples.append(psi)
    if groups * stride < n:
        psi = _ordered_product(U[groups * stride:]) @ psi
    return samples, psi


def _evolve_full(model, lam, pulse, psi0, dt, n_steps, stride, exact_modulation, chunk=8192):
    lam = np.asarray(lam, dtype=float)
    H0 = model.evaluate(lam)
    dHj = model.gradient(lam, pulse.j)
    dHk = model.gradient(lam, pulse.k) if pulse.two_tone else None
    c = 2 * pulse.amplitude / pulse.omega

    def hamiltonians(tmid):
        if exact_modulation:
            return np.array([lab_hamiltonian(model, lam, pulse, t, True) for t in tmid])
        H = H0[None] + (c * np.cos(pulse.omega * tmid))[:, None, None] * dHj[None]
        if dHk is not None:
            H = H + (c * np.cos(pulse.omega * tmid + pulse.phase))[:, None, None] * dHk[None]
        return H

    samples = [psi0]
    psi = psi0
    per_period = pulse.period / dt
    P = int(round(per_period))
    periodic = abs(per_period - P) < 1e-9 * max(P, 1) and P % stride == 0 and n_steps >= 2 * P
    if periodic:
        # the drive repeats every P steps: reuse one period of step unitaries
        U = step_unitaries(hamiltonians((np.arange(P) + 0.5) * dt), dt)
        partial = [U[0]]
        for u in U[1:]:
            partial.append(u @ partial[-1])
        partial = np.array(partial)
        in_period = partial[stride - 1::stride]  # after stride, 2*stride, ..., P steps
        U_period = partial[-1]
        full_periods, rest = divmod(n_steps, P)
        for _ in range(full_periods):
            samples.extend(in_period @ psi)
            psi = U_period @ psi
        if rest:
            k = rest // stride
            if k:
                samples.extend(in_period[:k] @ psi)
            psi = partial[rest - 1] @ psi
        return np.array(samples), psi

    chunk = stride * max(1, chunk // stride)
    for start in range(0, n_steps, chunk):
        stop = min(start + chunk, n_steps)
        U = step_unitaries(hamiltonians((np.arange(start, stop) + 0.5) * dt), dt)
        sub, psi = _apply_steps(U, psi, stride)
        samples.extend(sub)
    return np.array(samples), psi


def evolve(model: HamiltonianModel, lam, pulse: DrivePulse, psi0, dt: float | None = None,
           mode: str = "rwa", reference_frame: np.ndarray | None = None,
           sample_stride: int = DEFAULT_STRIDE, bands: BandDecomposition | None = None,
           ) -> PopulationTrace:
    """Integrate the driven Schroedinger equation for ``pulse.duration``.

    ``psi0`` is a D-dimensional lab vector in the full modes and a 2N band
    coordinate vector in ``rwa`` mode. ``reference_frame`` holds columns in
    band coordinates whose populations are recorded (default: the band
    frame columns). Each step applies the exact exponential of the
    Hamiltonian frozen at the step midpoint.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if dt is None:
        dt = pulse.period / DEFAULT_DT_DIVISOR
    if dt > pulse.period / 16:
        raise StepTooLarge(f"dt={dt:.4g} exceeds (2 pi/omega)/16")
    psi0 = np.asarray(psi0, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1) > 1e-9:
        raise ValueError("initial state must be normalized")
    b = decompose_bands(model, lam) if bands is None else bands
    N = b.degeneracy
    n_steps = max(1, int(round(pulse.duration / dt)))
    stride = max(1, int(sample_stride))
    n_samples = n_steps // stride + 1
    times = np.arange(n_samples) * stride * dt
    T = n_steps * dt
    rot = _rotating_diag(b, pulse.omega)

    if mode == "rwa":
        H, _ = rwa_hamiltonian(model, lam, pulse, b)
        w, V = np.linalg.eigh(H)
        a0 = V.conj().T @ psi0
        states = (V @ (np.exp(-1j * np.outer(times, w)) * a0).T).T
        final = V @ (np.exp(-1j * w * T) * a0)
        coeff_states = states
        final_c = np.exp(1j * rot * T) * final
    else:
        states, final = _evolve_full(model, lam, pulse, psi0, dt, n_steps, stride,
                                     mode == "full_exact_modulation")
        basis = b.basis
        coeff_states = states @ basis.conj()
        final_c = np.exp(1j * np.concatenate([np.full(N, b.energy_minus),
                                              np.full(N, b.energy_plus)]) * T) * (basis.conj().T @ final)

    pops = np.abs(coeff_states) ** 2
    ref = np.eye(2 * N) if reference_frame is None else np.asarray(reference_frame, dtype=complex)
    state_pop = np.abs(coeff_states @ ref.conj()) ** 2
    return PopulationTrace(
        times=times,
        pop_minus=pops[:, :N].sum(axis=1),
        pop_plus=pops[:, N:].sum(axis=1),
        state_pop=state_pop,
        norm=np.linalg.norm(states, axis=1),
        final_state=final,
        final_coefficients=final_c,
        mode=mode,
        degeneracy=N,
        dt=dt,
        labels=_state_labels(N, ref.shape[1]),
    )


# -- closed form ------------------------------------------------------------

def rwa_closed_form(coupling: CouplingOperator, delta_omega: float, A: float, t, c0):
    """Pair rotations in the eigenbasis of a band-minus coupling operator.

    ``c0 = (c_minus, c_plus)`` holds interaction-picture amplitudes of the
    pairs |psi~_nu^->, |psi~_nu^+>. On resonance, with Omega_nu =
    A sqrt(q_nu)::

        c_nu^-(t) = cos(Omega_nu t) c_nu^-(0) - i sin(Omega_nu t) c_nu^+(0)
        c_nu^+(t) = cos(Omega_nu t) c_nu^+(0) - i sin(Omega_nu t) c_nu^-(0)

    A nonzero detuning falls back to exact numeric propagation of each pair
    and emits :class:`DetunedNotClosedForm`.
    """
    q = np.clip(diagonalize_qgt(coupling).eigenvalues, 0.0, None)
    omega = A * np.sqrt(q)
    cm = np.asarray(c0[0], dtype=complex)
    cp = np.asarray(c0[1], dtype=complex)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))

    if delta_omega == 0:
        cos = np.cos(np.outer(t_arr, omega))
        sin = np.sin(np.outer(t_arr, omega))
        out_m = cos * cm - 1j * sin * cp
        out_p = cos * cp - 1j * sin * cm
    else:
        warnings.warn("detuned drive: numeric pair propagation used", DetunedNotClosedForm,
                      stacklevel=2)
        out_m = np.zeros((len(t_arr), len(q)), dtype=complex)
        out_p = np.zeros_like(out_m)
        half = delta_omega / 2
        for nu, om in enumerate(omega):
            H = np.array([[-half, om], [om, half]], dtype=complex)
            r0 = np.array([cm[nu], cp[nu]])
            nrm = np.linalg.norm(r0)
            for i, ti in enumerate(t_arr):
                r = r0 if ti == 0 or nrm == 0 else nrm * propagate_step(H, r0 / nrm, ti)
                out_m[i, nu] = np.exp(-1j * half * ti) * r[0]
                out_p[i, nu] = np.exp(1j * half * ti) * r[1]
    if np.ndim(t) == 0:
        return out_m[0], out_p[0]
    return out_m, out_p


# -- Landau-Zener ------------------------------------------------------------

@dataclass(frozen=True)
class LZSweep:
    """Linear sweep H_RWA - alpha t sum_s s P_s from t_start to t_end.

    ``initial`` is either ``("minus", nu)`` / ``("plus", nu)`` naming a drive
    eigenpair member or an explicit 2N band-coordinate vector.
    """
    alpha: float
    t_start: float
    t_end: float
    pulse: DrivePulse
    initial: object = ("minus", 0)
    asymptotic_factor: float = 20.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.t_start < 0 < self.t_end):
            raise InvalidPulse("LZ sweep needs alpha > 0 and t_start < 0 < t_end")

    @classmethod
    def symmetric(cls, alpha: float, pulse: DrivePulse, coupling_strength: float,
                  window: float = 400.0, **kw) -> "LZSweep":
        """Window |alpha t_edge| = window * |V| on both sides."""
        t = window * coupling_strength / alpha
        return cls(alpha, -t, t, pulse, **kw)


def lz_probability(q: float, A: float, alpha: float) -> float:
    """Survival probability exp(-pi |V|^2 / alpha) with |V|^2 = A^2 q."""
    if q < 0 or alpha <= 0:
        raise ValueError("need q >= 0 and alpha > 0")
    return math.exp(-math.pi * A * A * q / alpha)


def _direct_rotation(H: np.ndarray, diabatic_energies: np.ndarray) -> np.ndarray:
    """Unitary taking the diabatic bands onto the adiabatic eigenspaces of H.

    The N lowest adiabatic states are matched to the band whose diabatic
    energy is lower; the rotation is the polar factor of the matched
    projector sum (closest unitary to the identity).
    """
    n = len(diabatic_energies)
    N = n // 2
    _, V = np.linalg.eigh(H)
    lo, hi = V[:, :N], V[:, N:]
    pm = np.zeros(n)
    pm[:N] = 1.0
    minus_low = diabatic_energies[:N].mean() <= diabatic_energies[N:].mean()
    band_lo = np.diag(pm if minus_low else 1 - pm)
    band_hi = np.eye(n) - band_lo
    return polar_unitary(lo @ lo.conj().T @ band_lo + hi @ hi.conj().T @ band_hi)


def default_lz_dt(alpha: float, coupling_strength: float) -> float:
    return 0.02 / max(math.sqrt(alpha), coupling_strength)


def _lz_propagate(H_rwa, sign, alpha, t0, t1, dt, psi, stride, chunk=16384):
    n_steps = max(1, int(math.ceil((t1 - t0) / dt)))
    h = (t1 - t0) / n_steps
    samples = [psi]
    if stride is not None:
        chunk = stride * max(1, chunk // stride)
    for start in range(0, n_steps, chunk):
        stop = min(start + chunk, n_steps)
        tmid = t0 + (np.arange(start, stop) + 0.5) * h
        Hs = H_rwa[None] - (alpha * tmid)[:, None, None] * np.diag(sign)[None]
        sub, psi = _apply_steps(step_unitaries(Hs, h), psi, stride)
        samples.extend(sub)
    times = t0 + np.arange(len(samples)) * (stride or 0) * h
    return times, np.array(samples), psi


def lz_run(model: HamiltonianModel, lam, sweep: LZSweep, dt: float | None = None,
           bands: BandDecomposition | None = None, sample_stride: int = 64,
           dressed_edges: bool = True, richardson: bool = True):
    """Sweep through the avoided crossing; returns ``(trace, P_stay)``.

    ``P_stay`` is the final population left in the band the state started
    in. With ``dressed_edges`` the initial state is mapped onto the
    adiabatic eigenspaces at ``t_start`` and the final state read out in the
    adiabatic eigenspaces at ``t_end``, which removes the leading
    finite-window edge error. With ``richardson`` the run is repeated on a
    window half as wide and the two survival probabilities are combined
    assuming an error quadratic in the inverse window.
    """
    b = decompose_bands(model, lam) if bands is None else bands
    N = b.degeneracy
    H_rwa, _ = rwa_hamiltonian(model, lam, sweep.pulse, b)
    W = H_rwa[:N, N:]
    strength = float(np.linalg.norm(W, 2))
    sign = np.concatenate([-np.ones(N), np.ones(N)])
    edge = min(abs(sweep.alpha * sweep.t_start), abs(sweep.alpha * sweep.t_end))
    need = sweep.asymptotic_factor * strength
    if edge < need * (2 if richardson else 1):
        raise AsymptoticViolation(
            f"sweep edge |alpha t| = {edge:.4g} below {need:.4g}"
            + (" (twice that with Richardson)" if richardson else ""))

    if isinstance(sweep.initial, tuple):
        label, nu = sweep.initial
        pairs = pair_basis(model, lam, sweep.pulse.j, sweep.pulse.k,
                           sweep.pulse.phase if sweep.pulse.two_tone else None, b)
        coords = pairs.band_coordinates()
        start_band = -1 if label in ("minus", "-", -1) else 1
        psi0 = coords[:, nu if start_band < 0 else N + nu]
    else:
        psi0 = np.asarray(sweep.initial, dtype=complex)
        psi0 = psi0 / np.linalg.norm(psi0)
        start_band = -1 if np.linalg.norm(psi0[:N]) >= np.linalg.norm(psi0[N:]) else 1
    keep = slice(0, N) if start_band < 0 else slice(N, 2 * N)
    if dt is None:
        dt = default_lz_dt(sweep.alpha, strength)

    def survival(t0, t1, stride):
        diag0 = np.real(np.diag(H_rwa)) - sweep.alpha * t0 * sign
        diag1 = np.real(np.diag(H_rwa)) - sweep.alpha * t1 * sign
        psi = psi0
        if dressed_edges:
            psi = _direct_rotation(H_rwa - sweep.alpha * t0 * np.diag(sign), diag0) @ psi
        times, states, final = _lz_propagate(H_rwa, sign, sweep.alpha, t0, t1, dt, psi, stride)
        out = final
        if dressed_edges:
            out = _direct_rotation(H_rwa - sweep.alpha * t1 * np.diag(sign), diag1).conj().T @ final
        return times, states, float(np.sum(np.abs(out[keep]) ** 2))

    times, states, p_full = survival(sweep.t_start, sweep.t_end, sample_stride)
    p_stay = p_full
    if richardson:
        _, _, p_half = survival(sweep.t_start / 2, sweep.t_end / 2, None)
        p_stay = (4 * p_full - p_half) / 3

    pops = np.abs(states) ** 2
    trace = PopulationTrace(
        times=times,
        pop_minus=pops[:, :N].sum(axis=1),
        pop_plus=pops[:, N:].sum(axis=1),
        state_pop=pops,
        norm=np.linalg.norm(states, axis=1),
        final_state=states[-1],
        final_coefficients=states[-1],
        mode="lz",
        degeneracy=N,
        dt=dt,
        labels=_state_labels(N, 2 * N),
    )
    return trace, p_stay


# -- RWA validity -------------------------------------------------------------

RABI_BAND_FRACTION = 0.25


def rabi_visibility(trace: PopulationTrace, omega: float,
                    noise_shots: int | None = 1000) -> dict:
    """Strongest slow (< omega/4) peak of P_plus(t) against the spectral floor.

    The floor is the median spectral amplitude of the trace, raised to the
    RMS shot-noise amplitude of ``noise_shots`` measurements per sample when
    given (a peak below that could not be resolved experimentally).
    """
    signal = trace.pop_plus
    peaks = [pk for pk in dominant_frequencies(signal, trace.sample_dt, max_peaks=64,
                                               rel_threshold=0.0)
             if pk.frequency < RABI_BAND_FRACTION * omega]
    floor = spectral_floor(signal)
    if noise_shots:
        floor = max(floor, shot_noise_floor(len(signal), noise_shots))
    top = peaks[0] if peaks else None
    return {
        "peak_frequency": top.frequency if top else None,
        "peak_amplitude": top.amplitude if top else 0.0,
        "floor": floor,
        "visibility": (top.amplitude / floor) if (top and floor > 0) else 0.0,
    }


def rwa_validity(model: HamiltonianModel, path, pulse: DrivePulse, psi0_band=None,
                 dt: float | None = None, noise_shots: int | None = 1000,
                 threshold: float = 0.1) -> list[dict]:
    """Full-versus-RWA band-population discrepancy along a path of points.

    At each point the same pulse (fixed omega, A, duration) drives the
    system from ``psi0_band`` (band coordinates, default the equal
    superposition of band-minus frame columns). Reports the gap, the
    discrepancy max_t |P_+^full - P_+^rwa| and the Rabi-peak visibility of
    the full-mode trace; points with discrepancy above ``threshold`` are
    flagged.
    """
    from .errors import GapCollapse

    report = []
    for lam in path:
        lam = np.asarray(lam, dtype=float)
        entry = {"lambda": lam.tolist()}
        try:
            b = decompose_bands(model, lam)
        except GapCollapse as exc:
            entry.update(gap=0.0, gap_over_omega=0.0, collapsed=True, flagged=True, message=str(exc))
            report.append(entry)
            continue
        N = b.degeneracy
        c0 = np.zeros(2 * N, dtype=complex)
        if psi0_band is None:
            c0[:N] = 1 / np.sqrt(N)
        else:
            c0[:] = psi0_band
        rwa = evolve(model, lam, pulse, c0, dt, "rwa", bands=b)
        full = evolve(model, lam, pulse, b.from_band(c0), dt, "full", bands=b)
        disc = float(np.max(np.abs(full.pop_plus - rwa.pop_plus)))
        vis = rabi_visibility(full, pulse.omega, noise_shots)
        entry.update(gap=b.gap, gap_over_omega=b.gap / pulse.omega, collapsed=False,
                     discrepancy=disc, flagged=disc > threshold, **vis)
        report.append(entry)
    return report
