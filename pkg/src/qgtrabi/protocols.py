"""Measurement protocols built on driven dynamics.

* Rabi spectroscopy: QGT eigenvalues from the population oscillation
  frequencies of a resonant drive.
* Eigenstate preparation: a pulse whose duration is (approximately) an
  integer number of half Rabi cycles for one set of pairs and a
  half-integer number for the other, followed by an energy measurement.
* Band-mixing tomography: overlaps between the eigenbases of two drives
  from measured transfer probabilities, with an ideal in-subspace Hadamard
  gate supplying the relative phases.
* Metric and curvature extraction from one- and two-tone spectroscopy.
* Landau-Zener extraction of a QGT eigenvalue from the survival
  probability of linear sweeps.

States handed to and returned from the protocols are 2N band
coordinates (see :class:`~qgtrabi.models.BandDecomposition`).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import DEFAULT_STRIDE, DrivePulse, LZSweep, PopulationTrace, evolve, lz_run
from .errors import (DegenerateRabi, InconsistentBases, IndexOutOfRange, InvalidSetting,
                     NoPeaks, NoPlan, PlanMismatch)
from .geometry import PairBasis, coupling_operator, pair_basis, qgt_resolvent
from .models import BandDecomposition, HamiltonianModel, band_sign, decompose_bands
from .numerics import SpectralPeak, dominant_frequencies

DEFAULT_RECORD_PERIODS = 30.0
PEAK_REL_THRESHOLD = 1e-4
MIN_WEIGHT = 1e-3
DEFAULT_STEPS_PER_PERIOD_MIN = 16


def _bands(model, lam, bands):
    return decompose_bands(model, lam) if bands is None else bands


def _pairs_for(model, lam, pulse: DrivePulse, bands) -> PairBasis:
    return pair_basis(model, lam, pulse.j, pulse.k,
                      pulse.phase if pulse.two_tone else None, bands)


def _basis_tag(pulse: DrivePulse, band: int) -> str:
    side = "minus" if band < 0 else "plus"
    if pulse.two_tone:
        return f"{side}:two-tone j={pulse.j} k={pulse.k} phi={pulse.phase:.17g}"
    return f"{side}:single j={pulse.j}"


def pair_coordinates(pairs: PairBasis, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Amplitudes of a band-coordinate state on |psi~_nu^-> and |psi~_nu^+>."""
    N = len(pairs.eigenvalues)
    c = np.asarray(c, dtype=complex)
    return pairs.minus.conj().T @ c[:N], pairs.plus.conj().T @ c[N:]


def pair_state(pairs: PairBasis, nu: int, band) -> np.ndarray:
    """Band coordinates of the pair member |psi~_nu^s>."""
    N = len(pairs.eigenvalues)
    if not 0 <= nu < N:
        raise IndexOutOfRange(f"pair index {nu} outside 0..{N - 1}")
    return pairs.band_coordinates()[:, nu if band_sign(band) < 0 else N + nu]


# -- spectroscopy -------------------------------------------------------------

@dataclass(frozen=True)
class RabiSpectrum:
    peaks: list            # SpectralPeak of the population trace, by frequency descending
    omegas: np.ndarray     # amplitude Rabi frequencies (half the population frequencies)
    inferred_q: np.ndarray  # (Omega / A)^2, descending
    drive: DrivePulse
    basis_tag: str
    trace: PopulationTrace | None = field(default=None, repr=False)


def _coupling_scale(model, lam, pulse: DrivePulse, b) -> float:
    """Largest single-tone coupling eigenvalue among the driven indices."""
    idx = (pulse.j, pulse.k) if pulse.two_tone else (pulse.j,)
    return max(float(pair_basis(model, lam, i, bands=b).eigenvalues.max()) for i in idx)


def record_duration(model: HamiltonianModel, lam, pulse: DrivePulse, periods: float,
                    bands: BandDecomposition | None = None, weights=None) -> float | None:
    """Pulse length covering ``periods`` cycles of the slowest expected Rabi
    oscillation, or None when the drive couples no pair.

    Pairs whose eigenvalue is below 1e-3 of the largest (or below 1e-10 of
    the single-tone scale), or whose weight in the initial state is below
    1e-3, are ignored.
    """
    b = _bands(model, lam, bands)
    q = _pairs_for(model, lam, pulse, b).eigenvalues
    scale = _coupling_scale(model, lam, pulse, b)
    keep = (q > 1e-3 * q.max()) & (q > 1e-10 * scale)
    if weights is not None:
        keep &= np.asarray(weights) >= MIN_WEIGHT
    if pulse.amplitude == 0 or not np.any(keep):
        return None
    omega_min = pulse.amplitude * math.sqrt(q[keep].min())
    return periods * 2 * math.pi / omega_min


def rabi_spectroscopy(model: HamiltonianModel, lam, band, pulse: DrivePulse, psi0=None,
                      mode: str = "rwa", record_len: float | None = DEFAULT_RECORD_PERIODS,
                      bands: BandDecomposition | None = None, retune: bool = True,
                      dt: float | None = None, sample_stride: int = DEFAULT_STRIDE) -> RabiSpectrum:
    """Rabi frequencies and coupling eigenvalues from a resonant drive.

    The pulse is retuned to the band gap unless ``retune`` is False. The
    record length is ``record_len`` periods of the slowest expected Rabi
    oscillation (``None`` keeps ``pulse.duration``). ``psi0`` defaults to
    the equal superposition of the frame columns of ``band``.
    Peaks above a quarter of the drive frequency (micromotion) are
    discarded; at most N peaks are kept.
    """
    s = band_sign(band)
    b = _bands(model, lam, bands)
    N = b.degeneracy
    if retune and pulse.omega != b.gap:
        pulse = replace(pulse, omega=b.gap)
    if psi0 is None:
        c0 = np.zeros(2 * N, dtype=complex)
        c0[(slice(0, N) if s < 0 else slice(N, 2 * N))] = 1 / math.sqrt(N)
    else:
        c0 = np.asarray(psi0, dtype=complex)
        c0 = c0 / np.linalg.norm(c0)
    if record_len is not None:
        pairs = _pairs_for(model, lam, pulse, b)
        cm, cp = pair_coordinates(pairs, c0)
        weights = np.abs(cm) ** 2 + np.abs(cp) ** 2
        duration = record_duration(model, lam, pulse, record_len, b, weights)
        if duration is None:
            raise NoPeaks("the drive couples no populated pair (zero amplitude or dark state)")
        pulse = pulse.with_duration(duration)

    start = c0 if mode == "rwa" else b.from_band(c0)
    trace = evolve(model, lam, pulse, start, dt=dt, mode=mode, sample_stride=sample_stride, bands=b)
    found = dominant_frequencies(trace.pop_plus, trace.sample_dt, max_peaks=64,
                                 rel_threshold=PEAK_REL_THRESHOLD)
    slow = [pk for pk in found if pk.frequency < 0.25 * pulse.omega]
    if not slow:
        raise NoPeaks("population trace shows no Rabi oscillation")
    slow = sorted(slow[:N], key=lambda pk: -pk.frequency)
    omegas = np.array([pk.frequency / 2 for pk in slow])
    q = (omegas / pulse.amplitude) ** 2
    return RabiSpectrum(slow, omegas, q, pulse, _basis_tag(pulse, s), trace)


# -- preparation planning ---------------------------------------------------------

@dataclass(frozen=True)
class PreparationPlan:
    T: float
    n: tuple           # integer half-cycle counts of the even set
    m: tuple           # half-integer offsets of the odd set (Omega T ~ (m + 1/2) pi)
    even: tuple        # pair indices ending in their initial band
    odd: tuple         # pair indices transferred to the other band
    predicted_fidelity: float
    omegas: tuple
    weights: tuple
    reference: int     # pair whose half period sets the grid
    grid_index: int    # T = grid_index * pi / omegas[reference] (+ pi/2 for an odd reference)

    def describe(self) -> str:
        return (f"T = {self.T:.10g} (grid index {self.grid_index} of pair {self.reference}); "
                f"even {list(self.even)} n = {list(self.n)}; odd {list(self.odd)} m = {list(self.m)}; "
                f"predicted fidelity {self.predicted_fidelity:.6f}")


def _normalize_partition(partition, count):
    if isinstance(partition, dict):
        even, odd = tuple(partition.get("even", ())), tuple(partition.get("odd", ()))
    elif len(partition) == 2 and all(isinstance(p, (list, tuple)) for p in partition):
        even, odd = tuple(partition[0]), tuple(partition[1])
    else:
        labels = list(partition)
        if len(labels) != count:
            raise InvalidSetting("partition needs one label per frequency")
        even = tuple(i for i, lab in enumerate(labels) if lab == "even")
        odd = tuple(i for i, lab in enumerate(labels) if lab == "odd")
        if len(even) + len(odd) != count:
            raise InvalidSetting("partition labels must be 'even' or 'odd'")
    even = tuple(int(i) for i in even)
    odd = tuple(int(i) for i in odd)
    if set(even) & set(odd):
        raise InvalidSetting("a pair cannot be both even and odd")
    for i in even + odd:
        if not 0 <= i < count:
            raise IndexOutOfRange(f"pair index {i} outside 0..{count - 1}")
    if not even + odd:
        raise InvalidSetting("empty partition")
    return even, odd


def ideal_amplitudes(omegas, even, odd, T):
    """Integers and signed target amplitudes of the ideal pair rotations.

    An even pair ideally returns with amplitude (-1)^n, n = round(Omega T/pi);
    an odd pair ideally transfers with amplitude -i (-1)^m,
    m = round(Omega T/pi - 1/2).
    """
    n = tuple(int(round(omegas[i] * T / math.pi)) for i in even)
    m = tuple(int(round(omegas[i] * T / math.pi - 0.5)) for i in odd)
    return n, m


def plan_fidelity(omegas, even, odd, T, weights=None) -> float:
    """|<Psi(T)|Psi_target>|^2 for an initial state with pair weights ``weights``
    (default equal) and the ideally rotated target."""
    idx = even + odd
    if weights is None:
        weights = np.full(len(omegas), 1.0 / len(idx))
    n, m = ideal_amplitudes(omegas, even, odd, T)
    total = 0.0
    for i, ni in zip(even, n):
        total += weights[i] * math.cos(omegas[i] * T) * (-1) ** ni
    for i, mi in zip(odd, m):
        total += weights[i] * math.sin(omegas[i] * T) * (-1) ** mi
    return total ** 2


def plan_preparation(omegas, partition, T_max: float | None = None, tol: float = 1e-9,
                     n=None, weights=None) -> PreparationPlan:
    """Pulse duration for preparing QGT eigenstates by measurement.

    Candidate durations form the grid T = n pi / Omega_ref with Omega_ref the
    first even pair (or (n + 1/2) pi / Omega_ref with the first odd pair when
    the even set is empty), n = 1 .. floor(T_max Omega_ref / pi) or the
    explicit integers ``n``. The returned T maximizes the overlap between
    the rotated state and the ideally rotated target (see
    :func:`plan_fidelity`); ties go to the shortest pulse. Longer pulses
    allow better approximations of incommensurate frequency ratios.
    """
    omegas = np.asarray(omegas, dtype=float)
    if np.any(~np.isfinite(omegas)) or np.any(omegas <= 0):
        raise InvalidSetting("Rabi frequencies must be positive and finite")
    even, odd = _normalize_partition(partition, len(omegas))
    used = omegas[list(even + odd)]
    srt = np.sort(used)
    if len(srt) > 1 and np.any(np.diff(srt) <= tol * srt.max()):
        raise DegenerateRabi("Rabi frequencies are not distinct; pairs cannot be separated")
    if weights is None:
        w = np.zeros(len(omegas))
        w[list(even + odd)] = 1.0 / len(even + odd)
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w[list(even + odd)].sum()

    ref = even[0] if even else odd[0]
    offset = 0.0 if even else 0.5
    if n is None:
        if T_max is None:
            raise InvalidSetting("need T_max or explicit grid integers n")
        top = int(math.floor(T_max * omegas[ref] / math.pi - offset))
        candidates = range(1 if even else 0, top + 1)
    else:
        candidates = [int(n)] if np.ndim(n) == 0 else [int(x) for x in n]
    best = None
    for cand in candidates:
        T = (cand + offset) * math.pi / omegas[ref]
        if T <= 0:
            continue
        F = plan_fidelity(omegas, even, odd, T, w)
        if best is None or F > best[1] + 1e-12:
            best = (cand, F, T)
    if best is None:
        raise NoPlan("no admissible pulse duration within T_max")
    cand, F, T = best
    if F < 0.5:
        raise NoPlan(f"best predicted fidelity {F:.4f} < 0.5 for partition even={even} odd={odd}")
    nn, mm = ideal_amplitudes(omegas, even, odd, T)
    return PreparationPlan(T, nn, mm, even, odd, float(min(F, 1.0)), tuple(omegas.tolist()),
                           tuple(w.tolist()), ref, cand)


# -- measurement ------------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementRecord:
    outcome: int                 # -1 for E_-, +1 for E_+
    probabilities: tuple         # (p_minus, p_plus)
    post_state: np.ndarray       # band coordinates, normalized
    rng_seed: object             # integer seed or "deterministic-branch"
    probability: float           # probability of this outcome
    fidelity: float | None = None  # overlap with the branch target, if defined


def measure_energy(c, degeneracy: int, measure_mode: str = "branch",
                   rng: np.random.Generator | None = None, seed=None) -> list[MeasurementRecord]:
    """Projective band measurement of band coordinates ``c``.

    ``branch`` returns both outcomes with their exact probabilities;
    ``sample`` draws one outcome from ``rng``.
    """
    c = np.asarray(c, dtype=complex)
    N = degeneracy
    pm = float(np.sum(np.abs(c[:N]) ** 2))
    pp = float(np.sum(np.abs(c[N:]) ** 2))
    total = pm + pp
    pm, pp = pm / total, pp / total
    outcomes = []
    if measure_mode == "branch":
        chosen = [o for o, p in ((-1, pm), (1, pp)) if p > 0]
        tag = "deterministic-branch"
    elif measure_mode == "sample":
        rng = np.random.default_rng(seed) if rng is None else rng
        chosen = [1 if rng.random() < pp else -1]
        tag = seed
    else:
        raise InvalidSetting("measure_mode must be 'branch' or 'sample'")
    for o in chosen:
        post = np.zeros_like(c)
        part = slice(0, N) if o < 0 else slice(N, 2 * N)
        post[part] = c[part]
        post = post / np.linalg.norm(post)
        outcomes.append(MeasurementRecord(o, (pm, pp), post, tag, pm if o < 0 else pp))
    return outcomes


# -- preparation ------------------------------------------------------------------

@dataclass(frozen=True)
class PreparationResult:
    plan: PreparationPlan
    records: list               # MeasurementRecord per outcome (or the sampled one)
    fidelity: float             # |<Psi_f|Psi_t>|^2 before the measurement
    averaged_fidelity: float    # sum over branches of p * conditional fidelity
    final_state: np.ndarray     # band coordinates before the measurement
    target: np.ndarray          # ideally rotated target, band coordinates
    pairs: PairBasis


def _ideal_target(pairs: PairBasis, c0, plan: PreparationPlan) -> np.ndarray:
    N = len(pairs.eigenvalues)
    cm, cp = pair_coordinates(pairs, c0)
    tm = np.zeros(N, dtype=complex)
    tp = np.zeros(N, dtype=complex)
    for i, ni in zip(plan.even, plan.n):
        tm[i] = (-1) ** ni * cm[i]
        tp[i] = (-1) ** ni * cp[i]
    for i, mi in zip(plan.odd, plan.m):
        tp[i] = -1j * (-1) ** mi * cm[i]
        tm[i] = -1j * (-1) ** mi * cp[i]
    return np.concatenate([pairs.minus @ tm, pairs.plus @ tp])


def _check_plan(plan: PreparationPlan, pairs: PairBasis, A: float, rel: float = 0.05):
    expected = A * np.sqrt(np.clip(pairs.eigenvalues, 0.0, None))
    for i in plan.even + plan.odd:
        if i >= len(expected):
            raise PlanMismatch(f"plan refers to pair {i}, model has {len(expected)}")
        have, want = plan.omegas[i], expected[i]
        if abs(have - want) > rel * max(want, 1e-300):
            raise PlanMismatch(f"plan frequency {have:.6g} for pair {i} differs from the "
                               f"model value {want:.6g} by more than {rel:.0%}")


def prepare_eigenstate(model: HamiltonianModel, lam, pulse_template: DrivePulse, psi0,
                       plan: PreparationPlan, measure_mode: str = "branch", seed=None,
                       mode: str = "rwa", bands: BandDecomposition | None = None,
                       rng: np.random.Generator | None = None) -> PreparationResult:
    """Pulse for ``plan.T`` then measure the energy.

    ``psi0`` is in band coordinates; the pulse is retuned to resonance.
    Branch records carry the fidelity of the post-measurement state with
    the normalized restriction of the ideal target to that band.
    """
    b = _bands(model, lam, bands)
    N = b.degeneracy
    pulse = replace(pulse_template, omega=b.gap, duration=plan.T)
    pairs = _pairs_for(model, lam, pulse, b)
    _check_plan(plan, pairs, pulse.amplitude)
    c0 = np.asarray(psi0, dtype=complex)
    c0 = c0 / np.linalg.norm(c0)
    start = c0 if mode == "rwa" else b.from_band(c0)
    # dt divides T exactly so that the pulse ends at plan.T
    steps = max(DEFAULT_STEPS_PER_PERIOD_MIN, int(math.ceil(plan.T / (pulse.period / 64))))
    trace = evolve(model, lam, pulse, start, dt=plan.T / steps, mode=mode, bands=b,
                   sample_stride=max(1, steps // 4096))
    cf = trace.final_coefficients
    target = _ideal_target(pairs, c0, plan)
    fidelity = float(abs(np.vdot(cf, target)) ** 2)

    records = []
    averaged = 0.0
    for rec in measure_energy(cf, N, measure_mode, rng=rng, seed=seed):
        part = slice(0, N) if rec.outcome < 0 else slice(N, 2 * N)
        t = np.zeros_like(target)
        t[part] = target[part]
        nt = np.linalg.norm(t)
        F = float(abs(np.vdot(t / nt, rec.post_state)) ** 2) if nt > 0 else 0.0
        records.append(replace(rec, fidelity=F))
        averaged += rec.probability * F
    if measure_mode == "sample":
        averaged = records[0].fidelity
    return PreparationResult(plan, records, fidelity, float(averaged), cf, target, pairs)



# -- iterated preparation ---------------------------------------------------------

def build_plan_tree(omegas, T_max: float, subset=None, weights=None) -> dict:
    """Plans for splitting every reachable set of pairs down to single pairs.

    Returns a mapping from frozenset of pair indices to the chosen
    :class:`PreparationPlan`. Each set is split by the bipartition whose
    plan fidelity times the worse of its two subtrees' scores is largest.
    """
    omegas = np.asarray(omegas, dtype=float)
    subset = tuple(range(len(omegas))) if subset is None else tuple(subset)
    memo: dict = {}

    def solve(S):
        if len(S) == 1:
            return 1.0, {}
        if S in memo:
            return memo[S]
        best = None
        items = sorted(S)
        for r in range(1, len(items)):
            for even in itertools.combinations(items, r):
                odd = tuple(i for i in items if i not in even)
                try:
                    plan = plan_preparation(omegas, (even, odd), T_max, weights=None)
                except (NoPlan, DegenerateRabi):
                    continue
                s_even, t_even = solve(frozenset(even))
                s_odd, t_odd = solve(frozenset(odd))
                score = plan.predicted_fidelity * min(s_even, s_odd)
                if best is None or score > best[0] + 1e-12:
                    best = (score, {frozenset(S): plan, **t_even, **t_odd})
        if best is None:
            raise NoPlan(f"no admissible split of pairs {items}")
        memo[S] = best
        return best

    return solve(frozenset(subset))[1]


@dataclass(frozen=True)
class PreparationChain:
    records: list          # one MeasurementRecord per round
    plans: list
    probability: float     # joint probability of this measurement sequence
    final_pair: int
    final_band: int
    fidelity: float        # |<psi~_final|post>|^2


def iterate_preparation(model: HamiltonianModel, lam, pulse_template: DrivePulse,
                        plan_tree: dict, psi0, measure_mode: str = "branch", seed=None,
                        mode: str = "rwa", bands: BandDecomposition | None = None,
                        max_degeneracy: int = 4) -> list[PreparationChain]:
    """Repeat pulse and measurement until a single eigenpair remains.

    After each measurement the state lies in one band and in the span of
    the pairs of the corresponding set, which the next round splits
    further. ``branch`` mode follows every outcome and returns one chain per
    leaf (probabilities sum to one); ``sample`` mode follows one seeded path.
    """
    b = _bands(model, lam, bands)
    N = b.degeneracy
    if N > max_degeneracy:
        raise InvalidSetting(f"iterated preparation supports N <= {max_degeneracy}")
    pulse = replace(pulse_template, omega=b.gap)
    pairs = _pairs_for(model, lam, pulse, b)
    rng = np.random.default_rng(seed) if measure_mode == "sample" else None
    c0 = np.asarray(psi0, dtype=complex)
    c0 = c0 / np.linalg.norm(c0)
    cm, cp = pair_coordinates(pairs, c0)
    weights = np.abs(cm) ** 2 + np.abs(cp) ** 2
    active = frozenset(int(i) for i in np.flatnonzero(weights > 1e-12))
    chains = []

    def run(c, S, records, plans, prob):
        if len(S) == 1:
            (nu,) = tuple(S)
            band = -1 if np.linalg.norm(c[:N]) >= np.linalg.norm(c[N:]) else 1
            F = float(abs(np.vdot(pair_state(pairs, nu, band), c)) ** 2)
            chains.append(PreparationChain(records, plans, prob, nu, band, F))
            return
        plan = plan_tree.get(S)
        if plan is None:
            raise NoPlan(f"plan tree has no entry for pairs {sorted(S)}")
        res = prepare_eigenstate(model, lam, pulse, c, plan, measure_mode, mode=mode,
                                 bands=b, rng=rng)
        start_band = -1 if np.linalg.norm(c[:N]) >= np.linalg.norm(c[N:]) else 1
        for rec in res.records:
            stayed = rec.outcome == start_band
            nxt = frozenset(plan.even if stayed else plan.odd) & S
            run(rec.post_state, nxt, records + [rec], plans + [plan], prob * rec.probability)

    run(c0, active, [], [], 1.0)
    return chains


# -- in-subspace gates --------------------------------------------------------------

HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


def subspace_gate(frame: np.ndarray, pair, gate: np.ndarray) -> np.ndarray:
    """Unitary acting as ``gate`` on two frame columns and as identity elsewhere."""
    frame = np.asarray(frame, dtype=complex)
    N = frame.shape[1]
    mu1, mu2 = (int(x) for x in pair)
    if mu1 == mu2 or not (0 <= mu1 < N and 0 <= mu2 < N):
        raise IndexOutOfRange(f"need two distinct columns in 0..{N - 1}, got {pair}")
    V = frame[:, [mu1, mu2]]
    D = frame.shape[0]
    return np.eye(D, dtype=complex) - V @ V.conj().T + V @ gate @ V.conj().T


def hadamard_in_subspace(frame: np.ndarray, pair=(0, 1)) -> np.ndarray:
    """Ideal Hadamard gate on the columns ``pair`` of ``frame``."""
    return subspace_gate(frame, pair, HADAMARD)


def phase_in_subspace(frame: np.ndarray, pair=(0, 1)) -> np.ndarray:
    """Ideal diag(1, i) gate on the columns ``pair`` of ``frame``."""
    return subspace_gate(frame, pair, np.diag([1.0, 1j]))


# -- tomography -------------------------------------------------------------------

@dataclass(frozen=True)
class MixingTransform:
    band: int
    entries: np.ndarray      # a[nu, mu] = <psi-bar_mu | psi~_nu>
    phase_gauge: str
    probabilities: dict      # measured transfer probabilities per setting and row
    plan: PreparationPlan
    omegas_bar: np.ndarray

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.entries)


def _probability(p: float, measure_mode: str, shots: int, rng) -> float:
    if measure_mode == "branch":
        return p
    return rng.binomial(shots, min(max(p, 0.0), 1.0)) / shots


def tomography_mixing(model: HamiltonianModel, lam, single_pulse: DrivePulse,
                      two_tone_pulse: DrivePulse, measure_mode: str = "branch",
                      shots: int = 10_000, seed=None, bands: BandDecomposition | None = None,
                      band="minus", omegas_bar=None, T_max: float | None = None,
                      mode: str = "rwa", rel_tol: float = 1e-3) -> MixingTransform:
    """Overlaps between the single-drive and two-tone drive eigenbases (N = 2).

    For each row nu the single-drive eigenstate |psi~_nu> is prepared
    (ideally) and driven by the two-tone pulse for a planned duration T;
    the transfer probability p = sum_mu |b_mu|^2 sin^2(Omega-bar_mu T) is
    inverted for |b_1|^2 using the two-tone Rabi frequencies. Three settings
    are measured: no gate (b = a), a Hadamard in the two-tone basis
    (|b_1|^2 = 1/2 + Re a_1 a_2^*), and diag(1, i) followed by the Hadamard
    (|b_1|^2 = 1/2 + Im a_1 a_2^*). Row gauge: a_{nu 1} real and >= 0.
    ``omegas_bar`` defaults to the exact two-tone Rabi frequencies.
    """
    s = band_sign(band)
    b = _bands(model, lam, bands)
    N = b.degeneracy
    if N != 2:
        raise InvalidSetting("tomography is implemented for N = 2")
    if not two_tone_pulse.two_tone:
        raise InvalidSetting("tomography needs a two-tone pulse")
    single = replace(single_pulse, omega=b.gap)
    two = replace(two_tone_pulse, omega=b.gap)
    tilde = _pairs_for(model, lam, single, b)
    bar = _pairs_for(model, lam, two, b)
    if omegas_bar is None:
        omegas_bar = two.amplitude * np.sqrt(np.clip(bar.eigenvalues, 0.0, None))
    omegas_bar = np.asarray(omegas_bar, dtype=float)
    if abs(omegas_bar[0] - omegas_bar[1]) <= rel_tol * max(omegas_bar.max(), 1e-300):
        raise DegenerateRabi("two-tone Rabi frequencies coincide; pairs indistinguishable")
    if T_max is None:
        T_max = 50 * math.pi / omegas_bar.min()
    try:
        plan = plan_preparation(omegas_bar, ((0,), (1,)), T_max)
    except NoPlan:
        plan = plan_preparation(omegas_bar, ((1,), (0,)), T_max)
    sines = np.sin(omegas_bar * plan.T) ** 2
    if abs(sines[0] - sines[1]) < 0.1:
        raise DegenerateRabi("planned duration does not separate the two pairs")

    rng = np.random.default_rng(seed) if measure_mode == "sample" else None
    pulse = replace(two, duration=plan.T)
    steps = max(DEFAULT_STEPS_PER_PERIOD_MIN, int(math.ceil(plan.T / (pulse.period / 64))))
    dt = plan.T / steps
    bar_frame = bar.band_coordinates()[:, :N] if s < 0 else bar.band_coordinates()[:, N:]
    gates = {
        "direct": np.eye(2 * N, dtype=complex),
        "hadamard": hadamard_in_subspace(bar_frame, (0, 1)),
        "phase_hadamard": hadamard_in_subspace(bar_frame, (0, 1)) @ phase_in_subspace(bar_frame, (0, 1)),
    }
    other = slice(N, 2 * N) if s < 0 else slice(0, N)

    def transfer(state):
        start = state if mode == "rwa" else b.from_band(state)
        tr = evolve(model, lam, pulse, start, dt=dt, mode=mode, bands=b,
                    sample_stride=max(1, steps // 1024))
        return float(np.sum(np.abs(tr.final_coefficients[other]) ** 2))

    entries = np.zeros((N, N), dtype=complex)
    probs = {}
    for nu in range(N):
        psi = pair_state(tilde, nu, s)
        first = {}
        for name, G in gates.items():
            p = _probability(transfer(G @ psi), measure_mode, shots, rng)
            first[name] = (p - sines[1]) / (sines[0] - sines[1])
            probs[f"{name}[{nu}]"] = p
        mag1 = math.sqrt(min(max(first["direct"], 0.0), 1.0))
        mag2 = math.sqrt(max(1.0 - mag1 ** 2, 0.0))
        re = first["hadamard"] - 0.5
        im = first["phase_hadamard"] - 0.5
        delta = math.atan2(im, re)
        entries[nu] = [mag1, mag2 * np.exp(-1j * delta)]
    return MixingTransform(s, entries, "a[nu,0] real non-negative", probs, plan, omegas_bar)


def mixing_ground_truth(model: HamiltonianModel, lam, single_pulse: DrivePulse,
                        two_tone_pulse: DrivePulse, band="minus",
                        bands: BandDecomposition | None = None) -> np.ndarray:
    """Exact a[nu, mu] = <psi-bar_mu|psi~_nu> in the same row gauge."""
    s = band_sign(band)
    b = _bands(model, lam, bands)
    tilde = _pairs_for(model, lam, single_pulse, b)
    bar = _pairs_for(model, lam, two_tone_pulse, b)
    T = tilde.minus if s < 0 else tilde.plus
    B = bar.minus if s < 0 else bar.plus
    a = (B.conj().T @ T).T
    return gauge_rows(a)


def gauge_rows(a: np.ndarray) -> np.ndarray:
    """Rotate each row so its first entry is real non-negative."""
    a = np.array(a, dtype=complex)
    for row in a:
        if abs(row[0]) > 0:
            row *= np.conj(row[0]) / abs(row[0])
    return a


# -- metric and curvature -----------------------------------------------------------

@dataclass(frozen=True)
class GeometryEstimate:
    metric: np.ndarray             # g-bar_jk in the phi = 0 two-tone basis
    curvature: np.ndarray          # F-bar_jk in the phi = pi/2 two-tone basis
    report: dict


def _rotate_into_bar(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Q-bar = a^T diag(q) conj(a) for a[nu, mu] = <psi-bar_mu|psi~_nu>."""
    return a.T @ np.diag(q) @ a.conj()


def _rel(est, true):
    return float(np.max(np.abs(est - true)) / max(np.max(np.abs(true)), 1e-300))


def extract_metric_curvature(model: HamiltonianModel, lam, j: int, k: int, amplitude: float,
                             band="minus", mode: str = "rwa", measure_mode: str = "branch",
                             shots: int = 10_000, seed=None,
                             bands: BandDecomposition | None = None,
                             psi0=None, record_len: float = DEFAULT_RECORD_PERIODS,
                             herm_tol: float = 1e-3, ratio_max: float = 0.05,
                             force: bool = False,
                             curvature_phase: float = math.pi / 2,
                             exact_tomography: bool = False) -> GeometryEstimate:
    """Metric and Berry curvature from one- and two-tone spectroscopy.

    Single-drive spectroscopy gives the eigenvalues of Q_jj and Q_kk;
    tomography expresses them in the two-tone eigenbasis; the two-tone
    spectra (phi = pi/2 and phi = 0) are diagonal there. The tomography
    inversion uses the measured two-tone frequencies, or the exact ones with
    ``exact_tomography`` (which makes the pipeline gauge covariant up to
    rounding). For band s:
    M^{pi/2} = Q_jj + Q_kk + s F_jk and M^0 = Q_jj + Q_kk + 2 g_jk, solved
    for F-bar and g-bar. ``curvature_phase`` may be -pi/2 (opposite
    handedness, M = Q_jj + Q_kk - s F_jk) when the +pi/2 drive is dark.
    ``psi0`` (band coordinates) seeds every spectroscopy run; the default is
    the equal superposition of ``band``.
    """
    s = band_sign(band)
    b = _bands(model, lam, bands)
    N = b.degeneracy
    base = dict(amplitude=amplitude, omega=b.gap, duration=1.0, ratio_max=ratio_max, force=force)
    pj = DrivePulse(j=j, **base)
    pk = DrivePulse(j=k, **base)
    spectra = {}
    for name, p in (("j", pj), ("k", pk)):
        spectra[name] = rabi_spectroscopy(model, lam, s, p, psi0, mode, record_len, b)
    two = {}
    if abs(abs(curvature_phase) - math.pi / 2) > 1e-12:
        raise InvalidSetting("curvature_phase must be +pi/2 or -pi/2")
    for name, phi in (("curvature", curvature_phase), ("metric", 0.0)):
        p2 = DrivePulse(j=j, k=k, phase=phi, **base)
        two[name] = (p2, rabi_spectroscopy(model, lam, s, p2, psi0, mode, record_len, b))

    for name, sp in list(spectra.items()) + [(n, v[1]) for n, v in two.items()]:
        if len(sp.inferred_q) != N:
            raise NoPeaks(f"{name} spectroscopy resolved {len(sp.inferred_q)} of {N} frequencies")

    report = {"band": s, "j": j, "k": k, "amplitude": amplitude, "mode": mode}
    truth_Q = {i: qgt_resolvent(model, lam, s, i, i, b).matrix for i in (j, k)}
    Qjk = qgt_resolvent(model, lam, s, j, k, b).matrix
    out = {}
    for name, (p2, sp2) in two.items():
        bar = _pairs_for(model, lam, p2, b)
        Bframe = bar.minus if s < 0 else bar.plus
        rotated = {}
        for key, single in (("j", pj), ("k", pk)):
            if N == 1:
                a = np.ones((1, 1), dtype=complex)
            else:
                mix = tomography_mixing(model, lam, single, p2, measure_mode, shots, seed, b, s,
                                        omegas_bar=None if exact_tomography else sp2.omegas,
                                        mode=mode)
                a = mix.entries
                report[f"mixing_{key}_{name}"] = a
            rotated[key] = _rotate_into_bar(a, spectra[key].inferred_q)
        Qbar_sum = rotated["j"] + rotated["k"]
        herm = float(np.max(np.abs(Qbar_sum - Qbar_sum.conj().T)))
        if herm > herm_tol * max(np.max(np.abs(Qbar_sum)), 1e-300):
            raise InconsistentBases(f"rotated QGT sum is not Hermitian (deviation {herm:.3e})")
        M = np.diag(sp2.inferred_q)
        scale = max(float(np.max(np.abs(M))), float(np.max(np.abs(Qbar_sum))))
        if name == "curvature":
            est = s * math.copysign(1.0, curvature_phase) * (M - Qbar_sum)
            true_full = 1j * (Qjk - Qjk.conj().T)
        else:
            est = (M - Qbar_sum) / 2
            true_full = 0.5 * (Qjk + Qjk.conj().T)
        true = Bframe.conj().T @ true_full @ Bframe
        # metric and curvature are Hermitian; measurement error leaves a small
        # anti-Hermitian residue that is reported and projected out
        residue = float(np.max(np.abs(est - est.conj().T))) / 2
        est = (est + est.conj().T) / 2
        out[name] = est
        report[name] = {
            "estimate": est,
            "ground_truth": true,
            "absolute_error": float(np.max(np.abs(est - true))),
            "relative_error": (_rel(est, true) if np.max(np.abs(true)) > 1e-9 * scale
                               else None),
            "two_tone_q": sp2.inferred_q,
            "two_tone_q_truth": bar.eigenvalues,
            "hermiticity_deviation": herm,
            "estimate_antihermitian_residue": residue,
        }
    for key, single in (("j", pj), ("k", pk)):
        report[f"q_{key}"] = spectra[key].inferred_q
        report[f"q_{key}_truth"] = np.linalg.eigvalsh(truth_Q[j if key == "j" else k])[::-1]
    return GeometryEstimate(out["metric"], out["curvature"], report)


# -- Landau-Zener -----------------------------------------------------------------

@dataclass(frozen=True)
class LZFit:
    q: float
    residual: float               # max relative deviation of -ln P from the fitted law
    alphas: np.ndarray
    p_stay: np.ndarray
    q_linear: float               # fit of 1 - P = pi A^2 q / alpha
    residual_linear: float
    q_reference: float | None = None
    reference_deviation: float | None = None


def lz_extraction(model: HamiltonianModel, lam, pulse: DrivePulse, alphas, nu: int = 0,
                  band="minus", window: float = 400.0, t_edge: float | None = None,
                  q_reference: float | None = None, bands: BandDecomposition | None = None,
                  max_residual: float = 0.1, **run_kw) -> LZFit:
    """Fit the coupling eigenvalue of pair ``nu`` from LZ survival probabilities.

    Each sweep runs over |alpha t| <= window |V_max| (or the fixed half
    width ``t_edge``). The fit uses -ln P_stay = pi A^2 q / alpha with
    weights making every alpha count by its relative error; the
    linearized law 1 - P_stay = pi A^2 q / alpha is fitted alongside.
    """
    from .errors import FitPoor

    b = _bands(model, lam, bands)
    pulse = replace(pulse, omega=b.gap)
    if pulse.amplitude <= 0:
        raise InvalidSetting("LZ extraction needs a nonzero drive amplitude")
    pairs = _pairs_for(model, lam, pulse, b)
    V = pulse.amplitude * math.sqrt(max(pairs.eigenvalues.max(), 0.0))
    alphas = np.asarray(alphas, dtype=float)
    if np.any(alphas <= 0):
        raise InvalidSetting("sweep rates must be positive")
    label = "minus" if band_sign(band) < 0 else "plus"
    P = []
    for alpha in alphas:
        if t_edge is None:
            sweep = LZSweep.symmetric(alpha, pulse, V, window, initial=(label, nu))
        else:
            sweep = LZSweep(alpha, -t_edge, t_edge, pulse, initial=(label, nu))
        P.append(lz_run(model, lam, sweep, bands=b, **run_kw)[1])
    P = np.array(P)
    x = math.pi * pulse.amplitude ** 2 / alphas
    y = -np.log(np.clip(P, 1e-300, None))
    w = 1 / x ** 2
    q = float(np.sum(w * x * y) / np.sum(w * x * x))
    resid = float(np.max(np.abs(y - q * x) / np.maximum(q * x, 1e-300)))
    y_lin = 1 - P
    q_lin = float(np.sum(w * x * y_lin) / np.sum(w * x * x))
    resid_lin = float(np.max(np.abs(y_lin - q_lin * x) / np.maximum(q_lin * x, 1e-300)))
    if resid > max_residual:
        raise FitPoor(f"LZ fit residual {resid:.3f} exceeds {max_residual}")
    dev = None
    if q_reference is not None:
        dev = abs(q - q_reference) / max(abs(q_reference), 1e-300)
    return LZFit(q, resid, alphas, P, q_lin, resid_lin, q_reference, dev)
