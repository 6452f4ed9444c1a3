"""Command-line front end.

Usage::

    qgtrabi <command> --config run.toml [--out DIR] [--seed N] [--jobs N] [--force]

Commands: qgt, rabi, prep, tomo, extract, lz, check-rwa, selftest. Each
run writes ``<command>.json`` (and trace files where applicable) into the
output directory. Exit codes: 0 success, 1 selftest failure, 2
configuration error, 3 physics precondition, 4 protocol failure, 5
internal invariant breach.
"""
from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .dynamics import DrivePulse, LZSweep, lz_run, rwa_validity
from .errors import ConfigError, IndexOutOfRange, InvalidSetting, NoPlan, QGTError
from .geometry import (curvature, diagonalize_qgt, factorized_consistency, metric, pair_basis,
                       qgt_fd, qgt_resolvent)
from .models import builtin_model, decompose_bands
from .protocols import (build_plan_tree, extract_metric_curvature, iterate_preparation,
                        lz_extraction, mixing_ground_truth, pair_state, plan_preparation,
                        prepare_eigenstate, rabi_spectroscopy, tomography_mixing)
from .results import write_result, write_trace
from .selftest import report_hash, report_table, run_selftest

COMMANDS = ("qgt", "rabi", "prep", "tomo", "extract", "lz", "check-rwa", "selftest")


class Run:
    """A validated configuration with the model and working point built."""

    def __init__(self, cfg: RunConfig, args):
        self.cfg = cfg
        self.args = args
        self.model = builtin_model(cfg.model["name"], cfg.model_settings)
        M = self.model.param_count
        if len(cfg.lam) != M:
            raise InvalidSetting(f"lambda has {len(cfg.lam)} entries, model {cfg.model['name']} needs {M}")
        for key in ("j", "k"):
            idx = cfg.drive[key]
            if idx is not None and idx >= M:
                raise IndexOutOfRange(f"drive.{key} = {idx} outside 0..{M - 1}")
        self.lam = np.array(cfg.lam)
        self.seed = cfg.protocol["seed"] if args.seed is None else args.seed
        self.out = Path(args.out if args.out is not None else cfg.output["directory"])
        self.jobs = max(1, args.jobs)

    @property
    def bands(self):
        return decompose_bands(self.model, self.lam)

    def pulse(self, bands, single: bool = False, k=None, phase=None) -> DrivePulse:
        d = self.cfg.drive
        omega = bands.gap if d["omega"] == "resonant" else d["omega"]
        A = d["amplitude"] if d["amplitude"] is not None else d["ratio"] * omega
        two = not single and (k if k is not None else d["k"]) is not None
        return DrivePulse(j=d["j"], amplitude=A, omega=omega,
                          duration=d["duration"] or 2 * math.pi / omega,
                          k=(k if k is not None else d["k"]) if two else None,
                          phase=(phase if phase is not None else d["phase"]) if two else 0.0,
                          ratio_max=d["ratio_max"], force=self.args.force)

    def dt(self, pulse):
        return pulse.period / self.cfg.sim["dt_divisor"]

    def header(self, command: str) -> dict:
        return {"command": command, "version": __version__,
                "config_hash": self.cfg.config_hash(), "config": self.cfg.echo(),
                "seed": self.seed}

    def write(self, command: str, body: dict, traces=()):
        formats = self.cfg.output["formats"]
        name = command.replace("-", "_")
        if "json" in formats:
            write_result(self.out / f"{name}.json", {**self.header(command), **body})
        if "csv" in formats:
            for suffix, trace in traces:
                header, data = trace.columns()
                write_trace(self.out / f"{name}_{suffix}.csv", header, data)


def _band_sign(name):
    return -1 if name == "minus" else 1


def _rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# -- commands ---------------------------------------------------------------

def cmd_qgt(run: Run):
    b = run.bands
    M = run.model.param_count
    bands_out = {}
    for label in ("minus", "plus"):
        s = _band_sign(label)
        entries = []
        for j in range(M):
            for k in range(M):
                Q = qgt_resolvent(run.model, run.lam, s, j, k, b)
                fd = qgt_fd(run.model, run.lam, s, j, k).matrix
                # absolute deviation when the tensor vanishes
                dev = _rel(fd, Q.matrix) if np.any(Q.matrix) else float(np.max(np.abs(fd)))
                entries.append({
                    "j": j, "k": k, "Q": Q.matrix, "metric": metric(Q), "curvature": curvature(Q),
                    "oracle_relative_deviation": dev,
                })
        eig = {str(j): diagonalize_qgt(qgt_resolvent(run.model, run.lam, s, j, j, b)).eigenvalues
               for j in range(M)}
        bands_out[label] = {"energy": b.energy(s), "tensors": entries, "eigenvalues_jj": eig}
    consistency = [factorized_consistency(run.model, run.lam, j, b) for j in range(M)]
    body = {"gap": b.gap, "degeneracy": b.degeneracy, "bands": bands_out,
            "factorized_consistency": [{k: v for k, v in c.items()} for c in consistency]}
    run.write("qgt", body)
    print(f"qgt: gap {b.gap:.10g}, N = {b.degeneracy}; wrote {run.out}/qgt.json")


def cmd_rabi(run: Run):
    b = run.bands
    pulse = run.pulse(b)
    s = _band_sign(run.cfg.protocol["band"])
    spectrum = rabi_spectroscopy(run.model, run.lam, s, pulse, None, run.cfg.sim["mode"],
                                 run.cfg.sim["record_len"], b, dt=run.dt(pulse),
                                 sample_stride=run.cfg.sim["sample_stride"])
    truth = pair_basis(run.model, run.lam, pulse.j, pulse.k,
                       pulse.phase if pulse.two_tone else None, b).eigenvalues
    # each inferred value is compared with the nearest geometric eigenvalue
    matched = [float(truth[np.argmin(np.abs(truth - q))]) for q in spectrum.inferred_q]
    rel = [float(abs(q - t) / t) if t > 0 else None for q, t in zip(spectrum.inferred_q, matched)]
    body = {"basis_tag": spectrum.basis_tag, "drive": spectrum.drive,
            "peaks": spectrum.peaks, "omegas": spectrum.omegas, "inferred_q": spectrum.inferred_q,
            "ground_truth_q": truth, "relative_error": rel}
    run.write("rabi", body, [("trace", spectrum.trace)])
    for q, t in zip(spectrum.inferred_q, matched):
        print(f"rabi: q = {q:.8g} (geometry {t:.8g})")


def _prep_partition(run: Run, N):
    part = run.cfg.protocol["partition"]
    if part != "auto":
        return (tuple(part.get("even", [])), tuple(part.get("odd", []))), False
    # slowest pair even, the rest odd; the swapped choice is tried on NoPlan
    return ((N - 1,), tuple(range(N - 1))), True


def cmd_prep(run: Run):
    b = run.bands
    N = b.degeneracy
    pulse = run.pulse(b)
    proto = run.cfg.protocol
    pairs = pair_basis(run.model, run.lam, pulse.j, pulse.k,
                       pulse.phase if pulse.two_tone else None, b)
    if proto["frequencies"] == "exact":
        omegas = pulse.amplitude * np.sqrt(np.clip(pairs.eigenvalues, 0, None))
        source = {"frequencies": "exact"}
    else:
        spectrum = rabi_spectroscopy(run.model, run.lam, -1, pulse, None, run.cfg.sim["mode"],
                                     run.cfg.sim["record_len"], b, dt=run.dt(pulse),
                                     sample_stride=run.cfg.sim["sample_stride"])
        if len(spectrum.omegas) != N:
            raise NoPlan(f"spectroscopy resolved {len(spectrum.omegas)} of {N} Rabi frequencies")
        omegas = spectrum.omegas
        source = {"frequencies": "spectroscopy", "inferred_q": spectrum.inferred_q}
    T_max = proto["T_max"] * math.pi / omegas.min()
    psi0 = sum(pair_state(pairs, i, -1) for i in range(N)) / math.sqrt(N)
    body = {"omegas": omegas, "source": source}

    if proto["iterate"]:
        tree = build_plan_tree(omegas, T_max)
        for S, plan in sorted(tree.items(), key=lambda kv: (-len(kv[0]), sorted(kv[0]))):
            print(f"plan {sorted(S)}: {plan.describe()}")
        chains = iterate_preparation(run.model, run.lam, pulse, tree, psi0,
                                     proto["measure_mode"], run.seed, run.cfg.sim["mode"], b)
        avg = sum(c.probability * c.fidelity for c in chains)
        body.update(plan_tree=[{"pairs": sorted(S), "plan": p} for S, p in
                               sorted(tree.items(), key=lambda kv: (-len(kv[0]), sorted(kv[0])))],
                    chains=chains, averaged_fidelity=avg)
        run.write("prep", body)
        print(f"prep: {len(chains)} measurement chains, averaged final fidelity {avg:.6f}")
        return

    partition, auto = _prep_partition(run, N)
    n = proto["plan_n"]
    try:
        plan = plan_preparation(omegas, partition, T_max, n=n)
    except NoPlan:
        if not auto:
            raise
        plan = plan_preparation(omegas, (partition[1], partition[0]), T_max, n=n)
    print(f"plan: {plan.describe()}")
    res = prepare_eigenstate(run.model, run.lam, pulse, psi0, plan, proto["measure_mode"],
                             run.seed, run.cfg.sim["mode"], b)
    body.update(plan=plan, fidelity=res.fidelity, averaged_fidelity=res.averaged_fidelity,
                records=res.records, final_state=res.final_state, target=res.target)
    run.write("prep", body)
    for rec in res.records:
        print(f"prep: outcome {'E+' if rec.outcome > 0 else 'E-'} p = {rec.probability:.6f} "
              f"conditional fidelity {rec.fidelity:.6f}")
    print(f"prep: fidelity {res.fidelity:.6f}")


def _two_tone_pulse(run: Run, b):
    pulse = run.pulse(b)
    if not pulse.two_tone:
        raise InvalidSetting("this command needs drive.k for the second tone")
    return pulse


def cmd_tomo(run: Run):
    b = run.bands
    two = _two_tone_pulse(run, b)
    single = run.pulse(b, single=True)
    proto = run.cfg.protocol
    body = {}
    for label in ("minus", "plus"):
        mix = tomography_mixing(run.model, run.lam, single, two, proto["measure_mode"],
                                proto["shots"], run.seed, b, label, mode=run.cfg.sim["mode"])
        truth = mixing_ground_truth(run.model, run.lam, single, two, label, b)
        body[label] = {"mixing": mix, "ground_truth": truth,
                       "magnitude_deviation": float(np.max(np.abs(np.abs(mix.entries) - np.abs(truth))))}
        print(f"tomo {label}: max | |a| - |a_true| | = {body[label]['magnitude_deviation']:.3e}")
    run.write("tomo", body)


def cmd_extract(run: Run):
    b = run.bands
    two = _two_tone_pulse(run, b)
    proto = run.cfg.protocol
    est = extract_metric_curvature(run.model, run.lam, two.j, two.k, two.amplitude,
                                   proto["band"], run.cfg.sim["mode"], proto["measure_mode"],
                                   proto["shots"], run.seed, b,
                                   record_len=run.cfg.sim["record_len"],
                                   ratio_max=two.ratio_max, force=run.args.force,
                                   curvature_phase=proto["curvature_phase"],
                                   exact_tomography=proto["exact_tomography"])
    run.write("extract", {"metric": est.metric, "curvature": est.curvature, "report": est.report})
    for name in ("curvature", "metric"):
        r = est.report[name]
        rel = "n/a (zero)" if r["relative_error"] is None else f"{r['relative_error']:.3e}"
        print(f"extract: {name} absolute error {r['absolute_error']:.3e}, relative error {rel}")


def cmd_lz(run: Run):
    b = run.bands
    pulse = run.pulse(b, single=True)
    lz = run.cfg.lz
    pairs = pair_basis(run.model, run.lam, pulse.j, bands=b)
    nu = lz["nu"]
    if nu >= b.degeneracy:
        raise IndexOutOfRange(f"lz.nu = {nu} outside 0..{b.degeneracy - 1}")
    V2 = pulse.amplitude ** 2 * pairs.eigenvalues[nu]
    if V2 <= 0:
        raise InvalidSetting("selected pair is dark (zero coupling)")
    alphas = [f * V2 for f in lz["alpha_over_v2"]]
    fit = lz_extraction(run.model, run.lam, pulse, alphas, nu, lz["band"], lz["window"],
                        q_reference=pairs.eigenvalues[nu], bands=b)
    V_max = pulse.amplitude * math.sqrt(pairs.eigenvalues[0])
    sweep = LZSweep.symmetric(alphas[0], pulse, V_max, lz["window"], initial=(lz["band"], nu))
    trace, _ = lz_run(run.model, run.lam, sweep, bands=b)
    run.write("lz", {"fit": fit, "v2": V2, "alphas": alphas}, [("trace", trace)])
    print(f"lz: q = {fit.q:.8g} (geometry {pairs.eigenvalues[nu]:.8g}), residual {fit.residual:.3e}")


def cmd_check_rwa(run: Run):
    b = run.bands
    pulse = run.pulse(b, single=True)
    proto = run.cfg.protocol
    pairs = pair_basis(run.model, run.lam, pulse.j, bands=b)
    q = pairs.eigenvalues[pairs.eigenvalues > 1e-3 * pairs.eigenvalues.max()]
    Om = pulse.amplitude * math.sqrt(q.min())
    pulse = pulse.with_duration(proto["check_periods"] * 2 * math.pi / Om)
    path = [run.lam * s for s in proto["path_scales"]]

    def one(lam):
        return rwa_validity(run.model, [lam], pulse, dt=run.dt(pulse),
                            noise_shots=proto["noise_shots"] or None)[0]

    with ThreadPoolExecutor(max_workers=run.jobs) as pool:
        report = list(pool.map(one, path))
    run.write("check-rwa", {"pulse": pulse, "points": report})
    for r in report:
        if r.get("collapsed"):
            print(f"check-rwa: gap collapsed at {r['lambda']}")
            continue
        print(f"check-rwa: gap/omega {r['gap_over_omega']:.4f} discrepancy {r['discrepancy']:.4f} "
              f"visibility {r['visibility']:.3g}{'  FLAG' if r['flagged'] else ''}")


HANDLERS = {
    "qgt": cmd_qgt,
    "rabi": cmd_rabi,
    "prep": cmd_prep,
    "tomo": cmd_tomo,
    "extract": cmd_extract,
    "lz": cmd_lz,
    "check-rwa": cmd_check_rwa,
}


def cmd_selftest(args) -> int:
    results = run_selftest(tolerance_scale=args.tolerance_scale, inject=args.inject_fault)
    print(report_table(results))
    print(f"report hash {report_hash(results)}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"selftest FAILED: {', '.join(failed)}")
        return 1
    print("selftest passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qgtrabi", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--out", help="output directory (overrides output.directory)")
    common.add_argument("--seed", type=int, help="RNG seed (overrides protocol.seed)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")
    common.add_argument("--force", action="store_true", help="allow A/omega above ratio_max")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "selftest":
            p.add_argument("--tolerance-scale", type=float, default=1.0, help=argparse.SUPPRESS)
            p.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return cmd_selftest(args)
        if not args.config:
            raise ConfigError("--config is required")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        run = Run(load_config(args.config), args)
        HANDLERS[args.command](run)
        return 0
    except QGTError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
