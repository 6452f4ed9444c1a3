"""Run configuration: strict TOML parsing with documented defaults.

See ``docs/config.md`` for the grammar. Every table rejects unknown keys
and every physical value must be finite; all checks run before any
computation starts.
"""
from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .errors import ConfigError, InvalidSetting
from .models import BUILTIN_MODELS

DEFAULTS = {
    "drive": {
        "j": 0,
        "k": None,
        "amplitude": None,
        "ratio": 0.02,
        "omega": "resonant",
        "phase": 0.0,
        "duration": None,
        "ratio_max": 0.05,
    },
    "sim": {
        "mode": "rwa",
        "dt_divisor": 64,
        "sample_stride": 4,
        "record_len": 30.0,
    },
    "protocol": {
        "band": "minus",
        "frequencies": "spectroscopy",
        "partition": "auto",
        "plan_n": None,
        "T_max": 100.0,
        "iterate": False,
        "measure_mode": "branch",
        "seed": 0,
        "shots": 10000,
        "curvature_phase": math.pi / 2,
        "exact_tomography": False,
        "path_scales": [1.0, 0.5, 0.2, 0.09, 0.05],
        "check_periods": 3.0,
        "noise_shots": 1000,
    },
    "lz": {
        "alpha_over_v2": [30.0, 50.0, 100.0],
        "window": 400.0,
        "nu": 0,
        "band": "minus",
    },
    "output": {
        "directory": "results",
        "formats": ["json", "csv"],
    },
}

MODEL_KEYS = {"name", "delta", "mass", "coeff_seed", "c", "e", "rotation_seed",
              "rotation_scale", "generators", "generators_imag"}
TOP_KEYS = {"model", "lambda", *DEFAULTS}
MODES = ("full", "full_exact_modulation", "rwa")


@dataclass(frozen=True)
class RunConfig:
    model: dict
    lam: tuple
    drive: dict
    sim: dict
    protocol: dict
    lz: dict
    output: dict
    source: str = field(default="", repr=False)

    @property
    def model_settings(self) -> dict:
        return {k: v for k, v in self.model.items() if k != "name"}

    def config_hash(self) -> str:
        return git_blob_hash(self.source.encode())

    def echo(self) -> dict:
        return {"model": self.model, "lambda": list(self.lam), "drive": self.drive,
                "sim": self.sim, "protocol": self.protocol, "lz": self.lz,
                "output": self.output}


def git_blob_hash(data: bytes) -> str:
    """SHA-1 of ``blob <size>\\0<data>``, the content hash git assigns a file."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _finite_number(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidSetting(f"{where} must be a number")
    if not math.isfinite(value):
        raise InvalidSetting(f"{where} must be finite")
    return float(value)


def _check_numbers(obj, where):
    if isinstance(obj, list):
        for i, item in enumerate(obj):
            _check_numbers(item, f"{where}[{i}]")
    elif isinstance(obj, float) and not math.isfinite(obj):
        raise InvalidSetting(f"{where} must be finite")


def _table(raw, name):
    table = raw.get(name, {})
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = set(table) - set(DEFAULTS[name])
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    merged = copy.deepcopy(DEFAULTS[name])
    merged.update(table)
    return merged


def _int(value, where, lo=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidSetting(f"{where} must be an integer")
    if lo is not None and value < lo:
        raise InvalidSetting(f"{where} must be >= {lo}")
    return value


def _positive(value, where):
    v = _finite_number(value, where)
    if v <= 0:
        raise InvalidSetting(f"{where} must be positive")
    return v


def _band(value, where):
    if value not in ("minus", "plus"):
        raise InvalidSetting(f"{where} must be 'minus' or 'plus'")
    return value


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    model = raw.get("model")
    if not isinstance(model, dict) or "name" not in model:
        raise ConfigError("[model] table with a 'name' is required")
    extra = set(model) - MODEL_KEYS
    if extra:
        raise ConfigError(f"unknown keys in [model]: {sorted(extra)}")
    if model["name"] not in BUILTIN_MODELS:
        raise ConfigError(f"unknown model {model['name']!r}")
    _check_numbers(list(model.values()), "[model]")

    if "lambda" not in raw or not isinstance(raw["lambda"], list) or not raw["lambda"]:
        raise ConfigError("'lambda' must be a non-empty array of numbers")
    lam = tuple(_finite_number(x, f"lambda[{i}]") for i, x in enumerate(raw["lambda"]))

    drive = _table(raw, "drive")
    drive["j"] = _int(drive["j"], "drive.j", 0)
    if drive["k"] is not None:
        drive["k"] = _int(drive["k"], "drive.k", 0)
        if drive["k"] == drive["j"]:
            raise InvalidSetting("drive.k must differ from drive.j")
    if drive["amplitude"] is not None:
        drive["amplitude"] = _finite_number(drive["amplitude"], "drive.amplitude")
        if drive["amplitude"] < 0:
            raise InvalidSetting("drive.amplitude must be non-negative")
    drive["ratio"] = _finite_number(drive["ratio"], "drive.ratio")
    if drive["ratio"] < 0:
        raise InvalidSetting("drive.ratio must be non-negative")
    if drive["omega"] != "resonant":
        drive["omega"] = _positive(drive["omega"], "drive.omega")
    drive["phase"] = _finite_number(drive["phase"], "drive.phase")
    if drive["duration"] is not None:
        drive["duration"] = _positive(drive["duration"], "drive.duration")
    drive["ratio_max"] = _positive(drive["ratio_max"], "drive.ratio_max")

    sim = _table(raw, "sim")
    if sim["mode"] not in MODES:
        raise InvalidSetting(f"sim.mode must be one of {MODES}")
    sim["dt_divisor"] = _int(sim["dt_divisor"], "sim.dt_divisor", 16)
    sim["sample_stride"] = _int(sim["sample_stride"], "sim.sample_stride", 1)
    sim["record_len"] = _positive(sim["record_len"], "sim.record_len")

    protocol = _table(raw, "protocol")
    protocol["band"] = _band(protocol["band"], "protocol.band")
    if protocol["frequencies"] not in ("spectroscopy", "exact"):
        raise InvalidSetting("protocol.frequencies must be 'spectroscopy' or 'exact'")
    part = protocol["partition"]
    if part != "auto":
        if not (isinstance(part, dict) and set(part) <= {"even", "odd"}):
            raise InvalidSetting("protocol.partition must be 'auto' or a table with even/odd arrays")
        for key in ("even", "odd"):
            for i in part.get(key, []):
                _int(i, f"protocol.partition.{key}", 0)
    if protocol["plan_n"] is not None:
        vals = protocol["plan_n"] if isinstance(protocol["plan_n"], list) else [protocol["plan_n"]]
        for v in vals:
            _int(v, "protocol.plan_n", 0)
    protocol["T_max"] = _positive(protocol["T_max"], "protocol.T_max")
    if not isinstance(protocol["iterate"], bool):
        raise InvalidSetting("protocol.iterate must be true or false")
    if protocol["measure_mode"] not in ("branch", "sample"):
        raise InvalidSetting("protocol.measure_mode must be 'branch' or 'sample'")
    protocol["seed"] = _int(protocol["seed"], "protocol.seed", 0)
    if not isinstance(protocol["exact_tomography"], bool):
        raise InvalidSetting("protocol.exact_tomography must be true or false")
    protocol["shots"] = _int(protocol["shots"], "protocol.shots", 1)
    protocol["curvature_phase"] = _finite_number(protocol["curvature_phase"], "protocol.curvature_phase")
    if abs(abs(protocol["curvature_phase"]) - math.pi / 2) > 1e-9:
        raise InvalidSetting("protocol.curvature_phase must be +pi/2 or -pi/2")
    protocol["path_scales"] = [_positive(x, "protocol.path_scales") for x in protocol["path_scales"]]
    protocol["check_periods"] = _positive(protocol["check_periods"], "protocol.check_periods")
    protocol["noise_shots"] = _int(protocol["noise_shots"], "protocol.noise_shots", 0)

    lz = _table(raw, "lz")
    lz["alpha_over_v2"] = [_positive(x, "lz.alpha_over_v2") for x in lz["alpha_over_v2"]]
    if not lz["alpha_over_v2"]:
        raise InvalidSetting("lz.alpha_over_v2 must not be empty")
    lz["window"] = _positive(lz["window"], "lz.window")
    lz["nu"] = _int(lz["nu"], "lz.nu", 0)
    lz["band"] = _band(lz["band"], "lz.band")

    output = _table(raw, "output")
    if not isinstance(output["directory"], str) or not output["directory"]:
        raise InvalidSetting("output.directory must be a non-empty string")
    if not set(output["formats"]) <= {"json", "csv"}:
        raise InvalidSetting("output.formats may contain 'json' and 'csv'")

    return RunConfig(dict(model), lam, drive, sim, protocol, lz, output, text)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config(text)
