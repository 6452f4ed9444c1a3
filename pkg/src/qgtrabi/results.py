"""Bit-stable result files.

Structured results are JSON with floats written at 17 significant digits
and complex numbers as ``[re, im]`` pairs. The only run-dependent field,
``generated_at``, sits alone on the second line so that file bodies can be
compared byte for byte. Traces are comma-separated text, also at 17
significant digits. All files are written to a temporary name and renamed
into place.
"""
from __future__ import annotations

import dataclasses
import datetime as _dt
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

SCHEMA = "qgtrabi.result/1"


def _float(x: float) -> str:
    if not math.isfinite(x):
        return json.dumps(None)
    text = format(x, ".17g")
    if text in ("-0", "0"):
        return "0.0"
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text


def to_plain(obj):
    """Convert numpy values, complex numbers and dataclasses to JSON-ready data."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if f.repr}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, frozenset):
        return sorted(to_plain(v) for v in obj)
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj, indent: int = 1, level: int = 0) -> str:
    """Deterministic JSON text (insertion-ordered keys, 17-digit floats)."""
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {dumps(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        items = [f"{pad}{dumps(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _float(obj)
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(str(obj))


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def result_text(body: dict, generated_at: str | None = None) -> str:
    """Header line with the timestamp, then the schema tag and ``body``."""
    if generated_at is None:
        generated_at = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    doc = {"schema": SCHEMA, **to_plain(body)}
    inner = dumps(doc)
    return "{\n" + f' "generated_at": {json.dumps(generated_at)},\n' + inner[2:] + "\n"


def result_body(text: str) -> str:
    """File text without the timestamp line."""
    lines = text.splitlines(keepends=True)
    return "".join(line for line in lines if not line.lstrip().startswith('"generated_at"'))


def write_result(path, body: dict, generated_at: str | None = None) -> None:
    atomic_write(path, result_text(body, generated_at))


def trace_text(header, data) -> str:
    rows = [",".join(header)]
    for row in np.asarray(data, dtype=float):
        rows.append(",".join(format(x, ".17g") for x in row))
    return "\n".join(rows) + "\n"


def write_trace(path, header, data) -> None:
    atomic_write(path, trace_text(header, data))
