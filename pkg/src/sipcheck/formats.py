"""On-disk formats: feature matrices (csv, f32bin), JSON documents, series CSVs, configs.

f32bin layout (little-endian throughout)::

    b"SIPF"  u32 version=1  u8 has_labels  u64 n  u64 d
    n*d f32 row-major      [n i8 labels if has_labels]
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .errors import ConfigError, FormatError, InvalidInput, IoError, LabelError, TooFewSamples
from .fisher import FeatureMatrix

__all__ = [
    "FORMATS",
    "ingest_features",
    "export_features",
    "dumps_json",
    "write_text",
    "series_csv",
    "write_series",
    "load_config",
]

FORMATS = ("csv", "f32bin")
MAGIC = b"SIPF"
VERSION = 1
_HEADER = struct.Struct("<4sIBQQ")


def _finish(rows: np.ndarray, labels: Optional[np.ndarray]) -> FeatureMatrix:
    if rows.shape[0] == 0:
        raise TooFewSamples("input has no rows")
    if not np.all(np.isfinite(rows)):
        raise InvalidInput("input has non-finite feature values")
    if labels is not None and not np.all((labels == 1) | (labels == -1)):
        bad = sorted(set(np.asarray(labels).tolist()) - {1, -1})[:5]
        raise LabelError(f"labels must be -1 or +1, found {bad}")
    return FeatureMatrix(rows, labels)


def _read_csv(data: bytes) -> FeatureMatrix:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"csv is not valid UTF-8: {e}") from None
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header:
        raise FormatError("csv has no header row")
    header = [h.strip() for h in header]
    has_labels = header[-1] == "label"
    names = header[:-1] if has_labels else header
    expected = [f"f{j}" for j in range(len(names))]
    if names != expected:
        raise FormatError(f"csv header must be f0..f{len(names) - 1} with an optional final 'label'; got {header}")
    width = len(header)
    feats, labels = [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != width:
            raise FormatError(f"csv line {lineno}: expected {width} fields, got {len(rec)}")
        try:
            feats.append([float(c) for c in rec[: len(names)]])
        except ValueError:
            raise FormatError(f"csv line {lineno}: non-numeric feature value") from None
        if has_labels:
            try:
                labels.append(float(rec[-1]))
            except ValueError:
                raise LabelError(f"csv line {lineno}: label {rec[-1]!r} is not -1 or 1") from None
    rows = np.array(feats, dtype=float).reshape(len(feats), len(names))
    y = None
    if has_labels:
        y = np.array(labels)
        if np.all((y == 1) | (y == -1)):
            y = y.astype(np.int8)
    return _finish(rows, y)


def _read_f32bin(data: bytes) -> FeatureMatrix:
    if len(data) < _HEADER.size:
        raise FormatError("f32bin file is shorter than its header")
    magic, version, has_labels, n, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported f32bin version {version}")
    if has_labels not in (0, 1):
        raise FormatError(f"has_labels flag must be 0 or 1, got {has_labels}")
    expected = _HEADER.size + 4 * n * d + (n if has_labels else 0)
    if len(data) != expected:
        raise FormatError(f"f32bin payload is {len(data)} bytes, header implies {expected}")
    if n == 0:
        raise TooFewSamples("f32bin file has n = 0")
    rows = np.frombuffer(data, dtype="<f4", count=n * d, offset=_HEADER.size).reshape(n, d)
    labels = None
    if has_labels:
        labels = np.frombuffer(data, dtype="i1", count=n, offset=_HEADER.size + 4 * n * d)
    return _finish(rows.astype(float), labels)


def ingest_features(path, fmt: str = "csv") -> FeatureMatrix:
    if fmt not in FORMATS:
        raise FormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e.strerror or e}") from None
    return _read_csv(data) if fmt == "csv" else _read_f32bin(data)


def export_features(f: FeatureMatrix, path, fmt: str = "f32bin") -> None:
    """Write ``f`` in ``fmt``. f32bin stores float32, so round trips are exact
    only for matrices already representable in single precision."""
    if fmt == "f32bin":
        has = f.labels is not None
        payload = _HEADER.pack(MAGIC, VERSION, int(has), f.n, f.d)
        payload += np.ascontiguousarray(f.rows, dtype="<f4").tobytes()
        if has:
            payload += np.asarray(f.labels, dtype="i1").tobytes()
        write_bytes(path, payload)
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = [f"f{j}" for j in range(f.d)]
        w.writerow(header + (["label"] if f.labels is not None else []))
        for i in range(f.n):
            rec = [_fmt(x) for x in f.rows[i]]
            if f.labels is not None:
                rec.append(str(int(f.labels[i])))
            w.writerow(rec)
        write_text(path, buf.getvalue())
    else:
        raise FormatError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e.strerror or e}") from None


def write_text(path, text: str) -> None:
    write_bytes(path, text.encode("utf-8"))


# --------------------------------------------------------------------------
# JSON with fixed float formatting


def _fmt(x: float) -> str:
    """17 significant digits, which round-trips every double."""
    s = format(float(x), ".17g")
    return s if any(c in s for c in ".en") else s + ".0"


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise ValueError("non-finite float reached the JSON encoder")
        return _fmt(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [_encode(v, indent, level + 1) for v in obj]
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(items) + "]"
        return "[\n" + ",\n".join(pad + s for s in items) + "\n" + end + "]"
    raise TypeError(f"cannot encode {type(obj).__name__} as JSON")


def sanitize(obj: Any, warnings: list, path: str = "") -> Any:
    """Replace non-finite floats by None, appending one warning per replacement."""
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        warnings.append(f"{path or 'value'}: non-finite value ({float(obj)}) reported as null")
        return None
    if isinstance(obj, dict):
        return {k: sanitize(v, warnings, f"{path}.{k}" if path else str(k)) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v, warnings, f"{path}[{i}]") for i, v in enumerate(obj)]
    return obj


def dumps_json(obj: Any, indent: int = 2) -> str:
    """Deterministic JSON text: insertion-ordered keys, floats at 17 significant
    digits, trailing newline."""
    return _encode(obj, indent, 0) + "\n"


# --------------------------------------------------------------------------
# experiment series


def series_csv(series) -> str:
    lines = ["x,y_mean,y_lo,y_hi"]
    for row in zip(series.x, series.y_mean, series.y_lo, series.y_hi):
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_series(series, directory, name: str) -> str:
    directory = Path(directory)
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {directory}: {e.strerror or e}") from None
    fname = f"{name}.csv"
    write_text(directory / fname, series_csv(series))
    return fname


# --------------------------------------------------------------------------
# experiment configs (TOML key = value files)


def load_config(path) -> dict:
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config {path} is not valid key = value text: {e}") from None
    return data
