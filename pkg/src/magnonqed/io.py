"""Experiment configuration and file formats for maps and results.

Maps are stored either as CSV (first row = frequency axis in GHz, first
column = field axis in mT, body = |S21|, with an optional companion file
holding the phase in radians) or as JSON (axes plus real and imaginary
parts).  Floats are written with 17 significant digits in CSV and with
the shortest exact repr in JSON, so every file reads back bit-for-bit.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .afm_modes import MagnetParams, StackingConfig
from .errors import ValidationError
from .hybrid_response import CouplingParams, SpectrumMap
from .saturation import SaturationParams
from .spin_levels import SpinEnsembleParams

SCHEMA_VERSION = "1"
CSV_FLOAT = "%.17g"


@dataclass(frozen=True)
class Sweep:
    start: float
    stop: float
    steps: int

    def __post_init__(self):
        if isinstance(self.steps, bool) or int(self.steps) != self.steps:
            raise ValidationError("steps", f"must be an integer (got {self.steps!r})")
        if self.steps < 2:
            raise ValidationError("steps", f"sweeps need >= 2 points (got {self.steps})")
        if self.start == self.stop:
            raise ValidationError("stop", "must differ from start")

    def axis(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, int(self.steps))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one simulated map.

    ``field_sweep`` is in mT and ``f_axis`` in GHz.  ``theta`` is the
    in-plane field angle from the easy axis b, ``branch`` selects the
    magnon branch coupled to the spins.
    """

    magnet: MagnetParams = field(default_factory=MagnetParams)
    spins: List[SpinEnsembleParams] = field(default_factory=lambda: [SpinEnsembleParams()])
    field_sweep: Sweep = Sweep(100.0, 300.0, 200)
    f_axis: Sweep = Sweep(23.0, 28.0, 400)
    coupling: CouplingParams = field(default_factory=CouplingParams)
    theta: float = 90.0
    branch: str = "acoustic"
    chiral_scaling: bool = False
    saturation: Optional[SaturationParams] = None
    stacking: Optional[StackingConfig] = None
    seed: int = 0
    restarts: int = 8

    def __post_init__(self):
        if not self.spins:
            raise ValidationError("spins", "need at least one spin species")
        if not 0 <= self.theta <= 90:
            raise ValidationError("theta", f"must satisfy 0 <= theta <= 90 (got {self.theta})")
        if self.branch not in ("acoustic", "optical", "lower", "upper"):
            raise ValidationError("branch", f"unknown branch {self.branch!r}")
        if min(self.field_sweep.start, self.field_sweep.stop) < 0:
            raise ValidationError("field_sweep", "fields must be >= 0 mT")
        if min(self.f_axis.start, self.f_axis.stop) <= 0:
            raise ValidationError("f_axis", "frequencies must be > 0 GHz")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError("seed", f"must be a non-negative integer (got {self.seed!r})")
        if self.restarts < 0:
            raise ValidationError("restarts", "must be >= 0")


_NESTED = {
    "magnet": MagnetParams,
    "field_sweep": Sweep,
    "f_axis": Sweep,
    "coupling": CouplingParams,
    "saturation": SaturationParams,
    "stacking": StackingConfig,
}


def _check_value(path, value, expected):
    if expected in (float, "float") and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ValidationError(path, f"expected a number (got {value!r})")
    if expected in (int, "int") and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ValidationError(path, f"expected an integer (got {value!r})")
    if expected in (str, "str") and not isinstance(value, str):
        raise ValidationError(path, f"expected a string (got {value!r})")
    if expected in (bool, "bool") and not isinstance(value, bool):
        raise ValidationError(path, f"expected true or false (got {value!r})")
    if isinstance(value, float) and not math.isfinite(value):
        raise ValidationError(path, "must be finite")


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ValidationError(path, f"expected an object (got {type(data).__name__})")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValidationError(f"{path}.{unknown[0]}", "unknown field")
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}"
        ann = known[key].type
        if value is not None and isinstance(ann, str):
            base = ann.replace("Optional[", "").rstrip("]")
            _check_value(sub, value, base)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ValidationError as exc:
        raise exc.prefixed(path) from None


def config_from_dict(data) -> ExperimentConfig:
    """Validated ExperimentConfig; errors carry a dotted path such as ``magnet.H_c``."""
    if not isinstance(data, dict):
        raise ValidationError("config", "top level must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(unknown[0], "unknown field")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED:
            if value is None and key in ("saturation", "stacking"):
                kwargs[key] = None
                continue
            if key in ("field_sweep", "f_axis") and isinstance(value, list):
                if len(value) != 3:
                    raise ValidationError(key, "expected [start, stop, steps]")
                value = dict(zip(("start", "stop", "steps"), value))
            kwargs[key] = _build(_NESTED[key], value, key)
        elif key == "spins":
            if isinstance(value, dict):
                value = [value]
            if not isinstance(value, list):
                raise ValidationError("spins", "expected a list of spin species")
            kwargs[key] = [_build(SpinEnsembleParams, v, f"spins[{k}]") for k, v in enumerate(value)]
        else:
            expected = {"theta": float, "branch": str, "chiral_scaling": bool, "seed": int,
                        "restarts": int}[key]
            _check_value(key, value, expected)
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# maps


def write_map_csv(m: SpectrumMap, path, phase_path=None):
    """|S21| body with a frequency header row and a field first column."""
    mag = m.magnitude
    _write_grid(path, m.b0_axis, m.f_axis, mag)
    if phase_path is not None:
        _write_grid(phase_path, m.b0_axis, m.f_axis, m.phase)


def _write_grid(path, rows, cols, body):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["B0_mT\\f_GHz"] + [CSV_FLOAT % v for v in cols])
    for b, line in zip(rows, body):
        w.writerow([CSV_FLOAT % b] + [CSV_FLOAT % v for v in line])
    _write_text(path, buf.getvalue())


def _write_text(path, text):
    if str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _read_grid(text, source):
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows) < 2:
        raise ValidationError(source, "CSV map needs a header row and at least one data row")
    try:
        cols = np.array([float(v) for v in rows[0][1:]])
        rows_axis = np.array([float(r[0]) for r in rows[1:]])
        body = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise ValidationError(source, f"non-numeric CSV entry ({exc})") from None
    if body.shape != (len(rows_axis), len(cols)):
        raise ValidationError(source, "ragged CSV rows")
    return rows_axis, cols, body


def read_map_csv(path, phase_path=None, text=None) -> SpectrumMap:
    src = str(path)
    if text is None:
        text = Path(path).read_text()
    b0, f, mag = _read_grid(text, src)
    if phase_path is None:
        return SpectrumMap(b0, f, mag)
    b0p, fp, phase = _read_grid(Path(phase_path).read_text(), str(phase_path))
    if not (np.array_equal(b0, b0p) and np.array_equal(f, fp)):
        raise ValidationError(str(phase_path), "phase file axes differ from the magnitude file")
    return SpectrumMap(b0, f, mag * np.exp(1j * phase), polar=(mag, phase))


def map_to_dict(m: SpectrumMap) -> dict:
    out = {"schema_version": SCHEMA_VERSION, "kind": "spectrum_map",
           "b0_mT": m.b0_axis.tolist(), "f_GHz": m.f_axis.tolist()}
    if np.iscomplexobj(m.s21):
        out["s21"] = {"re": m.s21.real.tolist(), "im": m.s21.imag.tolist()}
    else:
        out["s21"] = {"re": np.asarray(m.s21, dtype=float).tolist(), "im": None}
    out["metadata"] = _jsonable(m.metadata)
    return out


def map_from_dict(data, source="map") -> SpectrumMap:
    try:
        re = np.array(data["s21"]["re"], dtype=float)
        im = data["s21"].get("im")
        s21 = re if im is None else re + 1j * np.array(im, dtype=float)
        return SpectrumMap(np.array(data["b0_mT"], dtype=float), np.array(data["f_GHz"], dtype=float),
                           s21, data.get("metadata") or {})
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise exc.prefixed(source) from None
        raise ValidationError(source, f"malformed map JSON ({exc!r})") from None


def write_map_json(m: SpectrumMap, path):
    _write_text(path, dumps(map_to_dict(m)))


def read_map_json(path, text=None) -> SpectrumMap:
    if text is None:
        text = Path(path).read_text()
    return map_from_dict(_loads(text, str(path)), str(path))


def read_map(path, phase_path=None) -> SpectrumMap:
    """Read a CSV or JSON map; ``-`` reads stdin and sniffs the format."""
    src = str(path)
    if src == "-":
        text = sys.stdin.read()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ValidationError(src, f"cannot read map: {exc.strerror}") from None
    if not text.strip():
        raise ValidationError(src, "empty map file")
    if text.lstrip().startswith("{"):
        return read_map_json(src, text=text)
    return read_map_csv(src, phase_path=phase_path, text=text)


# ---------------------------------------------------------------------------
# results


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dumps(obj) -> str:
    """JSON with exact float repr; key order is preserved for byte-stable output."""
    return json.dumps(_jsonable(obj), indent=1) + "\n"


def _loads(text, source):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(source, f"invalid JSON at line {exc.lineno}: {exc.msg}") from None


def result_document(kind, payload) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": kind, **_jsonable(payload)}


def write_result(kind, payload, path="-"):
    _write_text(path, dumps(result_document(kind, payload)))


def write_table(path, header, rows):
    """Plot-ready CSV with one header row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([CSV_FLOAT % v if isinstance(v, (float, np.floating)) else v for v in row])
    _write_text(path, buf.getvalue())


def read_table(path):
    rows = list(csv.reader(io.StringIO(Path(path).read_text())))
    return rows[0], [[float(v) if _is_number(v) else v for v in r] for r in rows[1:] if r]


def _is_number(v):
    try:
        float(v)
        return True
    except ValueError:
        return False
