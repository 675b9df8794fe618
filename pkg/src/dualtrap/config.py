"""Run configuration: YAML with unit-suffixed values, converted to SI at parse time.

Every section is optional and falls back to the defaults below. Unknown
sections and keys are rejected.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import InputError
from .units import parse_quantity as _parse

MODULE = "config"

_FILTERS = {
    "control": [["1 kohm", "820 pF"], ["1 kohm", "820 pF"]],
    "separation": [["1 kohm", "22 nF"], ["1 kohm", "22 nF"], ["1 kohm", "820 pF"], ["1 kohm", "820 pF"]],
}

# key -> (kind, default); kinds are unit kinds from ``units`` or the tags handled in ``_value``
SCHEMA = {
    "geometry": {
        "electrode_lengths": ("list:length", ["1100 um", "400 um", "800 um", "400 um", "1100 um"]),
        "gap": ("length", "10 um"),
        "d": ("length", "270 um"),
    },
    "calibration": {
        "anchors": ("anchors", None),
        "tail_ratio": ("dimensionless", 6.0),
    },
    "hardware": {
        "filter": ("filter", "control"),
        "dac_step": ("voltage?", "10 mV"),
        "precompensate": ("bool", True),
        "settle": ("time", "10 us"),
        "dac_range": ("list:voltage", ["-60 V", "60 V"]),
    },
    "transport": {
        "start": ("length", "0 um"),
        "end": ("length", "1200 um"),
        "duration": ("time", "54 us"),
        "profile": ("str", "sin2"),
        "nu": ("frequency", "2.9 MHz"),
        "sample_period": ("time", "0.1 us"),
    },
    "scan": {
        "durations": ("list:time", ["16 us", "28 us", "43 us", "54 us", "200 us", "300 us", "590 us"]),
    },
    "separation": {
        "duration": ("time", "10 ms"),
        "nu_start": ("frequency", "700 kHz"),
        "nu_min": ("frequency", "90 kHz"),
        "nu_end": ("frequency", "2.9 MHz"),
        "sample_period": ("time", "1 us"),
        "track_stride": ("int", 10),
        "dynamics": ("bool", True),
        "filter": ("filter", "none"),
        "dac_step": ("voltage?", None),
    },
    "modes": {
        "voltages": ("list:voltage", ["8 V", "0 V", "0 V", "0 V", "8 V"]),
        "n_ions": ("int", 2),
    },
    "heating": {
        "temperature": ("temperature", "300 K"),
        "nu": ("frequency", "2.9 MHz"),
        "filter": ("filter", "control"),
        "couplings": ("couplings", "basis"),
        "location": ("str", "trap2"),
        "sides": ("int", 2),
    },
    "qubit": {
        "interval": ("time", "100 us"),
        "ramsey_transfer": ("time", "55 us"),
        "echo_transfer": ("time", "45 us"),
        "moved": ("bool", True),
        "shots": ("int", 200),
        "points": ("int", 16),
        "control_contrast": ("dimensionless", 0.968),
        "phase_offset": ("angle", "0.7 rad"),
        "line_amplitude": ("magnetic", "0 T"),
        "line_triggered": ("bool", True),
        "offset_sd": ("magnetic", "0 T"),
    },
    "thermometry": {
        "nbar": ("dimensionless", 140.0),
        "cold_nbar": ("dimensionless", 0.16),
        "rabi": ("frequency", "100 kHz"),
        "nu": ("frequency", "2.9 MHz"),
        "beams": ("str", "90"),
        "shots": ("int", 200),
        "points": ("int", 120),
        "periods": ("dimensionless", 3.0),
        "window": ("int?", 15),
    },
    "detect": {
        "histogram": ("str?", None),
        "fractions": ("list:dimensionless", [0.04, 0.95, 0.01]),
        "shots": ("int", 5050),
        "mu_bright": ("dimensionless", 12.0),
        "mu_dark": ("dimensionless", 0.2),
        "window": ("time", "200 us"),
        "threshold": ("int", 3),
    },
}

TOP_LEVEL = {"seed", "output"} | set(SCHEMA)


def parse_quantity(value, kind):
    # config files must spell out units for every dimensioned quantity
    return _parse(value, kind, require_unit=True)


def _int(value, key):
    if isinstance(value, bool) or not isinstance(value, int):
        raise InputError(f"{key}: expected an integer, got {value!r}", module=MODULE)
    return value


def _filter(value, key):
    if value in (None, "none"):
        return None
    if isinstance(value, str):
        if value not in _FILTERS:
            raise InputError(f"{key}: unknown filter {value!r}; use none, {', '.join(_FILTERS)} or a stage list",
                             module=MODULE)
        value = _FILTERS[value]
    if not isinstance(value, list) or not value:
        raise InputError(f"{key}: filter must be a list of [R, C] stages", module=MODULE)
    stages = []
    for st in value:
        if not isinstance(st, list) or len(st) != 2:
            raise InputError(f"{key}: each filter stage is [R, C]", module=MODULE)
        stages.append((parse_quantity(st[0], "resistance"), parse_quantity(st[1], "capacitance")))
    return tuple(stages)


def _anchors(value, key):
    if value is None:
        return None
    if not isinstance(value, list):
        raise InputError(f"{key}: expected a list of anchors", module=MODULE)
    out = []
    for a in value:
        if not isinstance(a, dict):
            raise InputError(f"{key}: each anchor is a mapping", module=MODULE)
        unknown = set(a) - {"voltages", "observable", "target", "location", "name"}
        if unknown:
            raise InputError(f"{key}: unknown anchor keys {sorted(unknown)}", module=MODULE)
        obs = a.get("observable")
        kind = {"frequency": "frequency", "field": "field", "curvature": "dimensionless"}.get(obs)
        if kind is None:
            raise InputError(f"{key}: observable must be frequency, field or curvature", module=MODULE)
        loc = a.get("location", "trap2")
        if not (isinstance(loc, str) and loc.startswith("trap")):
            loc = parse_quantity(loc, "length")
        out.append({"voltages": [parse_quantity(v, "voltage") for v in a["voltages"]], "observable": obs,
                    "target": parse_quantity(a["target"], kind), "location": loc, "name": str(a.get("name", ""))})
    return out


def _value(kind, value, key):
    optional = kind.endswith("?")
    kind = kind.rstrip("?")
    if optional and value is None:
        return None
    if kind == "int":
        return _int(value, key)
    if kind == "bool":
        if not isinstance(value, bool):
            raise InputError(f"{key}: expected true/false, got {value!r}", module=MODULE)
        return value
    if kind == "str":
        if not isinstance(value, (str, int)) or isinstance(value, bool):
            raise InputError(f"{key}: expected a string, got {value!r}", module=MODULE)
        return str(value)
    if kind == "filter":
        return _filter(value, key)
    if kind == "anchors":
        return _anchors(value, key)
    if kind == "couplings":
        if value == "basis":
            return "basis"
        if not isinstance(value, list):
            raise InputError(f"{key}: couplings are 'basis' or a list of fields per volt", module=MODULE)
        return [parse_quantity(v, "field") for v in value]
    if kind.startswith("list:"):
        if not isinstance(value, list):
            raise InputError(f"{key}: expected a list, got {value!r}", module=MODULE)
        return [parse_quantity(v, kind[5:]) for v in value]
    try:
        return parse_quantity(value, kind)
    except InputError as exc:
        raise InputError(f"{key}: {exc.args[0]}", module=MODULE) from None


def _section(name, raw):
    schema = SCHEMA[name]
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise InputError(f"section {name!r} must be a mapping", module=MODULE)
    unknown = set(raw) - set(schema)
    if unknown:
        raise InputError(f"unknown keys in {name!r}: {sorted(unknown)}", module=MODULE)
    return {k: _value(kind, raw.get(k, default), f"{name}.{k}") for k, (kind, default) in schema.items()}


@dataclass
class RunConfig:
    """Validated run configuration; ``raw`` is the document as written."""

    seed: int = 0
    output: str = "results"
    sections: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.sections[name]

    @classmethod
    def from_dict(cls, raw):
        raw = {} if raw is None else raw
        if not isinstance(raw, dict):
            raise InputError("config must be a mapping at the top level", module=MODULE)
        unknown = set(raw) - TOP_LEVEL
        if unknown:
            raise InputError(f"unknown config sections {sorted(unknown)}", module=MODULE)
        seed = _int(raw.get("seed", 0), "seed")
        if seed < 0:
            raise InputError("seed must be >= 0", module=MODULE)
        output = _value("str", raw.get("output", "results"), "output")
        sections = {name: _section(name, raw.get(name)) for name in SCHEMA}
        _check(sections)
        return cls(seed, output, sections, copy.deepcopy(raw))

    @classmethod
    def load(cls, path=None):
        if path is None:
            return cls.from_dict({})
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc.strerror}", module=MODULE) from None
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise InputError(f"config {path} is not valid YAML: {exc}", module=MODULE) from None
        return cls.from_dict(raw)

    def with_seed(self, seed):
        raw = copy.deepcopy(self.raw)
        raw["seed"] = seed
        return RunConfig.from_dict(raw)

    def digest(self):
        """SHA-256 of the canonical JSON form of the parsed (SI) configuration."""
        doc = {"seed": self.seed, "sections": self.sections}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialise {x!r}")


def _check(s):
    """Cross-field checks that the owning modules would otherwise report late."""
    g = s["geometry"]
    if len(g["electrode_lengths"]) != 5:
        raise InputError("geometry.electrode_lengths needs 5 entries", module=MODULE)
    lo, hi = s["hardware"]["dac_range"]
    if not lo < hi:
        raise InputError("hardware.dac_range must be increasing", module=MODULE)
    if s["transport"]["profile"] not in ("sin2", "poly"):
        raise InputError("transport.profile must be sin2 or poly", module=MODULE)
    if not s["scan"]["durations"]:
        raise InputError("scan.durations must not be empty", module=MODULE)
    if len(s["modes"]["voltages"]) != 5:
        raise InputError("modes.voltages needs 5 entries", module=MODULE)
    if len(s["detect"]["fractions"]) != 3 or not math.isclose(sum(s["detect"]["fractions"]), 1.0, abs_tol=1e-9):
        raise InputError("detect.fractions needs 3 entries summing to 1", module=MODULE)
    if s["separation"]["track_stride"] < 1:
        raise InputError("separation.track_stride must be >= 1", module=MODULE)
    for name in ("shots", "points"):
        if s["qubit"][name] < 1 or s["thermometry"][name] < 1:
            raise InputError(f"{name} must be >= 1", module=MODULE)
