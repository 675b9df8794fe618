"""Unit-suffixed quantities for config files.

Values are written like ``"270 um"`` or ``"2.9 MHz"`` and converted to SI at
parse time. Bare numbers are taken to be SI already.
"""
import math
import re

from .errors import InputError

_SCALE = {
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "μm": 1e-6, "nm": 1e-9},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "μs": 1e-6, "ns": 1e-9},
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "voltage": {"V": 1.0, "mV": 1e-3, "uV": 1e-6},
    "resistance": {"ohm": 1.0, "Ω": 1.0, "kohm": 1e3, "kΩ": 1e3, "Mohm": 1e6, "MΩ": 1e6},
    "capacitance": {"F": 1.0, "uF": 1e-6, "µF": 1e-6, "nF": 1e-9, "pF": 1e-12},
    "temperature": {"K": 1.0},
    "field": {"V/m": 1.0, "V/cm": 100.0},
    "magnetic": {"T": 1.0, "mT": 1e-3, "uT": 1e-6, "µT": 1e-6, "G": 1e-4, "mG": 1e-7},
    "magnetic_rate": {"T/s": 1.0, "G/s": 1e-4, "mG/s": 1e-7},
    "rate": {"1/s": 1.0, "Hz": 1.0},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0},
    "dimensionless": {"": 1.0, "%": 0.01},
}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*$")


def parse_quantity(value, kind, require_unit=False):
    """Convert ``value`` to SI for the physical ``kind`` (e.g. ``"length"``).

    With ``require_unit`` a bare number is rejected unless ``kind`` is dimensionless.
    """
    if kind not in _SCALE:
        raise InputError(f"unknown quantity kind {kind!r}", module="config")
    if isinstance(value, bool):
        raise InputError(f"expected a {kind}, got {value!r}", module="config")
    if isinstance(value, (int, float)):
        if require_unit and kind != "dimensionless":
            raise InputError(f"{kind} {value!r} needs an explicit unit, e.g. {value} {_example_unit(kind)}",
                             module="config")
        out = float(value)
    elif isinstance(value, str):
        m = _NUMBER.match(value)
        if m is None:
            raise InputError(f"cannot parse {kind} {value!r}", module="config")
        number, unit = m.groups()
        table = _SCALE[kind]
        if unit not in table:
            raise InputError(
                f"unit {unit!r} not valid for {kind}; use one of {sorted(table)}",
                module="config",
            )
        out = float(number) * table[unit]
    else:
        raise InputError(f"expected a {kind}, got {value!r}", module="config")
    if not math.isfinite(out):
        raise InputError(f"non-finite {kind} {value!r}", module="config")
    return out


def _example_unit(kind):
    return next(u for u, f in _SCALE[kind].items() if f == 1.0)


def parse_list(values, kind):
    if not isinstance(values, (list, tuple)):
        raise InputError(f"expected a list of {kind} values, got {values!r}", module="config")
    return [parse_quantity(v, kind) for v in values]


def format_quantity(value, unit, kind):
    """Inverse of :func:`parse_quantity` for writing configs."""
    scale = _SCALE[kind][unit]
    return f"{value / scale:.12g} {unit}".rstrip()
