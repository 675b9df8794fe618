import math

import pytest
import yaml

from dualtrap.config import SCHEMA, RunConfig
from dualtrap.errors import InputError
from dualtrap.units import format_quantity, parse_quantity


@pytest.mark.parametrize("text, kind, si", [
    ("270 um", "length", 270e-6),
    ("2.9 MHz", "frequency", 2.9e6),
    ("820 pF", "capacitance", 820e-12),
    ("1 kohm", "resistance", 1e3),
    ("10 mV", "voltage", 10e-3),
    ("54 us", "time", 54e-6),
    ("90 deg", "angle", math.pi / 2),
    ("2 mG", "magnetic", 2e-7),
    ("1e-3 m", "length", 1e-3),
    (300, "temperature", 300.0),
])
def test_parse_quantity(text, kind, si):
    assert parse_quantity(text, kind) == pytest.approx(si, rel=1e-12)


@pytest.mark.parametrize("text, kind", [("3 MHz", "length"), ("fast", "time"), (True, "length"),
                                        ("inf m", "length"), ([1], "time")])
def test_parse_quantity_rejects(text, kind):
    with pytest.raises(InputError):
        parse_quantity(text, kind)


def test_format_round_trip():
    assert parse_quantity(format_quantity(2.9e6, "MHz", "frequency"), "frequency") == pytest.approx(2.9e6)


def test_defaults_in_si():
    cfg = RunConfig.load()
    assert cfg.seed == 0
    assert cfg["geometry"]["d"] == pytest.approx(270e-6)
    assert cfg["transport"]["duration"] == pytest.approx(54e-6)
    assert cfg["hardware"]["filter"] == ((1e3, 820e-12), (1e3, 820e-12))
    assert len(cfg["scan"]["durations"]) == 7
    assert set(cfg.sections) == set(SCHEMA)


def test_yaml_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"seed": 4, "transport": {"duration": "30 us", "profile": "poly"}}))
    cfg = RunConfig.load(path)
    assert cfg.seed == 4
    assert cfg["transport"]["duration"] == pytest.approx(30e-6)
    assert cfg["transport"]["profile"] == "poly"
    assert cfg["transport"]["end"] == pytest.approx(1.2e-3)


@pytest.mark.parametrize("raw", [
    {"bogus": {}},
    {"transport": {"speed": "1 m"}},
    {"transport": "fast"},
    {"seed": -1},
    {"seed": 1.5},
    {"transport": {"duration": "54 MHz"}},
    {"transport": {"profile": "cubic"}},
    {"hardware": {"dac_range": ["10 V", "0 V"]}},
    {"modes": {"voltages": ["8 V"] * 4}},
    {"detect": {"fractions": [0.5, 0.6, 0.0]}},
    {"separation": {"track_stride": 0}},
    {"qubit": {"shots": 0}},
    {"hardware": {"precompensate": "yes"}},
    {"scan": {"durations": []}},
    {"transport": {"duration": 54e-6}},
    {"scan": {"durations": ["16 us", 3e-5]}},
])
def test_invalid_configs_rejected(raw):
    with pytest.raises(InputError):
        RunConfig.from_dict(raw)


def test_bare_numbers_only_for_dimensionless():
    cfg = RunConfig.from_dict({"thermometry": {"nbar": 20}, "calibration": {"tail_ratio": 5}})
    assert cfg["thermometry"]["nbar"] == 20.0
    with pytest.raises(InputError, match="explicit unit"):
        RunConfig.from_dict({"heating": {"temperature": 300}})


def test_bad_files(tmp_path):
    with pytest.raises(InputError):
        RunConfig.load(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("transport: [unclosed\n")
    with pytest.raises(InputError):
        RunConfig.load(bad)
    top = tmp_path / "list.yaml"
    top.write_text("- 1\n- 2\n")
    with pytest.raises(InputError):
        RunConfig.load(top)


def test_digest_tracks_parsed_values_and_seed():
    a = RunConfig.from_dict({"transport": {"duration": "54 us"}})
    b = RunConfig.from_dict({"transport": {"duration": "0.054 ms"}})
    assert a.digest() == b.digest()
    assert a.with_seed(1).digest() != a.digest()
    assert a.with_seed(1).seed == 1 and a.seed == 0
