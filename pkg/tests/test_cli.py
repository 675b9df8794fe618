import csv
import io
import json

import pytest
import yaml

from dualtrap.cli import COMMANDS, MANIFEST, build_parser, main, run

QUICK = ("calibrate", "modes", "heating", "ramsey", "echo", "detect-fit")


def write_config(path, raw):
    path.write_text(yaml.safe_dump(raw))
    return str(path)


def read_table(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_parser_knows_every_command():
    p = build_parser()
    for c in COMMANDS:
        assert p.parse_args([c]).command == c
    with pytest.raises(SystemExit):
        p.parse_args(["launch"])


@pytest.mark.parametrize("command", QUICK)
def test_quick_commands_write_outputs_and_manifest(command, tmp_path):
    assert run(command, out=str(tmp_path)) == 0
    doc = json.loads((tmp_path / MANIFEST).read_text())
    assert doc["command"] == command and doc["seed"] == 0
    written = {p.name for p in tmp_path.iterdir()} - {MANIFEST}
    assert written == set(doc["outputs"])
    assert len(doc["config_sha256"]) == 64


def test_heating_output(tmp_path):
    assert main(["heating", "--out", str(tmp_path)]) == 0
    rows = {r["quantity"]: float(r["value"]) for r in read_table(tmp_path / "heating.csv")}
    assert rows["heating_rate_quanta_per_s"] == pytest.approx(3.5639, rel=1e-3)


def test_detect_fit_recovers_fractions(tmp_path):
    assert run("detect-fit", out=str(tmp_path)) == 0
    rows = read_table(tmp_path / "fractions.csv")
    assert [float(r["fraction"]) for r in rows] == pytest.approx([0.04, 0.95, 0.01], abs=0.015)


def test_detect_fit_reads_measured_histogram(tmp_path):
    assert run("detect-fit", out=str(tmp_path / "a")) == 0
    hist = tmp_path / "a" / "histogram.csv"
    cfg = write_config(tmp_path / "run.yaml", {"detect": {"histogram": str(hist)}})
    assert run("detect-fit", cfg, out=str(tmp_path / "b")) == 0
    assert (tmp_path / "b" / "fractions.csv").read_text() == (tmp_path / "a" / "fractions.csv").read_text()


@pytest.mark.parametrize("command", ["transport", "thermometry", "detect-fit", "echo"])
def test_repeat_runs_are_byte_identical(command, tmp_path):
    cfg = write_config(tmp_path / "run.yaml", {"seed": 7, "qubit": {"shots": 100}})
    assert run(command, cfg, out=str(tmp_path / "a")) == 0
    assert run(command, cfg, out=str(tmp_path / "b")) == 0
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")


def test_seed_changes_stochastic_outputs(tmp_path):
    assert run("detect-fit", seed=1, out=str(tmp_path / "a")) == 0
    assert run("detect-fit", seed=2, out=str(tmp_path / "b")) == 0
    assert (tmp_path / "a" / "histogram.csv").read_bytes() != (tmp_path / "b" / "histogram.csv").read_bytes()


def test_manifest_rerun_reproduces_outputs(tmp_path):
    cfg = write_config(tmp_path / "run.yaml", {"seed": 3, "qubit": {"shots": 100, "points": 8}})
    assert run("ramsey", cfg, out=str(tmp_path / "a")) == 0
    assert run("ramsey", str(tmp_path / "a" / MANIFEST), out=str(tmp_path / "b")) == 0
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")


def test_seed_override_is_recorded(tmp_path):
    assert run("detect-fit", seed=11, out=str(tmp_path / "a")) == 0
    assert json.loads((tmp_path / "a" / MANIFEST).read_text())["seed"] == 11
    assert run("detect-fit", str(tmp_path / "a" / MANIFEST), out=str(tmp_path / "b")) == 0
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")


def test_transport_without_displacement_gives_no_gain(tmp_path):
    cfg = write_config(tmp_path / "run.yaml", {"transport": {"end": "0 um"}})
    assert run("transport", cfg, out=str(tmp_path)) == 0
    (row,) = read_table(tmp_path / "transport.csv")
    assert abs(float(row["delta_n"])) < 1e-6


def test_modes_single_well(tmp_path):
    cfg = write_config(tmp_path / "run.yaml", {"modes": {"voltages": ["8 V", "0 V", "0 V", "0 V", "8 V"]}})
    assert run("modes", cfg, out=str(tmp_path)) == 0
    rows = {r["mode"]: r for r in read_table(tmp_path / "modes.csv")}
    assert float(rows["stretch"]["frequency_Hz"]) / float(rows["COM"]["frequency_Hz"]) == pytest.approx(3**0.5, rel=1e-3)


def test_input_errors_exit_2(tmp_path, capsys):
    bad = write_config(tmp_path / "bad.yaml", {"transport": {"speed": "1 m"}})
    assert run("transport", bad, out=str(tmp_path)) == 2
    assert "unknown keys" in capsys.readouterr().err
    assert run("heating", str(tmp_path / "missing.yaml"), out=str(tmp_path)) == 2
    assert run("scan", threads=0, out=str(tmp_path)) == 2
    assert run("warp", out=str(tmp_path)) == 2
    broken = tmp_path / MANIFEST
    broken.write_text("{}")
    assert run("heating", str(broken), out=str(tmp_path / "x")) == 2


def test_model_errors_exit_3(tmp_path, capsys):
    anchors = [{"voltages": ["8 V", "0 V", "8 V", "0 V", "8 V"], "observable": "frequency", "target": "50 MHz",
                "location": "trap2"}]
    cfg = write_config(tmp_path / "run.yaml", {"calibration": {"anchors": anchors}})
    assert run("calibrate", cfg, out=str(tmp_path / "out")) == 3
    assert capsys.readouterr().err.startswith("error:")
    assert not (tmp_path / "out").exists()
