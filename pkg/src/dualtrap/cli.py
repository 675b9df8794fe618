"""Command-line front end: ``dualtrap <command> --config run.yaml --out dir``.

Each command writes CSV artifacts and a ``manifest.json`` into the output
directory. Outputs depend only on the configuration and the seed. Passing a
manifest as ``--config`` re-runs the recorded configuration.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .config import RunConfig
from .errors import DomainError, DualTrapError, InputError

MANIFEST = "manifest.json"
COMMANDS = ("calibrate", "transport", "scan", "separate", "modes", "heating", "ramsey", "echo", "thermometry",
            "detect-fit")


def _fmt(x):
    return f"{x:.9g}" if isinstance(x, float) else str(x)


def _table(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(float(x)) if isinstance(x, (float, np.floating)) else _fmt(x) for x in r])
    return buf.getvalue()


# -- builders -----------------------------------------------------------------


def _basis(cfg: RunConfig):
    from .potential import Anchor, TrapGeometry, calibrate, default_anchors

    g = cfg["geometry"]
    geometry = TrapGeometry.from_lengths(g["electrode_lengths"], g["gap"], g["d"])
    c = cfg["calibration"]
    if c["anchors"] is None:
        anchors = default_anchors()
    else:
        anchors = [Anchor(tuple(a["voltages"]), a["observable"], a["target"], a["location"], a["name"])
                   for a in c["anchors"]]
    return calibrate(geometry, anchors, tail_ratio=c["tail_ratio"]), anchors


def _filter(stages):
    from .waveform import FilterModel

    return None if stages is None else FilterModel(stages)


def _hardware(cfg: RunConfig):
    from .dynamics import Hardware

    h = cfg["hardware"]
    return Hardware(_filter(h["filter"]), h["dac_step"] or None, h["precompensate"], h["settle"],
                    tuple(h["dac_range"]))


def _raman(cfg: RunConfig):
    from .thermometry import RamanConfig

    t = cfg["thermometry"]
    return RamanConfig(t["beams"], 2 * math.pi * t["rabi"], t["nu"])


def _count_model(cfg: RunConfig):
    from .detect import CountModel

    d = cfg["detect"]
    return CountModel(d["mu_bright"], d["mu_dark"], d["window"])


# -- commands -----------------------------------------------------------------


def cmd_calibrate(cfg, args):
    from .potential import basis_to_dict

    basis, anchors = _basis(cfg)
    rows = []
    for i, a in enumerate(anchors):
        name = a.name or f"anchor{i}"
        rows.append([name, a.observable, float(a.target), float(a.measure(basis)), float(a.residual(basis))])
    text = yaml.safe_dump(basis_to_dict(basis), sort_keys=True)
    return {"calibration.csv": _table(["anchor", "observable", "target", "value", "relative_residual"], rows),
            "basis.yaml": text}


def cmd_transport(cfg, args):
    from .dynamics import transport_round_trip, energy_gain_quanta, integrate, IonSystem
    from .potential import nearest_minimum
    from .waveform import program_to_csv

    basis, _ = _basis(cfg)
    t = cfg["transport"]
    prog = transport_round_trip(basis, t["duration"], _hardware(cfg), t["start"], t["end"], t["nu"], t["profile"],
                                t["sample_period"])
    z0, _ = nearest_minimum(basis, prog.samples[0], t["start"], window=20e-6)
    traj = integrate(basis, prog, IonSystem([z0], constants=basis.constants), nu_max=t["nu"] * 1.02)
    dn = float(energy_gain_quanta(traj, basis, prog.samples[-1])[0])
    return {"transport.csv": _table(["T_s", "delta_n"], [[t["duration"], dn]]),
            "program.csv": program_to_csv(prog), "trajectory.csv": traj.to_csv()}


def cmd_scan(cfg, args):
    from .dynamics import adiabaticity_scan, scan_to_csv

    basis, _ = _basis(cfg)
    t = cfg["transport"]
    rows = adiabaticity_scan(basis, cfg["scan"]["durations"], _hardware(cfg), threads=args.threads,
                             on_escape="inf", start=t["start"], end=t["end"], nu=t["nu"], profile=t["profile"],
                             sample_period=t["sample_period"])
    return {"scan.csv": scan_to_csv(rows)}


def cmd_separate(cfg, args):
    from .dynamics import Hardware, separation_gain, track_modes
    from .waveform import DEFAULT_RAILS, program_to_csv, synthesize_separation

    basis, _ = _basis(cfg)
    s = cfg["separation"]
    prog = synthesize_separation(basis, s["duration"], s["nu_start"], s["nu_min"], s["nu_end"], s["sample_period"])
    two = track_modes(basis, prog, n_ions=2, stride=s["track_stride"])
    one = track_modes(basis, prog, n_ions=1, stride=s["track_stride"])
    out = {
        "program.csv": program_to_csv(prog),
        "modes_two_ion.csv": _table(["t_s", "z1_m", "z2_m", "nu_com_Hz", "nu_stretch_Hz"],
                                    [[t, p[0], p[1], f[0], f[1]] for t, p, f in
                                     zip(two.times, two.positions, two.frequencies)]),
        "modes_single.csv": _table(["t_s", "z_m", "nu_signed_Hz"],
                                   [[t, p[0], f[0]] for t, p, f in zip(one.times, one.positions, one.frequencies)]),
    }
    if s["dynamics"]:
        hw = Hardware(_filter(s["filter"]), s["dac_step"] or None, False, 20e-6, DEFAULT_RAILS)
        _, dn = separation_gain(basis, prog, hw)
        out["separation_gain.csv"] = _table(["ion", "delta_n"], [[1, float(dn[0])], [2, float(dn[1])]])
    return out


def cmd_modes(cfg, args):
    from .dynamics import track_modes

    basis, _ = _basis(cfg)
    m = cfg["modes"]
    v = np.asarray(m["voltages"], float)
    tr = track_modes(basis, v[None, :], n_ions=m["n_ions"])
    if m["n_ions"] == 1:
        rows = [["single", tr.positions[0, 0], tr.frequencies[0, 0]]]
    else:
        com = float(np.mean(tr.positions[0]))
        rows = [[label, com, tr.frequencies[0, i]] for i, label in enumerate(tr.labels)]
        rows.append(["separation", float(tr.positions[0, 1] - tr.positions[0, 0]), float("nan")])
    return {"modes.csv": _table(["mode", "position_m", "frequency_Hz"], rows)}


def cmd_heating(cfg, args):
    from .heating import NoiseBudget, budget_from_basis, electrode_contributions, field_noise_psd, \
        johnson_heating_rate
    from .waveform import CONTROL_FILTER

    h = cfg["heating"]
    filt = _filter(h["filter"]) or CONTROL_FILTER
    if h["couplings"] == "basis":
        basis, _ = _basis(cfg)
        budget = budget_from_basis(basis, h["location"], h["temperature"], h["nu"], filt, h["sides"])
    else:
        budget = NoiseBudget(h["temperature"], tuple(h["couplings"]), h["nu"], filt)
    parts = electrode_contributions(budget)
    rows = [[i + 1, k, r] for i, (k, r) in enumerate(zip(budget.couplings, parts))]
    rows.append(["total", float("nan"), johnson_heating_rate(budget)])
    summary = [["heating_rate_quanta_per_s", johnson_heating_rate(budget)],
               ["field_psd_V2_per_m2_Hz", field_noise_psd(budget)], ["nu_Hz", budget.nu],
               ["temperature_K", budget.temperature]]
    return {"heating_sources.csv": _table(["source", "coupling_V_per_m_per_V", "rate_quanta_per_s"], rows),
            "heating.csv": _table(["quantity", "value"], summary)}


def _fringes(cfg, kind):
    from .detect import detection_contrast
    from .qubit import FieldNoiseModel, echo_sequence, fringe_scan, pulse_fidelity_for_control, ramsey_sequence

    q = cfg["qubit"]
    model = _count_model(cfg)
    threshold = cfg["detect"]["threshold"]
    fid = pulse_fidelity_for_control(q["control_contrast"], 3, detection_contrast(model, threshold))
    noise = FieldNoiseModel((q["line_amplitude"],) if q["line_amplitude"] else (), offset_sd=q["offset_sd"],
                            line_triggered=q["line_triggered"])
    offsets = {"trap4": q["phase_offset"], "source2": q["phase_offset"]}
    phis = np.linspace(0, 2 * np.pi, q["points"], endpoint=False)
    make = ramsey_sequence if kind == "ramsey" else echo_sequence
    transfer = q["ramsey_transfer"] if kind == "ramsey" else q["echo_transfer"]
    out, summary = {}, []
    runs = [("control", make(q["interval"], transfer, moved=False))]
    if q["moved"]:
        runs.append(("transfer", make(q["interval"], transfer, moved=True)))
    for i, (label, seq) in enumerate(runs):
        scan = fringe_scan(seq, phis, q["shots"], noise, fid, model, [cfg.seed, i], offsets, threshold)
        out[f"{kind}_{label}.csv"] = scan.to_csv()
        summary.append([label, scan.contrast, scan.contrast_stderr, scan.phase_offset, int(scan.degenerate)])
    if len(summary) == 2:
        d = summary[1][1] - summary[0][1]
        se = math.hypot(summary[0][2], summary[1][2])
        summary.append(["difference", d, se, float("nan"), 0])
    out[f"{kind}_summary.csv"] = _table(["run", "contrast", "stderr", "phase_rad", "degenerate"], summary)
    return out


def cmd_ramsey(cfg, args):
    return _fringes(cfg, "ramsey")


def cmd_echo(cfg, args):
    return _fringes(cfg, "echo")


def cmd_thermometry(cfg, args):
    from .thermometry import CrossingLookup, first_crossing_estimate, fit_nbar, flopping_to_csv, \
        synthetic_flopping

    t = cfg["thermometry"]
    rc = _raman(cfg)
    times = np.linspace(0, t["periods"] * 2 * math.pi / rc.rabi, t["points"])
    ss = np.random.SeedSequence(cfg.seed)
    hot_seed, cold_seed = ss.spawn(2)
    p_hot, se_hot = synthetic_flopping(t["nbar"], rc, times, t["shots"], hot_seed)
    p_cold, se_cold = synthetic_flopping(t["cold_nbar"], rc, times, t["shots"], cold_seed)
    fit_hot = fit_nbar(times, p_hot, rc, se_hot)
    fit_cold = fit_nbar(times, p_cold, rc, se_cold)
    lookup = CrossingLookup(rc)
    rows = [["fit_hot", fit_hot.nbar, fit_hot.stderr], ["fit_cold", fit_cold.nbar, fit_cold.stderr]]
    try:
        est = first_crossing_estimate((times, p_hot), (times, p_cold), rc, fit_cold.nbar, lookup, t["window"])
        rows.append(["first_crossing_hot", est, float("nan")])
    except DomainError as exc:
        print(f"warning: {exc}", file=sys.stderr)
    return {"flopping_hot.csv": flopping_to_csv(times, p_hot, se_hot),
            "flopping_cold.csv": flopping_to_csv(times, p_cold, se_cold),
            "crossing_lookup.csv": lookup.to_csv(),
            "nbar.csv": _table(["estimator", "nbar", "stderr"], rows)}


def cmd_detect_fit(cfg, args):
    from .detect import PhotonHistogram, fit_ion_fractions, fractions_to_csv, histogram_from_csv, \
        histogram_to_csv, simulate_mixture

    d = cfg["detect"]
    model = _count_model(cfg)
    if d["histogram"] is not None:
        path = Path(d["histogram"])
        try:
            hist = histogram_from_csv(path.read_text())
        except OSError as exc:
            raise InputError(f"cannot read histogram {path}: {exc.strerror}", module="cli") from None
    else:
        _, counts = simulate_mixture(d["fractions"], model, d["shots"], cfg.seed)
        hist = PhotonHistogram.from_samples(counts)
    fit = fit_ion_fractions(hist, model)
    return {"histogram.csv": histogram_to_csv(hist), "fractions.csv": fractions_to_csv(fit)}


HANDLERS = {
    "calibrate": cmd_calibrate, "transport": cmd_transport, "scan": cmd_scan, "separate": cmd_separate,
    "modes": cmd_modes, "heating": cmd_heating, "ramsey": cmd_ramsey, "echo": cmd_echo,
    "thermometry": cmd_thermometry, "detect-fit": cmd_detect_fit,
}


# -- plumbing -----------------------------------------------------------------


def _load(path):
    """Config from YAML, or the configuration recorded in a previous run's manifest."""
    if path is not None and Path(path).name == MANIFEST:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read manifest {path}: {exc}", module="cli") from None
        if "config" not in doc:
            raise InputError(f"{path} has no recorded config", module="cli")
        return RunConfig.from_dict(doc["config"])
    return RunConfig.load(path)


def _manifest(command, cfg: RunConfig, outputs):
    raw = dict(cfg.raw)
    raw["seed"] = cfg.seed
    doc = {
        "command": command,
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "config": raw,
        "versions": {"dualtrap": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "outputs": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(outputs.items())},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def build_parser():
    p = argparse.ArgumentParser(prog="dualtrap", description="Ion shuttling and separation simulator.")
    p.add_argument("--version", action="version", version=f"dualtrap {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML run configuration or a previous manifest.json")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", help="output directory (default: config 'output')")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for scan")
    return p


def run(command, config=None, seed=None, out=None, threads=1):
    """Execute one command; returns the process exit code."""
    args = argparse.Namespace(command=command, config=config, seed=seed, out=out, threads=threads)
    try:
        if command not in HANDLERS:
            raise InputError(f"unknown command {command!r}", module="cli")
        if threads < 1:
            raise InputError("--threads must be >= 1", module="cli")
        cfg = _load(config)
        if seed is not None:
            cfg = cfg.with_seed(seed)
        outputs = HANDLERS[command](cfg, args)
        outdir = Path(out if out is not None else cfg.output)
        outdir.mkdir(parents=True, exist_ok=True)
        for name, text in outputs.items():
            (outdir / name).write_text(text)
        (outdir / MANIFEST).write_text(_manifest(command, cfg, outputs))
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DualTrapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.seed, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
