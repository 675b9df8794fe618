"""Two-level qubit through Ramsey and spin-echo sequences with transfers and field noise.

Pulses are instantaneous rotations; a depolarising factor per pulse models
imperfect pulses, preparation and the rest of the non-transfer contrast loss.
Free evolution accumulates ``2 pi df/dB int B dt`` between the two levels.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .detect import THRESHOLD, CountModel, detection_contrast, sample_counts
from .errors import InputError

MODULE = "qubit"
SENSITIVITY = 2.1e10  # Hz/T
LINE_HZ = 60.0
CONTROL_CONTRAST = 0.968
DEFAULT_PHASE_OFFSET = 0.7  # rad, laser phase of trap #4 (or the second source) relative to trap #2


@dataclass(frozen=True)
class Pulse:
    area: float
    phase: float = 0.0
    location: str = "trap2"
    scanned: bool = False
    length: float = 1.5e-6


@dataclass(frozen=True)
class Wait:
    duration: float
    location: str = "trap2"


@dataclass(frozen=True)
class Transfer:
    duration: float
    source: str = "trap2"
    target: str = "trap4"


@dataclass(frozen=True)
class PulseSequence:
    events: tuple

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        for e in self.events:
            if isinstance(e, Pulse):
                if not (math.isfinite(e.area) and math.isfinite(e.phase)):
                    raise InputError("pulse area and phase must be finite", module=MODULE)
            elif isinstance(e, (Wait, Transfer)):
                if not e.duration >= 0:
                    raise InputError("durations must be >= 0", module=MODULE)
            else:
                raise InputError(f"unknown event {e!r}", module=MODULE)
        if not any(isinstance(e, Pulse) for e in self.events):
            raise InputError("sequence has no pulses", module=MODULE)

    @property
    def duration(self):
        return sum(e.duration for e in self.events if not isinstance(e, Pulse))

    @property
    def n_pulses(self):
        return sum(isinstance(e, Pulse) for e in self.events)

    def free_intervals(self):
        """``(start, end, sign)`` for each free-evolution stretch; sign flips at every pi pulse."""
        t, sign, out = 0.0, 1.0, []
        for e in self.events:
            if isinstance(e, Pulse):
                if abs(abs(e.area) - math.pi) < 1e-12:
                    sign = -sign
            else:
                out.append((t, t + e.duration, sign))
                t += e.duration
        return out


def ramsey_sequence(interval=100e-6, transfer=55e-6, moved=True):
    """pi/2 in trap #2, transfer to trap #4 within ``interval``, scanned pi/2 at the far trap."""
    if moved:
        if not transfer <= interval:
            raise InputError("transfer must fit inside the Ramsey interval", module=MODULE)
        rest = 0.5 * (interval - transfer)
        return PulseSequence((Pulse(math.pi / 2), Wait(rest), Transfer(transfer), Wait(rest, "trap4"),
                              Pulse(math.pi / 2, location="trap4", scanned=True)))
    return PulseSequence((Pulse(math.pi / 2), Wait(interval), Pulse(math.pi / 2, location="trap4", scanned=True)))


def echo_sequence(interval=100e-6, transfer=45e-6, moved=True):
    """pi/2 - (transfer) - pi - (transfer back) - scanned pi/2, both pi/2 pulses in trap #2.

    The scanned pulse comes from a second source with a fixed phase offset,
    tagged ``"source2"``. Without transfer the pi pulse is applied in trap #2.
    """
    half = 0.5 * interval
    if moved:
        if not transfer <= half:
            raise InputError("each transfer must fit inside half the echo interval", module=MODULE)
        rest = half - transfer
        first = (Wait(rest), Transfer(transfer, "trap2", "trap4"))
        second = (Transfer(transfer, "trap4", "trap2"), Wait(rest))
        where = "trap4"
    else:
        first, second, where = (Wait(half),), (Wait(half),), "trap2"
    return PulseSequence((Pulse(math.pi / 2),) + first + (Pulse(math.pi, location=where),) + second
                         + (Pulse(math.pi / 2, location="source2", scanned=True),))


@dataclass(frozen=True)
class FieldNoiseModel:
    """Ambient field ``B(t)`` relative to the qubit resonance, tesla.

    ``harmonics[k]`` is the amplitude at ``(k + 1) * 60 Hz``. Line-triggered
    experiments start at line phase 0; free-running ones at a random phase.
    ``offset_sd`` draws an independent constant offset per experiment.
    """

    harmonics: tuple[float, ...] = ()
    line_phases: tuple[float, ...] = ()
    offset: float = 0.0
    offset_sd: float = 0.0
    drift: float = 0.0
    sensitivity: float = SENSITIVITY
    line_triggered: bool = True
    line_hz: float = LINE_HZ

    def __post_init__(self):
        object.__setattr__(self, "harmonics", tuple(float(a) for a in self.harmonics))
        phases = tuple(float(p) for p in self.line_phases) or (0.0,) * len(self.harmonics)
        if len(phases) != len(self.harmonics):
            raise InputError("line_phases must match harmonics", module=MODULE)
        object.__setattr__(self, "line_phases", phases)
        if self.offset_sd < 0:
            raise InputError("offset_sd must be >= 0", module=MODULE)

    def phase_integral(self, t0, t1, start_phase=0.0, offset=0.0):
        """``2 pi s int_{t0}^{t1} B dt`` for an experiment that starts at line phase ``start_phase``."""
        start_phase = np.asarray(start_phase, dtype=float)
        acc = (self.offset + offset) * (t1 - t0) + 0.5 * self.drift * (t1**2 - t0**2)
        acc = acc + np.zeros_like(start_phase)
        for k, (a, p) in enumerate(zip(self.harmonics, self.line_phases), start=1):
            w = 2 * math.pi * self.line_hz * k
            acc = acc + a / w * (np.cos(w * t0 + k * start_phase + p) - np.cos(w * t1 + k * start_phase + p))
        return 2 * math.pi * self.sensitivity * acc

    def draw(self, rng, shots):
        """Per-experiment ``(start_phase, offset)``."""
        phase = np.zeros(shots) if self.line_triggered else rng.uniform(0, 2 * math.pi, shots)
        offset = rng.normal(0.0, self.offset_sd, shots) if self.offset_sd > 0 else np.zeros(shots)
        return phase, offset


NO_NOISE = FieldNoiseModel()


def pulse_fidelity_for_control(control=CONTROL_CONTRAST, n_pulses=3, readout=None):
    """Per-pulse contrast factor ``f`` with ``readout * f**n_pulses = control``."""
    readout = detection_contrast() if readout is None else readout
    f = (control / readout) ** (1.0 / n_pulses)
    if not 0 < f <= 1:
        raise InputError("control contrast exceeds the readout limit", module=MODULE)
    return f


def _rotation(theta, phi):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * np.exp(-1j * phi) * s], [-1j * np.exp(1j * phi) * s, c]])


def _bloch(psi):
    a, b = psi[0], psi[1]
    x = 2 * np.real(np.conj(a) * b)
    y = 2 * np.imag(np.conj(a) * b)
    z = np.abs(b) ** 2 - np.abs(a) ** 2
    return np.array([x, y, z])


def _location_phase(tag, offsets):
    return offsets.get(tag, 0.0)


def evolve(sequence: PulseSequence, phi=0.0, noise: FieldNoiseModel = NO_NOISE, fidelity=1.0,
           phase_offsets=None, start_phase=0.0, offset=0.0, return_state=False):
    """``P_up`` after ``sequence`` for scanned phase ``phi``, starting in spin down.

    Pure-state evolution; each pulse then shrinks the Bloch vector by
    ``fidelity`` toward the centre, which multiplies the fringe contrast.
    """
    if not 0 <= fidelity <= 1:
        raise InputError("fidelity must lie in [0, 1]", module=MODULE)
    offsets = {"trap4": DEFAULT_PHASE_OFFSET, "source2": DEFAULT_PHASE_OFFSET} if phase_offsets is None \
        else dict(phase_offsets)
    psi = np.array([1.0 + 0j, 0.0 + 0j])
    t = 0.0
    for e in sequence.events:
        if isinstance(e, Pulse):
            ph = e.phase + _location_phase(e.location, offsets) + (phi if e.scanned else 0.0)
            psi = _rotation(e.area, ph) @ psi
        else:
            a = noise.phase_integral(t, t + e.duration, start_phase, offset)
            psi = psi * np.array([1.0, np.exp(-1j * float(a))])
            t += e.duration
        norm = np.vdot(psi, psi).real
        if abs(norm - 1) > 1e-9:
            raise AssertionError("norm not preserved")
    shrink = fidelity ** sequence.n_pulses
    z = shrink * _bloch(psi)[2]
    p_up = 0.5 * (1 + z)
    return (p_up, psi) if return_state else float(p_up)


def ideal_contrast(sequence: PulseSequence, fidelity=1.0, model: CountModel | None = None):
    """Noiseless contrast: ``fidelity**n_pulses`` times the readout factor when a model is given."""
    c = fidelity ** sequence.n_pulses
    return c * (detection_contrast(model) if model is not None else 1.0)


def accumulated_phase(sequence: PulseSequence, noise: FieldNoiseModel, start_phase=0.0, offset=0.0):
    """Net dynamic phase with the sign flipped after every pi pulse."""
    return sum(sign * noise.phase_integral(a, b, start_phase, offset) for a, b, sign in sequence.free_intervals())


def spin_echo_cancellation(sequence: PulseSequence, noise: FieldNoiseModel, start_phase=0.0, offset=0.0):
    """Residual dynamic phase of an echo sequence (the full phase when there is no pi pulse)."""
    pis = [i for i, e in enumerate(sequence.events) if isinstance(e, Pulse) and abs(abs(e.area) - math.pi) < 1e-12]
    if len(pis) > 1:
        raise InputError("expected at most one pi pulse", module=MODULE)
    if pis:
        t, t_pi = 0.0, None
        for i, e in enumerate(sequence.events):
            if i == pis[0]:
                t_pi = t
            if not isinstance(e, Pulse):
                t += e.duration
        # tolerance is half the pi pulse's own length
        if abs(t_pi - 0.5 * t) > 0.5 * sequence.events[pis[0]].length:
            raise InputError("pi pulse is not at the free-evolution midpoint", module=MODULE)
    return accumulated_phase(sequence, noise, start_phase, offset)


@dataclass
class FringeScan:
    phi: np.ndarray
    p_up: np.ndarray
    stderr: np.ndarray
    contrast: float
    contrast_stderr: float
    phase_offset: float
    offset_level: float
    degenerate: bool = False
    metadata: dict = field(default_factory=dict)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phi_rad", "P_up", "stderr"])
        for a, p, s in zip(self.phi, self.p_up, self.stderr):
            w.writerow([f"{a:.9g}", f"{p:.9g}", f"{s:.9g}"])
        return buf.getvalue()


def fit_fringe(phi, p, sigma=None):
    """Weighted linear fit of ``P = a + b cos(phi) + c sin(phi)``.

    Returns ``(C, sigma_C, phi', a, degenerate)`` with ``P = a + C/2 cos(phi + phi')``.
    """
    phi, p = np.asarray(phi, float), np.asarray(p, float)
    sigma = np.ones_like(p) if sigma is None else np.maximum(np.asarray(sigma, float), 1e-12)
    X = np.column_stack([np.ones_like(phi), np.cos(phi), np.sin(phi)]) / sigma[:, None]
    coef, *_ = np.linalg.lstsq(X, p / sigma, rcond=None)
    cov = np.linalg.inv(X.T @ X)
    a, b, c = coef
    amp = math.hypot(b, c)
    contrast = 2 * amp
    if amp > 0:
        g = np.array([0.0, b, c]) / amp * 2
        se = math.sqrt(max(g @ cov @ g, 0.0))
    else:
        se = 2 * math.sqrt(max(cov[1, 1], cov[2, 2]))
    degenerate = not contrast > 2 * se
    return contrast, se, -math.atan2(c, b), a, degenerate


def fringe_scan(sequence: PulseSequence, phis, shots=200, noise: FieldNoiseModel = NO_NOISE, fidelity=1.0,
                model: CountModel | None = CountModel(), seed=0, phase_offsets=None, threshold=THRESHOLD):
    """Shot-level fringe: spin outcomes, then photon counts classified at ``threshold``.

    Each phase point uses its own random stream derived from ``(seed, index)``.
    With ``model=None`` the spin outcome is read perfectly.
    """
    phis = np.asarray(phis, float)
    if len(phis) < 8:
        raise InputError("need at least 8 phase points", module=MODULE)
    if shots < 100:
        raise InputError("need at least 100 shots per point", module=MODULE)
    root = np.random.SeedSequence(seed)
    p_hat = np.empty(len(phis))
    for i, phi in enumerate(phis):
        rng = np.random.default_rng(np.random.SeedSequence(root.entropy, spawn_key=(i,)))
        start, off = noise.draw(rng, shots)
        p = np.array([evolve(sequence, phi, noise, fidelity, phase_offsets, s, o) for s, o in zip(start, off)]) \
            if (noise.harmonics or noise.offset_sd or noise.drift or noise.offset) else \
            np.full(shots, evolve(sequence, phi, noise, fidelity, phase_offsets))
        up = rng.random(shots) < p
        if model is None:
            dark = up
        else:
            dark = sample_counts(np.where(up, 0, 1), model, shots, rng) <= threshold
        p_hat[i] = dark.mean()
    se = np.sqrt(np.maximum(p_hat * (1 - p_hat), 0.25 / shots) / shots)
    c, c_se, off, level, degenerate = fit_fringe(phis, p_hat, se)
    return FringeScan(phis, p_hat, se, c, c_se, off, level, degenerate,
                      {"shots": shots, "seed": seed, "fidelity": fidelity})
