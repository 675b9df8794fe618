"""Electrode voltage programs: transport and separation synthesis, DAC and filter models.

A :class:`VoltageProgram` is a uniformly sampled series of 5-electrode voltage
vectors. Synthesis works in the ideal (electrode-side) domain; hardware
imperfections are applied afterwards with :func:`quantize` and
:func:`apply_filter`.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from .errors import InputError, SynthesisError
from .potential import (
    N_ELECTRODES,
    ElectrodeBasis,
    curvature_for_frequency,
    find_minima,
    nearest_minimum,
)

MODULE = "waveform"
DEFAULT_RAILS = (0.0, 10.0)
#: The surrogate needs electrode-3 voltages well below zero to hold 2.9 MHz
#: over the 800 um electrode, so transport uses wider rails.
TRANSPORT_RAILS = (-60.0, 60.0)
ENDPOINT_VOLTAGES = (8.0, 0.0, 8.0, 0.0, 8.0)
SEPARATION_START = (8.0, 0.0, 0.0, 0.0, 8.0)


@dataclass
class VoltageProgram:
    sample_period: float
    samples: np.ndarray
    metadata: dict = field(default_factory=dict)
    rails: tuple[float, float] = DEFAULT_RAILS

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.samples.shape[1] != N_ELECTRODES:
            raise InputError(f"samples must have {N_ELECTRODES} columns", module=MODULE)
        if not self.sample_period > 0:
            raise InputError("sample_period must be positive", module=MODULE)
        if not np.all(np.isfinite(self.samples)):
            raise InputError("non-finite voltage samples", module=MODULE)
        lo, hi = self.rails
        if self.samples.min() < lo - 1e-9 or self.samples.max() > hi + 1e-9:
            raise InputError(
                f"samples span [{self.samples.min():.3f}, {self.samples.max():.3f}] V, outside rails {self.rails}",
                module=MODULE,
            )

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return (len(self.samples) - 1) * self.sample_period

    @property
    def times(self):
        return np.arange(len(self.samples)) * self.sample_period

    def with_samples(self, samples, **meta):
        return replace(self, samples=np.asarray(samples, dtype=float), metadata={**self.metadata, **meta})


def constant_program(voltages, duration, sample_period, rails=DEFAULT_RAILS, **meta):
    n = int(round(duration / sample_period)) + 1
    return VoltageProgram(sample_period, np.tile(np.asarray(voltages, float), (n, 1)), dict(meta), rails)


def concatenate(*programs):
    """Join programs end to start; the shared boundary sample is kept once."""
    first = programs[0]
    parts = [first.samples]
    for p in programs[1:]:
        if not math.isclose(p.sample_period, first.sample_period, rel_tol=1e-12):
            raise InputError("cannot concatenate programs with different sample periods", module=MODULE)
        parts.append(p.samples[1:])
    lo = min(p.rails[0] for p in programs)
    hi = max(p.rails[1] for p in programs)
    return VoltageProgram(first.sample_period, np.vstack(parts), dict(first.metadata), (lo, hi))


def reverse(program: VoltageProgram):
    return program.with_samples(program.samples[::-1].copy(), reversed=True)


def round_trip(forward: VoltageProgram, hold: float):
    """Forward leg, a constant hold at the far end, then the time-reversed leg."""
    n_hold = int(round(hold / forward.sample_period))
    hold_p = forward.with_samples(np.tile(forward.samples[-1], (n_hold + 1, 1)))
    out = concatenate(forward, hold_p, reverse(forward))
    out.metadata.update(purpose="round_trip", hold=n_hold * forward.sample_period)
    return out


def hold_upsample(program: VoltageProgram, factor: int):
    """Split each sample period into ``factor`` steps holding the DAC value (zero-order hold)."""
    factor = int(factor)
    if factor < 1:
        raise InputError("upsampling factor must be >= 1", module=MODULE)
    if factor == 1:
        return program
    s = program.samples
    held = np.vstack([np.repeat(s[:-1], factor, axis=0), s[-1:]])
    return replace(program, sample_period=program.sample_period / factor, samples=held,
                   metadata={**program.metadata, "upsampled": factor})


# -- trajectories -------------------------------------------------------------

PROFILES = ("sin2", "poly")


@dataclass(frozen=True)
class TrajectorySpec:
    start: float
    end: float
    duration: float
    profile: str = "sin2"
    nu: float = 2.9e6

    def __post_init__(self):
        if not self.duration > 0:
            raise InputError("duration T must be positive", module=MODULE)
        if self.profile not in PROFILES:
            raise InputError(f"profile must be one of {PROFILES}", module=MODULE)
        if not self.nu > 0:
            raise InputError("target frequency must be positive", module=MODULE)


def _progress(spec, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > spec.duration * (1 + 1e-12)):
        raise InputError(f"t outside [0, {spec.duration}]", module=MODULE)
    return np.clip(t / spec.duration, 0.0, 1.0)


def transport_profile(spec: TrajectorySpec, t):
    """``start + (end - start) * sin^2(pi t / 2T)``."""
    s = _progress(spec, t)
    return spec.start + (spec.end - spec.start) * np.sin(0.5 * np.pi * s) ** 2


def smooth_polynomial_profile(spec: TrajectorySpec, t):
    """Quintic ``10s^3 - 15s^4 + 6s^5``: zero velocity and acceleration at both ends."""
    s = _progress(spec, t)
    return spec.start + (spec.end - spec.start) * s**3 * (10 - 15 * s + 6 * s**2)


def profile_position(spec, t):
    return transport_profile(spec, t) if spec.profile == "sin2" else smooth_polynomial_profile(spec, t)


def profile_acceleration(spec, t):
    """Analytic second time derivative of the chosen profile."""
    s = _progress(spec, t)
    span, T = spec.end - spec.start, spec.duration
    if spec.profile == "sin2":
        return span * np.pi**2 / (2 * T**2) * np.cos(np.pi * s)
    return span / T**2 * (60 * s - 180 * s**2 + 120 * s**3)


# -- transport synthesis --------------------------------------------------------


def solve_well(basis: ElectrodeBasis, z0, curvature, nominal=ENDPOINT_VOLTAGES):
    """Voltages closest to ``nominal`` (Euclidean) with zero field and the given curvature at ``z0``.

    Both conditions are linear in the voltages, so this is a 2-row
    minimum-norm correction.
    """
    nominal = np.asarray(nominal, dtype=float)
    A = np.vstack([basis.evaluate(z0, 1), basis.evaluate(z0, 2)])
    r = np.array([0.0, curvature]) - A @ nominal
    return nominal + A.T @ np.linalg.solve(A @ A.T, r)


def synthesize_transport(basis: ElectrodeBasis, spec: TrajectorySpec, sample_period=1e-7,
                         rails=TRANSPORT_RAILS, nominal=ENDPOINT_VOLTAGES, verify_every=10):
    """Sampled voltages that carry a single well of constant frequency along ``spec``.

    Every ``verify_every``-th sample is checked by locating the minimum again.
    """
    if not sample_period > 0:
        raise InputError("sample_period must be positive", module=MODULE)
    n = int(round(spec.duration / sample_period))
    if n < 1 or not math.isclose(n * sample_period, spec.duration, rel_tol=1e-9):
        raise InputError("duration must be a whole number of sample periods", module=MODULE)
    t = np.arange(n + 1) * sample_period
    z0 = profile_position(spec, np.minimum(t, spec.duration))
    curvature = curvature_for_frequency(spec.nu, basis.constants)
    samples = np.array([solve_well(basis, z, curvature, nominal) for z in z0])
    lo, hi = rails
    bad = np.nonzero((samples.min(axis=1) < lo) | (samples.max(axis=1) > hi))[0]
    if bad.size:
        k = bad[0]
        raise SynthesisError(
            f"transport infeasible within rails {rails} at t = {t[k]:.3e} s (z = {z0[k]:.4e} m, nu = {spec.nu:.4g} Hz)",
            time=t[k], request=(z0[k], curvature), module=MODULE,
        )
    for k in range(0, n + 1, max(1, verify_every)):
        zm, nu = nearest_minimum(basis, samples[k], z0[k], window=50e-6)
        if abs(zm - z0[k]) > 1e-7 or abs(nu / spec.nu - 1) > 0.01:
            raise SynthesisError(f"verification failed at t = {t[k]:.3e} s", time=t[k], request=(z0[k], curvature),
                                 module=MODULE)
    meta = {"purpose": "transport", "T": spec.duration, "start": spec.start, "end": spec.end,
            "profile": spec.profile, "nu": spec.nu}
    return VoltageProgram(sample_period, samples, meta, rails)


# -- separation -------------------------------------------------------------------


def smoothstep(s):
    """Quintic ramp 0 -> 1 with vanishing first and second derivatives at the ends."""
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s**2)


def smoothbump(s):
    """C2 bump, 0 at both ends and 1 at the middle."""
    s = np.clip(s, 0.0, 1.0)
    return 64.0 * (s * (1 - s)) ** 3


def _quintic(s):
    """Minimum-jerk progress: zero velocity and acceleration at both ends."""
    return s**3 * (10 - 15 * s + 6 * s * s)


def _pair_response(basis: ElectrodeBasis, z, order):
    """Per-volt response at ``z`` of the symmetric controls (V1 = V5, V2 = V4, V3)."""
    e = np.array([basis.evaluate(zi, order) for zi in np.atleast_1d(z)])
    return np.column_stack([e[:, 0] + e[:, 4], e[:, 1] + e[:, 3], e[:, 2]])


def separation_design(basis: ElectrodeBasis, nu_floor, x_split, x_start, x_end, rails=DEFAULT_RAILS,
                      start=SEPARATION_START, end=ENDPOINT_VOLTAGES, nodes=300):
    """Symmetric voltages that hold two ions at half-spacing x on a log-spaced grid.

    Solved as one quadratic programme over all nodes: force balance on each ion
    (equality), COM curvature >= that of ``nu_floor`` with equality at
    ``x_split``, rails, monotone V3 and fixed end voltages; the objective is the
    squared second difference of every control. Returns ``(x, controls)`` with
    controls of shape (nodes, 3) ordered (V1=V5, V2=V4, V3).
    """
    import clarabel
    from scipy import sparse

    consts = basis.constants
    u = np.linspace(math.log(x_start), math.log(x_end), nodes)
    x = np.exp(u)
    z = basis.geometry.center + x
    F = _pair_response(basis, z, 1)
    H = _pair_response(basis, z, 2)
    nv = 3 * nodes
    idx = np.arange(nodes)
    cols = (3 * idx[:, None] + np.arange(3)).ravel()

    def blockdiag(M, scale):
        return sparse.csr_matrix(((M * scale[:, None]).ravel(), (np.repeat(idx, 3), cols)), shape=(nodes, nv))

    sF = 1 / np.abs(F).max(axis=1)
    sH = 1 / np.abs(H).max(axis=1)
    k_floor = curvature_for_frequency(nu_floor, consts)
    i_split = int(np.argmin(np.abs(x - x_split)))
    # Coulomb push on each ion, in volts per metre
    force = consts.coulomb * consts.charge / (4 * x * x)
    ends = sparse.csr_matrix((np.ones(6), (np.arange(6), [0, 1, 2, nv - 3, nv - 2, nv - 1])), shape=(6, nv))
    curv = blockdiag(H, sH)
    eq = [blockdiag(F, sF), ends, curv[i_split]]
    beq = [sF * force, np.r_[start[:3], end[:3]], [sH[i_split] * k_floor]]
    interior = np.ones(nodes, bool)
    interior[[0, -1, i_split]] = False
    mono = sparse.csr_matrix(
        (np.r_[np.ones(nodes - 1), -np.ones(nodes - 1)], (np.r_[idx[:-1], idx[:-1]], np.r_[cols[2:-3:3], cols[5::3]])),
        shape=(nodes - 1, nv),
    )
    ineq = [-curv[interior], sparse.eye(nv), -sparse.eye(nv), mono]
    bineq = [-sH[interior] * k_floor, np.full(nv, rails[1]), np.full(nv, -rails[0]), np.zeros(nodes - 1)]
    A = sparse.vstack(eq + ineq).tocsc()
    b = np.concatenate([np.ravel(v) for v in beq] + [np.ravel(v) for v in bineq])
    D = sparse.eye(nodes)
    for _ in range(2):
        D = sparse.diags([-1, 1], [0, 1], shape=(D.shape[0] - 1, D.shape[0])) @ D
    P = sparse.triu(sparse.kron(D.T @ D, sparse.eye(3)) * nodes**2).tocsc()
    n_eq = sum(m.shape[0] for m in eq)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    cones = [clarabel.ZeroConeT(n_eq), clarabel.NonnegativeConeT(A.shape[0] - n_eq)]
    sol = clarabel.DefaultSolver(P, np.zeros(nv), A, b, cones, settings).solve()
    if str(sol.status) not in ("Solved", "AlmostSolved"):
        raise SynthesisError(
            f"no separation path holds {nu_floor:.4g} Hz within rails {rails} ({sol.status})",
            request=nu_floor, module=MODULE,
        )
    return x, np.clip(np.array(sol.x).reshape(nodes, 3), *rails)


def _separation_samples(x, controls, n):
    """Sample the designed path in time: ln(half-spacing) follows a minimum-jerk ramp."""
    from scipy.interpolate import PchipInterpolator

    u = np.log(x)
    s = _quintic(np.linspace(0.0, 1.0, n + 1))
    c = PchipInterpolator(u, controls)(u[0] + (u[-1] - u[0]) * s)
    c[0], c[-1] = controls[0], controls[-1]
    return np.column_stack([c[:, 0], c[:, 1], c[:, 2], c[:, 1], c[:, 0]])


def synthesize_separation(basis: ElectrodeBasis, duration=10e-3, nu_start=0.7e6, nu_min=90e3, nu_end=2.9e6,
                          sample_period=1e-6, rails=DEFAULT_RAILS, tolerance=0.005, nodes=300, track_points=1000):
    """Split one well at trap #3 into wells at traps #2 and #4.

    Starts at (8, 0, 0, 0, 8) and ends at (8, 0, 8, 0, 8). The pair of ions is
    led along a designed path of half-spacings with their COM frequency never
    below a floor; the floor is met at the spacing the harmonic two-ion relation
    assigns to ``nu_min``. An outer bisection on the floor absorbs the
    interpolation between design nodes, so the tracked minimum matches
    ``nu_min`` to ``tolerance``. V3 rises monotonically. ``nu_start`` and
    ``nu_end`` are checked against the fixed end voltages, not imposed.
    """
    from .dynamics import harmonic_separation, track_modes, two_ion_equilibrium

    if not duration > 0:
        raise InputError("duration must be positive", module=MODULE)
    n = int(round(duration / sample_period))
    if n < 2:
        raise InputError("duration must span at least two samples", module=MODULE)
    if not nu_min > 0:
        raise InputError("nu_min must be positive", module=MODULE)
    geo = basis.geometry
    edges = np.array(geo.electrode_edges)
    if not np.allclose(2 * geo.center - edges[::-1, ::-1], edges, atol=1e-9):
        raise InputError("separation design needs a trap symmetric about its centre", module=MODULE)
    first = two_ion_equilibrium(basis, SEPARATION_START)
    last = two_ion_equilibrium(basis, ENDPOINT_VOLTAGES)
    for label, spec, want in (("start", first, nu_start), ("end", last, nu_end)):
        got = spec.frequency("COM")
        if abs(got / want - 1) > 0.15:
            raise SynthesisError(f"{label} COM frequency {got:.4g} Hz, requested {want:.4g} Hz", request=want,
                                 module=MODULE)
    x_start = 0.5 * float(np.diff(first.positions)[0])
    x_end = 0.5 * float(np.diff(last.positions)[0])
    if not nu_min < first.frequency("COM"):
        raise SynthesisError(f"nu_min = {nu_min:.4g} Hz is not below the start frequency", request=nu_min,
                             module=MODULE)
    x_split = float(np.clip(0.5 * harmonic_separation(nu_min, basis.constants), x_start, x_end))
    stride = max(1, n // track_points)

    def build(floor):
        x, c = separation_design(basis, floor, x_split, x_start, x_end, rails, nodes=nodes)
        samples = _separation_samples(x, c, n)
        guess = first.positions
        com = track_modes(basis, samples, n_ions=2, stride=stride, start=guess).column("COM").min()
        return samples, float(com)

    lo, hi = nu_min, nu_min * (1 + 20 * tolerance)
    samples, f = build(lo)
    floor = lo
    if f < nu_min * (1 - tolerance):
        for _ in range(30):
            floor = 0.5 * (lo + hi)
            samples, f = build(floor)
            if abs(f / nu_min - 1) < tolerance:
                break
            lo, hi = (floor, hi) if f < nu_min else (lo, floor)
    samples[0], samples[-1] = SEPARATION_START, ENDPOINT_VOLTAGES
    meta = {"purpose": "separation", "T": duration, "nu_floor": floor, "x_split": x_split, "nu_min_tracked": f,
            "nu_start": nu_start, "nu_min": nu_min, "nu_end": nu_end}
    return VoltageProgram(sample_period, samples, meta, rails)


# -- hardware -------------------------------------------------------------------


def quantize(program: VoltageProgram, step=0.01):
    """Round every sample to the nearest multiple of ``step`` (DAC resolution)."""
    if not step > 0:
        raise InputError("quantization step must be positive", module=MODULE)
    q = np.round(program.samples / step) * step
    return program.with_samples(q, quantization_step=step)


@dataclass(frozen=True)
class FilterModel:
    """Cascade of RC low-pass sections, source side first, electrode side last.

    A stage with ``C = 0`` is a plain series resistor.
    """

    stages: tuple[tuple[float, float], ...]

    def __post_init__(self):
        stages = tuple((float(r), float(c)) for r, c in self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise InputError("filter needs at least one stage", module=MODULE)
        for r, c in stages:
            if not (r > 0 and c >= 0):
                raise InputError("filter stages need R > 0 and C >= 0", module=MODULE)

    def __add__(self, other):
        return FilterModel(self.stages + other.stages)

    @property
    def time_constants(self):
        return tuple(r * c for r, c in self.stages)


CONTROL_FILTER = FilterModel(((1e3, 820e-12), (1e3, 820e-12)))
PRE_FILTER = FilterModel(((1e3, 22e-9), (1e3, 22e-9)))
SEPARATION_FILTER = PRE_FILTER + CONTROL_FILTER


def _state_space(filt: FilterModel):
    """Node-voltage ODE ``x' = A x + B u`` of the ladder; the output is the last node."""
    if any(c == 0 for _, c in filt.stages):
        raise InputError("time-domain filtering needs C > 0 on every stage", module=MODULE)
    n = len(filt.stages)
    A = np.zeros((n, n))
    B = np.zeros(n)
    for k, (r, c) in enumerate(filt.stages):
        # current into node k through R_k from node k-1 (or the source)
        if k == 0:
            B[0] += 1 / (r * c)
        else:
            A[k, k - 1] += 1 / (r * c)
        A[k, k] -= 1 / (r * c)
        if k + 1 < n:
            r_next = filt.stages[k + 1][0]
            A[k, k] -= 1 / (r_next * c)
            A[k, k + 1] += 1 / (r_next * c)
    C = np.zeros(n)
    C[-1] = 1.0
    return A, B, C


def apply_filter(program: VoltageProgram, filt: FilterModel = CONTROL_FILTER):
    """Electrode voltages after the ladder, for a DAC holding each sample for one period.

    Exact zero-order-hold discretisation; the filter starts in steady state at
    the first sample, so a constant program passes unchanged.
    """
    dt = program.sample_period
    tau_min = min(filt.time_constants)
    if dt > tau_min:
        raise InputError(f"sample period {dt:.3g} s exceeds the shortest RC {tau_min:.3g} s", module=MODULE)
    if dt > tau_min / 10:
        warnings.warn(f"sample period {dt:.3g} s is coarse relative to RC = {tau_min:.3g} s", stacklevel=2)
    A, B, C = _state_space(filt)
    Ad, Bd, _, _, _ = signal.cont2discrete((A, B[:, None], C[None, :], np.zeros((1, 1))), dt, method="zoh")
    u = program.samples
    x = np.outer(np.ones(len(B)), u[0])  # DC steady state: every node at the input voltage
    out = np.empty_like(u)
    for k in range(len(u)):
        out[k] = x[-1]
        x = Ad @ x + Bd @ u[k][None, :]
    return program.with_samples(out, filter=[list(s) for s in filt.stages])


def filter_polynomial(filt: FilterModel):
    """Coefficients ``p`` (ascending powers of s) with ``H(s) = 1 / p(s)`` for the unloaded ladder output."""
    A, B, C = _state_space(filt)
    num, den = signal.ss2tf(A, B[:, None], C[None, :], np.zeros((1, 1)))
    den = np.asarray(den, float) / num[0][-1]
    return den[::-1]


def precompensate(program: VoltageProgram, filt: FilterModel = CONTROL_FILTER, rails=None):
    """Pre-distort ``program`` so that after ``filt`` the electrodes follow the original samples.

    Applies ``p(d/dt)`` to a quintic spline of each channel, evaluated half a
    sample late to cancel the zero-order-hold delay.
    """
    from scipy.interpolate import make_interp_spline

    p = filter_polynomial(filt)
    t = program.times
    dt = program.sample_period
    order = len(p) - 1
    k = min(5, max(order + 1, 3), len(t) - 1)
    if k % 2 == 0:
        k -= 1
    out = np.zeros_like(program.samples)
    te = np.minimum(t + 0.5 * dt, t[-1])
    for j in range(N_ELECTRODES):
        spl = make_interp_spline(t, program.samples[:, j], k=k)
        for m, coef in enumerate(p):
            if coef != 0.0:
                out[:, j] += coef * (spl(te) if m == 0 else spl.derivative(m)(te) if m <= k else 0.0)
    new = program.with_samples(out, precompensated=[list(s) for s in filt.stages])
    if rails is not None:
        new = replace(new, rails=tuple(rails))
        VoltageProgram.__post_init__(new)
    return new


def filter_impedance(filt: FilterModel, omega):
    """Impedance seen looking from the electrode back into the ladder (source shorted)."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise InputError("angular frequency must be positive", module=MODULE)
    z = np.zeros_like(omega, dtype=complex)
    for r, c in filt.stages:
        z = z + r
        if c > 0:
            zc = 1.0 / (1j * omega * c)
            z = z * zc / (z + zc)
    return z


# -- file format ----------------------------------------------------------------

HEADER = ["t_s", "V1", "V2", "V3", "V4", "V5"]


def program_to_csv(program: VoltageProgram):
    buf = io.StringIO()
    buf.write(",".join(HEADER) + "\n")
    for t, row in zip(program.times, program.samples):
        buf.write(",".join(f"{x:.9g}" for x in (t, *row)) + "\n")
    return buf.getvalue()


def write_program(program: VoltageProgram, path):
    Path(path).write_text(program_to_csv(program))


def read_program(path, rails=None):
    rows = list(csv.reader(io.StringIO(Path(path).read_text())))
    if not rows or rows[0] != HEADER:
        raise InputError(f"waveform file must start with header {','.join(HEADER)}", module=MODULE)
    data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    if data.shape[0] < 2:
        raise InputError("waveform file needs at least two samples", module=MODULE)
    dt = float(f"{(data[-1, 0] - data[0, 0]) / (len(data) - 1):.9g}")
    if not np.allclose(np.diff(data[:, 0]), dt, rtol=1e-6, atol=0):
        raise InputError("waveform samples must be uniformly spaced", module=MODULE)
    if rails is None:
        lo, hi = data[:, 1:].min(), data[:, 1:].max()
        rails = (min(DEFAULT_RAILS[0], math.floor(lo)), max(DEFAULT_RAILS[1], math.ceil(hi)))
    return VoltageProgram(dt, data[:, 1:], {"source": str(path)}, tuple(rails))
