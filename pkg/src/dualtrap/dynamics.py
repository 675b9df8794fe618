"""Classical ion motion in the time-dependent axial potential.

One or two ions obey ``m z'' = -e dU/dz + Coulomb`` with the electrode
voltages interpolated cubically between program samples. The fixed-step
RK4 loop lives in :mod:`dualtrap.kernels` (compiled when available).
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as spi
from scipy.interpolate import CubicSpline

from . import kernels
from .constants import BE9, PhysicalConstants
from .errors import ConvergenceError, DomainError, EscapeError, InputError
from .potential import ElectrodeBasis, find_minima, frequency_from_curvature, nearest_minimum
from .waveform import (
    CONTROL_FILTER,
    ENDPOINT_VOLTAGES,
    TRANSPORT_RAILS,
    FilterModel,
    TrajectorySpec,
    VoltageProgram,
    apply_filter,
    concatenate,
    constant_program,
    hold_upsample,
    precompensate,
    profile_position,
    quantize,
    round_trip,
    synthesize_transport,
)

MODULE = "dynamics"
ESCAPE_RADIUS = 5e-3
STEPS_PER_PERIOD = 200
RESIDUAL_PERIODS = 3
SEPARATION_RECORDS_PER_PERIOD = 20


@dataclass
class IonSystem:
    positions: np.ndarray
    velocities: np.ndarray | None = None
    constants: PhysicalConstants = BE9

    def __post_init__(self):
        self.positions = np.atleast_1d(np.asarray(self.positions, dtype=float)).copy()
        if self.velocities is None:
            self.velocities = np.zeros_like(self.positions)
        self.velocities = np.atleast_1d(np.asarray(self.velocities, dtype=float)).copy()
        if self.positions.shape != self.velocities.shape or self.positions.ndim != 1:
            raise InputError("positions and velocities must be matching 1-d arrays", module=MODULE)
        if self.n_ions not in (1, 2):
            raise InputError("only one or two ions are supported", module=MODULE)
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.velocities))):
            raise InputError("non-finite initial state", module=MODULE)
        if self.n_ions == 2 and not self.positions[0] < self.positions[1]:
            raise InputError("two-ion positions must satisfy z1 < z2", module=MODULE)

    @property
    def n_ions(self):
        return len(self.positions)


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (N, n_ions)
    velocities: np.ndarray
    zmin: np.ndarray
    nu: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n_ions(self):
        return self.positions.shape[1]

    def to_csv(self):
        cols = ["t_s"]
        for k in range(self.n_ions):
            cols += [f"z{k + 1}_m", f"v{k + 1}_mps"]
        cols += ["zmin_m", "nu_Hz"]
        data = [self.times]
        for k in range(self.n_ions):
            data += [self.positions[:, k], self.velocities[:, k]]
        data += [self.zmin, self.nu]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        np.savetxt(buf, np.column_stack(data), fmt="%.9g", delimiter=",")
        return buf.getvalue()


@dataclass
class ModeSpectrum:
    """Equilibrium and normal modes. Frequencies are signed: negative means an unstable direction."""

    positions: np.ndarray
    frequencies: np.ndarray
    labels: tuple[str, ...]

    def frequency(self, label):
        return float(self.frequencies[self.labels.index(label)])


# -- interpolation ---------------------------------------------------------------


def _segment_coefficients(samples, h):
    """Cubic-spline pieces as a C-contiguous ``(nseg, 4, nch)`` array, ascending powers."""
    t = np.arange(len(samples)) * h
    if len(samples) < 2:
        samples = np.vstack([samples, samples])
        t = np.array([0.0, h])
    spl = CubicSpline(t, samples, axis=0, bc_type="not-a-knot" if len(samples) > 3 else "natural")
    return np.ascontiguousarray(spl.c[::-1].transpose(1, 0, 2))


def _voltages_at(coef, h, t):
    k = np.clip(np.floor(t / h).astype(int), 0, coef.shape[0] - 1)
    u = (t - k * h)[:, None]
    c = coef[k]
    return c[:, 0] + u * (c[:, 1] + u * (c[:, 2] + u * c[:, 3]))


def _stationary_near(basis, volts, z, iterations=30):
    """Vectorised Newton search for ``dU/dz = 0`` starting from ``z``; returns (z, curvature)."""
    z = np.array(z, dtype=float)
    for _ in range(iterations):
        g = np.einsum("ij,ij->i", basis.evaluate(z, 1), volts)
        k = np.einsum("ij,ij->i", basis.evaluate(z, 2), volts)
        step = np.where(np.abs(k) > 0, g / np.where(k == 0, 1.0, k), 0.0)
        step = np.clip(step, -20e-6, 20e-6)
        z = z - step
        if np.all(np.abs(step) < 1e-13):
            break
    k = np.einsum("ij,ij->i", basis.evaluate(z, 2), volts)
    return z, k


def program_max_frequency(basis: ElectrodeBasis, program: VoltageProgram, n_probe=48):
    """Largest single-ion secular frequency over a spread of program samples."""
    idx = np.unique(np.linspace(0, len(program) - 1, min(n_probe, len(program))).round().astype(int))
    best = 0.0
    for i in idx:
        try:
            best = max(best, max(nu for _, nu in find_minima(basis, program.samples[i], grid_step=2e-6)))
        except DomainError:
            continue
    if best <= 0:
        raise DomainError("program has no confining minimum", module=MODULE)
    return best


# -- integration -------------------------------------------------------------------


def integrate(basis: ElectrodeBasis, program: VoltageProgram, initial: IonSystem, dt=None, tail=None,
              record_every=None, backend=None, nu_max=None):
    """RK4 trajectory over the program plus ``tail`` seconds at the final voltages.

    ``dt`` defaults to ``1 / (200 nu_max)`` and may not exceed ``1 / (100 nu_max)``.
    The default tail is five secular periods, enough for :func:`energy_gain_quanta`.
    """
    consts = basis.constants
    if np.any(np.abs(initial.positions) > ESCAPE_RADIUS):
        raise InputError("initial positions outside the trap region", module=MODULE)
    if nu_max is None:
        nu_max = program_max_frequency(basis, program)
    dt_limit = 1.0 / (100 * nu_max)
    if dt is None:
        dt = 1.0 / (STEPS_PER_PERIOD * nu_max)
    if not 0 < dt <= dt_limit * (1 + 1e-12):
        raise InputError(f"dt = {dt:.3g} s violates 0 < dt <= 1/(100 nu_max) = {dt_limit:.3g} s", module=MODULE)
    if tail is None:
        tail = 5.0 / nu_max
    if tail < 0:
        raise InputError("tail must be non-negative", module=MODULE)
    h = program.sample_period
    n_ext = int(math.ceil(tail / h)) + 4
    samples = np.vstack([program.samples, np.tile(program.samples[-1], (n_ext, 1))])
    coef = _segment_coefficients(samples, h)
    total = program.duration + tail
    nsteps = int(math.ceil(total / dt - 1e-9))
    if record_every is None:
        record_every = max(1, int(round(1.0 / (40 * nu_max * dt))))
    nrec = nsteps // record_every + 1
    out_z = np.zeros((nrec, initial.n_ions))
    out_v = np.zeros((nrec, initial.n_ions))
    z = initial.positions.copy()
    v = initial.velocities.copy()
    kc = consts.coulomb * consts.charge**2 / consts.mass
    impl = kernels.get_backend(backend)
    status, steps = impl.integrate_electrodes(
        coef, 0.0, h, np.ascontiguousarray(basis.edges), basis.alpha, basis.w, basis.tail_fraction,
        basis.tail_ratio, consts.charge_to_mass, kc, z, v, dt, nsteps, record_every,
        -ESCAPE_RADIUS, ESCAPE_RADIUS, out_z, out_v)
    if status == 1:
        raise EscapeError(f"ion left the trap region at t = {steps * dt:.4e} s", time=steps * dt, module=MODULE)
    if status == 2:
        raise DomainError(f"ion ordering z1 < z2 violated at t = {steps * dt:.4e} s", module=MODULE)
    times = np.arange(nrec) * record_every * dt
    volts = _voltages_at(coef, h, times)
    zmin, curv = _stationary_near(basis, volts, out_z.mean(axis=1))
    nu = frequency_from_curvature(curv, consts)
    meta = {"dt": dt, "program_end": program.duration, "backend": impl.__name__.rsplit(".", 1)[-1],
            "nu_max": nu_max, "final_voltages": program.samples[-1].tolist()}
    return Trajectory(times, out_z, out_v, zmin, nu, meta)


# -- energy bookkeeping -----------------------------------------------------------------


def _trailing(traj: Trajectory, nu, periods=RESIDUAL_PERIODS):
    window = periods / nu
    end = traj.times[-1]
    start = traj.metadata.get("program_end", 0.0)
    if end - start < window * (1 - 1e-9):
        raise InputError(f"trajectory must extend {periods} periods past the program end", module=MODULE)
    return traj.times >= end - window * (1 + 1e-9)


def energy_gain_quanta(traj: Trajectory, basis: ElectrodeBasis, final_voltages=None):
    """Motional energy left after the program, in quanta ``E / (h nu)``, one entry per mode.

    The energy is averaged over the trailing three secular periods. A single
    ion uses the full potential; two ions use their normal-mode coordinates.
    """
    consts = basis.constants
    if final_voltages is None:
        final_voltages = traj.metadata["final_voltages"]
    v = np.asarray(final_voltages, dtype=float)
    if traj.n_ions == 1:
        z_end = traj.positions[-1, 0]
        zm, nu = nearest_minimum(basis, v, z_end, window=100e-6)
        sel = _trailing(traj, nu)
        z = traj.positions[sel, 0]
        u = basis.evaluate(z, 0) @ v - float(basis.evaluate(zm, 0) @ v)
        e = 0.5 * consts.mass * traj.velocities[sel, 0] ** 2 + consts.charge * u
        return np.array([max(0.0, float(e.mean()) / (consts.h * nu))])
    spec = two_ion_equilibrium(basis, v, guess=traj.positions[-1])
    if np.any(spec.frequencies <= 0):
        raise DomainError("final two-ion configuration is not bound", module=MODULE)
    sel = _trailing(traj, spec.frequencies.min())
    vecs = _mode_vectors(basis, v, spec.positions)
    q = (traj.positions[sel] - spec.positions) @ vecs
    p = traj.velocities[sel] @ vecs
    w = 2 * np.pi * spec.frequencies
    e = 0.5 * consts.mass * (p**2 + (w * q) ** 2)
    return np.maximum(0.0, e.mean(axis=0) / (consts.h * spec.frequencies))


def harmonic_gain_quanta(traj: Trajectory, nu, center, constants=BE9):
    """Residual energy in an ideal static harmonic well at ``center``, in quanta."""
    sel = _trailing(traj, nu)
    w = 2 * np.pi * nu
    e = 0.5 * constants.mass * (traj.velocities[sel, 0] ** 2 + (w * (traj.positions[sel, 0] - center)) ** 2)
    return float(e.mean()) / (constants.h * nu)


# -- ideal harmonic transport -------------------------------------------------------------


@dataclass(frozen=True)
class MotionProfile:
    """Well-centre trajectory on ``[0, duration]``; at rest outside it."""

    position: Callable
    velocity: Callable
    duration: float
    name: str = "custom"

    @classmethod
    def from_spec(cls, spec: TrajectorySpec):
        span, T = spec.end - spec.start, spec.duration

        def vel(t):
            s = np.clip(np.asarray(t, float) / T, 0, 1)
            if spec.profile == "sin2":
                return span * np.pi / (2 * T) * np.sin(np.pi * s)
            return span / T * 30 * s**2 * (1 - s) ** 2

        return cls(lambda t: profile_position(spec, np.clip(t, 0, T)), vel, T, spec.profile)

    @classmethod
    def linear_ramp(cls, start, end, duration):
        """Constant velocity: the acceleration is impulsive at both ends."""
        u = (end - start) / duration
        return cls(lambda t: start + u * np.clip(np.asarray(t, float), 0, duration),
                   lambda t: np.full_like(np.asarray(t, float), u), duration, "linear")

    @classmethod
    def uniform(cls, start, velocity, duration):
        return cls.linear_ramp(start, start + velocity * duration, duration)

    @property
    def start(self):
        return float(self.position(0.0))

    @property
    def end(self):
        return float(self.position(self.duration))


def _as_profile(profile):
    return MotionProfile.from_spec(profile) if isinstance(profile, TrajectorySpec) else profile


def analytic_harmonic_gain(profile, nu, constants=BE9):
    """Quanta gained by transport in a constant-frequency harmonic well.

    With the ion initially at rest in the well,
    ``dn = m |int_0^T z0''(t) e^{i w t} dt|^2 / (2 h nu)``. The integral is
    evaluated as ``-i w int_0^T z0'(t) e^{i w t} dt``, which is identical for
    smooth profiles and also covers velocity jumps at the ends.
    """
    prof = _as_profile(profile)
    w = 2 * np.pi * nu
    T = prof.duration
    f = lambda t: float(prof.velocity(t))  # noqa: E731
    limit = max(200, int(4 * nu * T) + 50)
    tol = 1e-13 * T * float(np.abs(prof.velocity(np.linspace(0, T, 257))).max())
    re, _ = spi.quad(f, 0.0, T, weight="cos", wvar=w, limit=limit, epsabs=tol, epsrel=1e-10)
    im, _ = spi.quad(f, 0.0, T, weight="sin", wvar=w, limit=limit, epsabs=tol, epsrel=1e-10)
    amp2 = w**2 * (re**2 + im**2)
    return 0.5 * constants.mass * amp2 / (constants.h * nu)


def _hermite_segments(prof: MotionProfile, h, nseg):
    """Piecewise-cubic well centre using one-sided end velocities inside ``[0, T]``."""
    ta = np.arange(nseg) * h
    tb = ta + h
    inside = tb <= prof.duration * (1 + 1e-12)
    p0, p1 = prof.position(ta), prof.position(tb)
    d0 = np.where(inside, prof.velocity(np.minimum(ta, prof.duration)), 0.0)
    d1 = np.where(inside, prof.velocity(np.minimum(tb, prof.duration)), 0.0)
    coef = np.zeros((nseg, 4, 1))
    coef[:, 0, 0] = p0
    coef[:, 1, 0] = d0
    coef[:, 2, 0] = (3 * (p1 - p0) / h - 2 * d0 - d1) / h
    coef[:, 3, 0] = (2 * (p0 - p1) / h + d0 + d1) / h**2
    return coef


def integrate_harmonic_well(profile, nu, initial: IonSystem | None = None, dt=None, tail_periods=5,
                            samples_per_period=64, backend=None, constants=BE9):
    """Single ion in an ideal harmonic well of frequency ``nu`` following ``profile``."""
    prof = _as_profile(profile)
    if dt is None:
        dt = 1.0 / (STEPS_PER_PERIOD * nu)
    if not 0 < dt <= 1.0 / (100 * nu) * (1 + 1e-12):
        raise InputError("dt violates dt <= 1/(100 nu)", module=MODULE)
    if initial is None:
        initial = IonSystem([prof.start], constants=constants)
    n_in = max(1, int(math.ceil(prof.duration * nu * samples_per_period)))
    h = prof.duration / n_in
    tail = tail_periods / nu
    nseg = n_in + int(math.ceil(tail / h)) + 2
    coef = np.ascontiguousarray(_hermite_segments(prof, h, nseg))
    nsteps = int(math.ceil((prof.duration + tail) / dt - 1e-9))
    stride = max(1, int(round(1.0 / (40 * nu * dt))))
    nrec = nsteps // stride + 1
    out_z = np.zeros((nrec, 1))
    out_v = np.zeros((nrec, 1))
    z, v = initial.positions.copy(), initial.velocities.copy()
    impl = kernels.get_backend(backend)
    impl.integrate_harmonic(coef, 0.0, h, (2 * np.pi * nu) ** 2, z, v, dt, nsteps, stride, out_z, out_v)
    times = np.arange(nrec) * stride * dt
    zmin = prof.position(np.clip(times, 0, prof.duration))
    meta = {"dt": dt, "program_end": prof.duration, "backend": impl.__name__.rsplit(".", 1)[-1]}
    return Trajectory(times, out_z, out_v, np.asarray(zmin, float), np.full(nrec, float(nu)), meta)


# -- adiabaticity scan ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Hardware:
    """Imperfections applied to every synthesized program before integration.

    With ``precompensate`` the DAC plays the filter-inverted waveform, saturating
    at ``dac_range``; it is then quantized and passed through ``filter``.
    """

    filter: FilterModel | None = CONTROL_FILTER
    quantization_step: float | None = 0.01
    precompensate: bool = True
    settle: float = 10e-6
    dac_range: tuple[float, float] | None = TRANSPORT_RAILS

    def apply(self, program: VoltageProgram):
        if self.settle > 0:
            hold = constant_program(program.samples[-1], self.settle, program.sample_period, program.rails)
            program = concatenate(program, hold)
        if self.precompensate and self.filter is not None:
            wide = replace(program, rails=(-np.inf, np.inf))
            program = precompensate(wide, self.filter)
            if self.dac_range is not None:
                lo, hi = self.dac_range
                clipped = int(np.count_nonzero((program.samples < lo) | (program.samples > hi)))
                program = program.with_samples(np.clip(program.samples, lo, hi), clipped_samples=clipped)
                program = replace(program, rails=self.dac_range)
        if self.quantization_step:
            program = quantize(program, self.quantization_step)
        if self.filter is not None:
            program = apply_filter(program, self.filter)
        return program


IDEAL_HARDWARE = Hardware(filter=None, quantization_step=None, precompensate=False, settle=0.0)


def transport_round_trip(basis, T, hardware: Hardware = Hardware(), start=0.0, end=1.2e-3, nu=2.9e6,
                         profile="sin2", sample_period=1e-7, nominal=ENDPOINT_VOLTAGES):
    """Out in ``T``, hold for ``T``, back in ``T`` (the hold length follows the transfer time)."""
    spec = TrajectorySpec(start, end, T, profile, nu)
    forward = synthesize_transport(basis, spec, sample_period, TRANSPORT_RAILS, nominal)
    prog = round_trip(forward, T)
    prog = hardware.apply(prog)
    prog.rails = (min(prog.rails[0], float(prog.samples.min())), max(prog.rails[1], float(prog.samples.max())))
    return prog


def round_trip_gain(basis, T, hardware: Hardware = Hardware(), dt=None, backend=None, **kw):
    prog = transport_round_trip(basis, T, hardware, **kw)
    nu = kw.get("nu", 2.9e6)
    z0, _ = nearest_minimum(basis, prog.samples[0], kw.get("start", 0.0), window=20e-6)
    traj = integrate(basis, prog, IonSystem([z0], constants=basis.constants), dt=dt, backend=backend,
                     nu_max=nu * 1.02)
    return float(energy_gain_quanta(traj, basis, prog.samples[-1])[0])


def adiabaticity_scan(basis, T_list: Sequence[float], hardware: Hardware = Hardware(), threads=1,
                      on_escape="raise", **kw):
    """Round-trip energy gain for each transfer time; results keep the input order.

    ``on_escape="inf"`` records a lost ion as an unbounded gain instead of raising.
    """
    Ts = [float(T) for T in T_list]
    if not Ts or any(not T > 0 for T in Ts):
        raise InputError("transfer times must be positive", module=MODULE)
    if on_escape not in ("raise", "inf"):
        raise InputError("on_escape must be 'raise' or 'inf'", module=MODULE)

    def one(T):
        try:
            return round_trip_gain(basis, T, hardware, **kw)
        except EscapeError:
            if on_escape == "raise":
                raise
            return math.inf

    if threads <= 1:
        gains = [one(T) for T in Ts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            gains = list(pool.map(one, Ts))
    return list(zip(Ts, gains))


def scan_to_csv(rows):
    return "T_s,delta_n\n" + "".join(f"{T:.9g},{dn:.9g}\n" for T, dn in rows)


# -- two-ion statics --------------------------------------------------------------------------


def _coulomb_k(consts):
    return consts.coulomb * consts.charge**2


def _energy_terms(basis, v, z):
    phi = basis.evaluate(z, 0) @ v
    d1 = basis.evaluate(z, 1) @ v
    d2 = basis.evaluate(z, 2) @ v
    return phi, d1, d2


def two_ion_hessian(basis, voltages, positions):
    """Hessian of the total potential energy (J/m^2) at ``positions``."""
    consts = basis.constants
    v = np.asarray(voltages, float)
    z = np.asarray(positions, float)
    _, _, d2 = _energy_terms(basis, v, z)
    r = z[1] - z[0]
    c = 2 * _coulomb_k(consts) / r**3
    return np.array([[consts.charge * d2[0] + c, -c], [-c, consts.charge * d2[1] + c]])


def two_ion_energy(basis, voltages, positions):
    consts = basis.constants
    v = np.asarray(voltages, float)
    z = np.asarray(positions, float)
    phi = basis.evaluate(z, 0) @ v
    return consts.charge * phi.sum() + _coulomb_k(consts) / (z[1] - z[0])


def _gradient(basis, v, z):
    consts = basis.constants
    d1 = basis.evaluate(z, 1) @ v
    f = _coulomb_k(consts) / (z[1] - z[0]) ** 2
    return np.array([consts.charge * d1[0] + f, consts.charge * d1[1] - f])


def harmonic_separation(nu, constants=BE9):
    """Closed-form two-ion spacing in a harmonic well: ``s^3 = e^2 / (2 pi eps0 m w^2)``."""
    w = 2 * np.pi * nu
    return (2 * _coulomb_k(constants) / (constants.mass * w**2)) ** (1 / 3)


def _default_guess(basis, v):
    minima = find_minima(basis, v)
    centre = basis.geometry.center
    if len(minima) >= 2:
        pair = sorted(sorted(minima, key=lambda m: abs(m[0] - centre))[:2])
        return np.array([pair[0][0], pair[1][0]])
    zm, nu = minima[0]
    s = min(harmonic_separation(nu, basis.constants), 200e-6)
    return np.array([zm - s / 2, zm + s / 2])


def _mode_vectors(basis, v, positions):
    _, vecs = np.linalg.eigh(two_ion_hessian(basis, v, positions))
    return vecs


def _spectrum(basis, v, z):
    consts = basis.constants
    if len(z) == 1:
        k = float(basis.evaluate(z[0], 2) @ v) * consts.charge
        return ModeSpectrum(np.array(z, float), np.array([_signed_freq(k, consts)]), ("single",))
    lam, vecs = np.linalg.eigh(two_ion_hessian(basis, v, z))
    freqs = np.array([_signed_freq(x, consts) for x in lam])
    labels = tuple("COM" if vecs[0, i] * vecs[1, i] > 0 else "stretch" for i in range(2))
    if labels[0] == labels[1]:  # degenerate numerical case; fall back on ordering
        labels = ("COM", "stretch")
    order = np.argsort(freqs)
    return ModeSpectrum(np.array(z, float), freqs[order], tuple(labels[i] for i in order))


def _signed_freq(k, consts):
    return math.copysign(math.sqrt(abs(k) / consts.mass), k) / (2 * np.pi)


def two_ion_equilibrium(basis: ElectrodeBasis, voltages, guess=None, max_iter=100, tol=1e-13):
    """Damped Newton solve of the two-ion force balance and the resulting normal modes."""
    v = np.asarray(voltages, dtype=float)
    z = np.array(guess, float) if guess is not None else _default_guess(basis, v)
    if not z[0] < z[1]:
        raise InputError("initial guess must satisfy z1 < z2", module=MODULE)
    energy = two_ion_energy(basis, v, z)
    for it in range(max_iter):
        g = _gradient(basis, v, z)
        H = two_ion_hessian(basis, v, z)
        lam, vecs = np.linalg.eigh(H)
        # Newton in the eigenbasis with negative curvature flipped (saddle-free step)
        lam_abs = np.maximum(np.abs(lam), 1e-6 * np.abs(lam).max())
        step = -vecs @ ((vecs.T @ g) / lam_abs)
        scale = min(1.0, 20e-6 / max(np.abs(step).max(), 1e-300))
        step *= scale
        t = 1.0
        while True:
            z_new = z + t * step
            if z_new[0] < z_new[1]:
                e_new = two_ion_energy(basis, v, z_new)
                if e_new <= energy + 1e-30 * abs(energy) or t < 1e-6:
                    break
            t *= 0.5
            if t < 1e-12:
                raise ConvergenceError("line search failed in two-ion equilibrium", module=MODULE)
        z, energy = z_new, e_new
        if np.abs(t * step).max() < tol:
            return _spectrum(basis, v, z)
    raise ConvergenceError(f"two-ion equilibrium did not converge in {max_iter} iterations", module=MODULE)


def _single_stationary(basis, v, z, max_iter=100, tol=1e-13):
    for _ in range(max_iter):
        g = float(basis.evaluate(z, 1) @ v)
        k = float(basis.evaluate(z, 2) @ v)
        if k == 0:
            break
        step = float(np.clip(g / k, -20e-6, 20e-6))
        z -= step
        if abs(step) < tol:
            return z
    if abs(float(basis.evaluate(z, 1) @ v)) < 1e-6:
        return z
    raise ConvergenceError("single-ion stationary point did not converge", module=MODULE)


@dataclass
class ModeTrack:
    times: np.ndarray
    positions: np.ndarray
    frequencies: np.ndarray
    labels: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    def column(self, label):
        return self.frequencies[:, self.labels.index(label)]

    @property
    def spectra(self):
        return [ModeSpectrum(p, f, self.labels) for p, f in zip(self.positions, self.frequencies)]


def track_modes(basis: ElectrodeBasis, program: VoltageProgram | np.ndarray, n_ions=2, stride=1, start=None):
    """Equilibria and mode frequencies at each program sample, by continuation.

    One ion follows the stationary point that starts at ``start`` (default the
    trap centre), so its curvature may change sign. Two ions start from the
    default guess and each solve seeds the next, so ``stride`` must be fine
    enough for the equilibria to move little between solves. Columns are
    ``single`` or ``COM, stretch`` irrespective of which is lower.
    """
    if isinstance(program, VoltageProgram):
        samples, h = program.samples, program.sample_period
    else:
        samples, h = np.atleast_2d(np.asarray(program, float)), 1.0
    idx = np.arange(0, len(samples), max(1, int(stride)))
    if idx[-1] != len(samples) - 1:
        idx = np.append(idx, len(samples) - 1)
    if n_ions == 1:
        labels = ("single",)
        z = basis.geometry.center if start is None else float(start)
        pos, freq = [], []
        for i in idx:
            z = _single_stationary(basis, samples[i], z)
            pos.append([z])
            freq.append(_spectrum(basis, samples[i], [z]).frequencies)
    elif n_ions == 2:
        labels = ("COM", "stretch")
        guess = None if start is None else np.asarray(start, float)
        pos, freq = [], []
        for i in idx:
            spec = two_ion_equilibrium(basis, samples[i], guess=guess)
            guess = spec.positions
            pos.append(spec.positions)
            freq.append([spec.frequency("COM"), spec.frequency("stretch")])
    else:
        raise InputError("n_ions must be 1 or 2", module=MODULE)
    meta = {"assumption": "adiabatic following: ions sit at the instantaneous equilibrium"}
    return ModeTrack(idx * h, np.array(pos), np.array(freq), labels, meta)


def per_ion_gain_quanta(traj: Trajectory, basis: ElectrodeBasis, final_voltages=None):
    """Energy of each ion about its final equilibrium, in its own local-well quanta.

    Meant for ions that end in separate wells, where the Coulomb coupling is
    weak and the normal modes no longer single out one ion each.
    """
    consts = basis.constants
    if traj.n_ions != 2:
        raise InputError("per-ion gain needs a two-ion trajectory", module=MODULE)
    if final_voltages is None:
        final_voltages = traj.metadata["final_voltages"]
    v = np.asarray(final_voltages, dtype=float)
    spec = two_ion_equilibrium(basis, v, guess=traj.positions[-1])
    k = np.diag(two_ion_hessian(basis, v, spec.positions))
    if np.any(k <= 0):
        raise DomainError("final configuration does not confine each ion", module=MODULE)
    w = np.sqrt(k / consts.mass)
    sel = _trailing(traj, w.min() / (2 * np.pi))
    q = traj.positions[sel] - spec.positions
    e = 0.5 * consts.mass * (traj.velocities[sel] ** 2 + (w * q) ** 2)
    return np.maximum(0.0, e.mean(axis=0) / (consts.hbar * w))


def separation_gain(basis: ElectrodeBasis, program: VoltageProgram, hardware: Hardware = IDEAL_HARDWARE,
                    dt=None, tail=20e-6, backend=None):
    """Integrate two ions from the starting equilibrium through ``program``.

    Returns the trajectory and the final energy of each ion in quanta.
    """
    if hardware.filter is not None:
        tau = min(t for t in hardware.filter.time_constants if t > 0)
        program = hold_upsample(program, math.ceil(program.sample_period / (tau / 10)))
    played = hardware.apply(program)
    played.rails = (min(played.rails[0], float(played.samples.min())),
                    max(played.rails[1], float(played.samples.max())))
    spec = two_ion_equilibrium(basis, played.samples[0])
    ions = IonSystem(spec.positions, np.zeros(2), constants=basis.constants)
    nu_max = program_max_frequency(basis, played)
    step = dt if dt is not None else 1.0 / (STEPS_PER_PERIOD * nu_max)
    every = max(1, int(STEPS_PER_PERIOD / SEPARATION_RECORDS_PER_PERIOD))
    traj = integrate(basis, played, ions, dt=step, tail=tail, record_every=every, backend=backend, nu_max=nu_max)
    return traj, per_ion_gain_quanta(traj, basis, played.samples[-1])


def min_com_frequency(basis: ElectrodeBasis, samples):
    """Smallest two-ion COM frequency along ``samples`` (unstable points count as <= 0)."""
    track = track_modes(basis, np.asarray(samples, float), n_ions=2)
    return float(track.column("COM").min())
