"""Motional thermometry: thermal Fock states, carrier Rabi flopping and ``<n>`` estimators."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy import optimize

from .constants import BE9, PhysicalConstants
from .errors import DomainError, EstimatorError, FitError, InputError, TruncationError

MODULE = "thermometry"
TAIL_LIMIT = 1e-6
GEOMETRIES = ("0", "90")


@lru_cache(maxsize=32)
def _laguerre_table(n_max, x):
    """``L_n(x)`` for n = 0..n_max by the upward three-term recurrence."""
    out = np.empty(n_max + 1)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = 1.0 - x
    for n in range(1, n_max):
        out[n + 1] = ((2 * n + 1 - x) * out[n] - n * out[n - 1]) / (n + 1)
    out.flags.writeable = False
    return out


def laguerre(n, x):
    n = np.asarray(n, dtype=int)
    return _laguerre_table(int(max(n.max(initial=0), 1)), float(x))[n]


def default_cutoff(nbar):
    return int(math.ceil(max(50.0, 20 * nbar + 10 * math.sqrt(nbar))))


@dataclass(frozen=True)
class FockDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or len(p) == 0 or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise InputError("Fock probabilities must be non-negative and sum to 1", module=MODULE)
        object.__setattr__(self, "probs", p)

    @classmethod
    def thermal(cls, nbar, n_max=None):
        """``p_n = nbar^n / (nbar + 1)^(n + 1)``, renormalised over ``0..n_max``."""
        if not nbar >= 0:
            raise InputError("nbar must be >= 0", module=MODULE)
        n_max = default_cutoff(nbar) if n_max is None else int(n_max)
        n = np.arange(n_max + 1)
        p = (nbar / (nbar + 1)) ** n / (nbar + 1)
        return cls(p / p.sum())

    @classmethod
    def fock(cls, n):
        p = np.zeros(n + 1)
        p[n] = 1.0
        return cls(p)

    @property
    def n_max(self):
        return len(self.probs) - 1

    @property
    def mean(self):
        return float(np.arange(len(self.probs)) @ self.probs)


def lamb_dicke(nu, constants: PhysicalConstants = BE9, dk=None):
    """``eta = dk * sqrt(hbar / (2 m w))``; ``dk`` defaults to the 90-degree Raman geometry."""
    if not nu > 0:
        raise InputError("frequency must be positive", module=MODULE)
    dk = raman_dk("90", constants) if dk is None else dk
    return dk * math.sqrt(constants.hbar / (2 * constants.mass * 2 * math.pi * nu))


def raman_dk(geometry, constants: PhysicalConstants = BE9):
    if geometry not in GEOMETRIES:
        raise InputError(f"geometry must be one of {GEOMETRIES}", module=MODULE)
    return 0.0 if geometry == "0" else 2 * math.sqrt(2) * math.pi / constants.raman_wavelength


@dataclass(frozen=True)
class RamanConfig:
    """Carrier drive: base Rabi rate ``rabi`` (rad/s) on the axial mode at ``nu``."""

    geometry: str = "90"
    rabi: float = 2 * math.pi * 100e3
    nu: float = 2.9e6
    constants: PhysicalConstants = field(default=BE9, repr=False)

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise InputError(f"geometry must be one of {GEOMETRIES}", module=MODULE)
        if not (self.rabi > 0 and self.nu > 0):
            raise InputError("rabi rate and frequency must be positive", module=MODULE)

    @property
    def dk(self):
        return raman_dk(self.geometry, self.constants)

    @property
    def eta(self):
        return lamb_dicke(self.nu, self.constants, self.dk)

    def rates(self, n):
        """``Omega_n = Omega exp(-eta^2/2) L_n(eta^2)``."""
        x = self.eta**2
        return self.rabi * math.exp(-x / 2) * laguerre(n, x)

    @property
    def cold_crossing(self):
        """First P_down = 1/2 time of the ground state."""
        return math.pi / (2 * abs(float(self.rates(0))))


def carrier_flop(dist: FockDistribution, config: RamanConfig, t, chunk=2_000_000):
    """``P_down(t) = sum_n p_n cos^2(Omega_n t / 2)``."""
    if dist.probs[-1] > TAIL_LIMIT and len(dist.probs) > 1:
        raise TruncationError(f"p(n_max = {dist.n_max}) = {dist.probs[-1]:.2e} exceeds {TAIL_LIMIT:g}",
                              module=MODULE)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InputError("times must be >= 0", module=MODULE)
    flat = t.ravel()
    keep = dist.probs > 1e-16
    p = dist.probs[keep]
    w = config.rates(np.arange(len(dist.probs))[keep])
    out = np.empty_like(flat)
    step = max(1, chunk // max(1, len(p)))
    for i in range(0, len(flat), step):
        out[i:i + step] = p @ np.cos(np.outer(w, flat[i:i + step]) / 2) ** 2
    return np.clip(out, 0.0, 1.0).reshape(t.shape)


def thermal_flop(nbar, config: RamanConfig, t):
    return carrier_flop(FockDistribution.thermal(nbar), config, t)


def sideband_ratio_to_n(r):
    """``<n> = r / (1 - r)`` for red/blue sideband ratio ``r``."""
    if not 0 <= r:
        raise InputError("sideband ratio must be >= 0", module=MODULE)
    if r >= 1:
        raise DomainError("equal sidebands: motional state not resolvable (nbar -> infinity)", module=MODULE)
    return r / (1 - r)


def n_to_sideband_ratio(nbar):
    if not nbar >= 0:
        raise InputError("nbar must be >= 0", module=MODULE)
    return nbar / (nbar + 1)


def synthetic_flopping(nbar, config: RamanConfig, t, shots=200, seed=0):
    """Binomial shot-noise samples of the thermal carrier curve."""
    rng = np.random.default_rng(seed)
    p = thermal_flop(nbar, config, t)
    k = rng.binomial(shots, p)
    est = k / shots
    se = np.sqrt(np.maximum(est * (1 - est), 0.25 / shots) / shots)
    return est, se


@dataclass(frozen=True)
class NbarFit:
    nbar: float
    stderr: float
    rabi: float
    chi2: float
    n_points: int


NBAR_MAX = 1000.0


def fit_nbar(t, p_down, config: RamanConfig, sigma=None, fit_rabi=False):
    """Least-squares thermal ``<n>`` (and optionally the Rabi rate) from carrier flopping."""
    t, p_down = np.asarray(t, float), np.asarray(p_down, float)
    if len(t) < 10:
        raise InputError("need at least 10 time samples", module=MODULE)
    if t.max() - t.min() < 2 * math.pi / config.rabi:
        raise InputError("samples must span at least one cold Rabi period", module=MODULE)
    sigma = np.ones_like(p_down) if sigma is None else np.maximum(np.asarray(sigma, float), 1e-6)

    def model(q, rabi):
        return thermal_flop(float(np.expm1(q)), RamanConfig(config.geometry, rabi, config.nu, config.constants), t)

    def resid(x):
        return (model(x[0], x[1] * config.rabi if fit_rabi else config.rabi) - p_down) / sigma

    # q = ln(1 + nbar) keeps the lookup well scaled from 0 to hot states
    grid = np.linspace(0.0, math.log1p(NBAR_MAX), 41)
    cost = [np.sum(resid([q, 1.0]) ** 2) for q in grid]
    q0 = grid[int(np.argmin(cost))]
    x0 = [q0, 1.0] if fit_rabi else [q0]
    lo = [0.0, 0.5] if fit_rabi else [0.0]
    hi = [math.log1p(NBAR_MAX), 1.5] if fit_rabi else [math.log1p(NBAR_MAX)]

    def f(x):
        return resid(x if fit_rabi else [x[0], 1.0])

    sol = optimize.least_squares(f, x0, bounds=(lo, hi), x_scale="jac", xtol=1e-12, ftol=1e-12)
    if not sol.success:
        raise FitError(f"fit did not converge: {sol.message}", residual=float(np.sum(sol.fun**2)), module=MODULE)
    chi2 = float(np.sum(sol.fun**2))
    dof = max(1, len(t) - len(x0))
    J = sol.jac
    try:
        cov = np.linalg.pinv(J.T @ J) * max(1.0, chi2 / dof)
    except np.linalg.LinAlgError:
        cov = np.full((len(x0), len(x0)), np.inf)
    q = sol.x[0]
    nbar = float(np.expm1(q))
    se = float(math.exp(q) * math.sqrt(max(cov[0, 0], 0.0)))
    rabi = float(sol.x[1] * config.rabi) if fit_rabi else config.rabi
    return NbarFit(nbar, se, rabi, chi2, len(t))


def first_crossing(t, p, level=0.5, window=None):
    """First time a sampled curve drops through ``level`` (linear interpolation).

    ``window`` (odd sample count) applies a quadratic Savitzky-Golay smoother
    first, which suppresses early crossings caused by shot noise.
    """
    t, p = np.asarray(t, float), np.asarray(p, float)
    if window is not None and window > 2:
        from scipy.signal import savgol_filter

        p = savgol_filter(p, int(window) | 1, 2)
    below = np.nonzero(p < level)[0]
    if len(below) == 0 or below[0] == 0:
        raise EstimatorError("curve never crosses the midway level", module=MODULE)
    i = below[0]
    return float(t[i - 1] + (p[i - 1] - level) / (p[i - 1] - p[i]) * (t[i] - t[i - 1]))


def crossing_time(nbar, config: RamanConfig, level=0.5, t_max_factor=40.0):
    """Exact first crossing of the thermal curve, by bracketing on a fine grid and root finding."""
    dist = FockDistribution.thermal(nbar)
    t0 = config.cold_crossing
    grid = np.linspace(0, t_max_factor * t0, int(40 * t_max_factor) + 1)
    p = carrier_flop(dist, config, grid)
    below = np.nonzero(p < level)[0]
    if len(below) == 0:
        raise DomainError(f"no midway crossing for nbar = {nbar:g}", module=MODULE)
    i = below[0]
    return optimize.brentq(lambda s: float(carrier_flop(dist, config, s)) - level, grid[i - 1], grid[i], xtol=1e-15)


@dataclass
class CrossingLookup:
    """First-crossing time versus ``<n>`` on ``[0, n_hi]``, built once per configuration."""

    config: RamanConfig
    nbar: np.ndarray = None
    times: np.ndarray = None
    n_hi: float = 1000.0
    points: int = 61

    def __post_init__(self):
        if self.nbar is None:
            self.nbar = np.concatenate([[0.0], np.geomspace(1e-2, self.n_hi, self.points - 1)])
            self.times = np.array([crossing_time(n, self.config) for n in self.nbar])
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("crossing time is not monotone in nbar for this configuration", module=MODULE)

    @cached_property
    def _inverse(self):
        from scipy.interpolate import PchipInterpolator

        return PchipInterpolator(np.log(self.times), np.log1p(self.nbar))

    @cached_property
    def _forward(self):
        from scipy.interpolate import PchipInterpolator

        return PchipInterpolator(np.log1p(self.nbar), np.log(self.times))

    def time(self, nbar):
        return float(np.exp(self._forward(math.log1p(nbar))))

    def invert(self, t):
        lo, hi = self.times[0], self.times[-1]
        if not lo <= t <= hi:
            raise DomainError(f"crossing time {t:.4g} s outside the lookup range [{lo:.4g}, {hi:.4g}] s",
                              module=MODULE)
        return float(np.expm1(self._inverse(math.log(t))))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["nbar", "t_cross_s"])
        for n, t in zip(self.nbar, self.times):
            w.writerow([f"{n:.12g}", f"{t:.12g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, config: RamanConfig):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["nbar", "t_cross_s"]:
            raise InputError("lookup CSV needs header nbar,t_cross_s", module=MODULE)
        data = np.array([[float(a), float(b)] for a, b in rows[1:] if a], float)
        return cls(config, data[:, 0], data[:, 1])


def first_crossing_estimate(hot, cold, config: RamanConfig, cold_nbar=None, lookup: CrossingLookup | None = None,
                            window=None):
    """``<n>`` of the hot curve from the ratio of first midway-crossing times.

    ``hot`` and ``cold`` are ``(t, P_down)`` pairs. The cold curve's ``<n>``
    is fitted unless given. The measured ratio rescales the lookup's cold
    crossing time, so a common error in the Rabi rate cancels.
    """
    t_hot = first_crossing(*hot, window=window)
    t_cold = first_crossing(*cold, window=window)
    lookup = CrossingLookup(config) if lookup is None else lookup
    if cold_nbar is None:
        cold_nbar = fit_nbar(cold[0], cold[1], config).nbar
    return lookup.invert(t_hot / t_cold * lookup.time(cold_nbar))


def flopping_to_csv(t, p, stderr):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_s", "P_down", "stderr"])
    for a, b, c in zip(t, p, stderr):
        w.writerow([f"{a:.9g}", f"{b:.9g}", f"{c:.9g}"])
    return buf.getvalue()
