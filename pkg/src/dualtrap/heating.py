"""Motional heating: Johnson-noise prediction, scaling laws and a linear heating model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import BE9, PhysicalConstants
from .errors import InputError
from .potential import ElectrodeBasis
from .waveform import CONTROL_FILTER, FilterModel, filter_impedance

MODULE = "heating"


@dataclass(frozen=True)
class NoiseBudget:
    """Uncorrelated Johnson sources, one per electrode, each behind the same filter.

    ``couplings`` holds the axial field at the ion per volt on each electrode
    (V/m per V).
    """

    temperature: float
    couplings: tuple[float, ...]
    nu: float
    filter: FilterModel = CONTROL_FILTER
    constants: PhysicalConstants = field(default=BE9, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "couplings", tuple(float(k) for k in self.couplings))
        if not self.temperature >= 0:
            raise InputError("temperature must be >= 0", module=MODULE)
        if any(k < 0 for k in self.couplings):
            raise InputError("couplings must be >= 0", module=MODULE)
        if not self.nu > 0:
            raise InputError("frequency must be positive", module=MODULE)


def budget_from_basis(basis: ElectrodeBasis, where="trap2", temperature=300.0, nu=2.9e6,
                      filt: FilterModel = CONTROL_FILTER, sides=2):
    """Budget with couplings from the basis gradient at ``where``.

    Each of the five controls is a pair of electrodes on opposite sides of the
    slot; both members are counted as independent sources with the
    single-electrode coupling ``|dphi_i/dz|``.
    """
    z = basis.geometry.location(where)
    k = np.abs(basis.evaluate(z, 1))
    return NoiseBudget(temperature, tuple(np.tile(k, sides)), nu, filt, basis.constants)


def field_noise_psd(budget: NoiseBudget, nu=None):
    """One-sided field noise S_E at ``nu`` (default the budget frequency), (V/m)^2/Hz."""
    nu = budget.nu if nu is None else nu
    if not nu > 0:
        raise InputError("frequency must be positive", module=MODULE)
    re_z = filter_impedance(budget.filter, 2 * np.pi * nu).real
    k = np.asarray(budget.couplings)
    return float(np.sum(k**2) * 4 * budget.constants.k_B * budget.temperature * re_z)


def heating_rate_from_psd(s_e, nu, constants: PhysicalConstants = BE9):
    """Gamma = e^2 S_E / (4 m hbar w), quanta per second."""
    if not nu > 0:
        raise InputError("frequency must be positive", module=MODULE)
    w = 2 * np.pi * nu
    return constants.charge**2 * s_e / (4 * constants.mass * constants.hbar * w)


def johnson_heating_rate(budget: NoiseBudget):
    """Axial heating rate (quanta/s) from thermal noise of the filter resistors."""
    return heating_rate_from_psd(field_noise_psd(budget), budget.nu, budget.constants)


def electrode_contributions(budget: NoiseBudget):
    """Per-electrode share of the heating rate; sums to :func:`johnson_heating_rate`."""
    out = []
    for i in range(len(budget.couplings)):
        k = [0.0] * len(budget.couplings)
        k[i] = budget.couplings[i]
        out.append(johnson_heating_rate(NoiseBudget(budget.temperature, k, budget.nu, budget.filter,
                                                    budget.constants)))
    return np.array(out)


def scaling_predict(rate_ref, x_ref, x_new, exponent=-4.0):
    """Power-law scaling ``rate_ref * (x_new / x_ref) ** exponent`` (distance or frequency)."""
    if not (x_ref > 0 and x_new > 0):
        raise InputError("scaling arguments must be positive", module=MODULE)
    return rate_ref * (x_new / x_ref) ** exponent


@dataclass(frozen=True)
class ThermalState:
    nbar: float
    nu: float

    def __post_init__(self):
        if not self.nbar >= 0:
            raise InputError("mean occupation must be >= 0", module=MODULE)


def apply_heating(state: ThermalState, rate, duration):
    """Linear ambient heating: ``nbar += rate * duration``."""
    if not (rate >= 0 and duration >= 0):
        raise InputError("rate and duration must be >= 0", module=MODULE)
    return ThermalState(state.nbar + rate * duration, state.nu)
