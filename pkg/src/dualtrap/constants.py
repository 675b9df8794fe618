"""Physical constants for a single 9Be+ qubit ion (SI units)."""
from dataclasses import dataclass

import scipy.constants as sc


@dataclass(frozen=True)
class PhysicalConstants:
    mass: float = 9.0121831 * sc.atomic_mass
    charge: float = sc.elementary_charge
    hbar: float = sc.hbar
    k_B: float = sc.Boltzmann
    coulomb: float = 1.0 / (4.0 * sc.pi * sc.epsilon_0)
    hyperfine_hz: float = 1.25e9
    raman_wavelength: float = 313e-9

    @property
    def h(self) -> float:
        return 2.0 * sc.pi * self.hbar

    @property
    def charge_to_mass(self) -> float:
        return self.charge / self.mass


BE9 = PhysicalConstants()
