"""Unit system and physical constants.

Everything in the package uses nm, fs, eV and radians.  Masses are
expressed in eV fs^2 / nm^2 so that hbar^2 / (2 m) comes out in eV nm^2.
"""

# hbar in eV fs
HBAR = 0.6582119569

# free electron mass in eV fs^2 / nm^2, from m_e c^2 = 510998.95 eV and
# c = 299.792458 nm/fs
ELECTRON_MASS = 510998.95 / 299.792458**2

# e^2 / (4 pi eps0) in eV nm (vacuum Coulomb constant)
COULOMB_CONSTANT = 1.43996


def kinetic_coefficient(mass_ratio: float) -> float:
    """hbar^2 / (2 m) in eV nm^2 for an effective mass m = mass_ratio * m_e.

    For GaAs (mass_ratio 0.067) this evaluates to 0.56865 eV nm^2.
    """
    return HBAR**2 / (2.0 * mass_ratio * ELECTRON_MASS)
