"""Physical constants (SI) used throughout the package."""

import scipy.constants as sc

KB = sc.k
HBAR = sc.hbar
ATOMIC_MASS = sc.physical_constants["atomic mass constant"][0]

CESIUM_MASS = 132.905451931 * ATOMIC_MASS
CESIUM_D2_WAVELENGTH = 852.34727582e-9

MICRO = 1e-6
MILLI = 1e-3
NANO = 1e-9
