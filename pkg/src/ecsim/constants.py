"""Frozen physical constants.

All numerical work in the package routes through this single table so that
results are bit-reproducible: the values are CODATA-2018 (the SI-exact ones
are exact by definition since the 2019 redefinition).  Do not "refresh" these
from scipy.constants at import time -- that would tie output bytes to the
installed scipy version.
"""

CONSTANTS_VERSION = "CODATA-2018"

# Planck constant [J s] (exact)
H_PLANCK = 6.62607015e-34
# Reduced Planck constant [J s]
HBAR = 1.054571817e-34
# Boltzmann constant [J/K] (exact)
K_B = 1.380649e-23
# Elementary charge [C] (exact)
E_CHARGE = 1.602176634e-19
# Vacuum permeability [N/A^2]
MU_0 = 1.25663706212e-6
# Magnetic flux quantum h/2e [Wb]
PHI_0 = H_PLANCK / (2.0 * E_CHARGE)

# Electron gyromagnetic ratio 2*pi*28.0 GHz/T, the conventional value for
# YIG ferromagnetic resonance.  Calculators take gamma0 as an argument; this
# is only a convenient default.
GAMMA_E = 2.0 * 3.141592653589793 * 28.0e9
