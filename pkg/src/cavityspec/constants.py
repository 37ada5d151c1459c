"""Physical constants (CODATA 2018, SI units, 9 significant digits).

h, c, e and k_B are exact by definition since the 2019 SI redefinition;
hbar is derived from h so the two never disagree.
"""

import math

TWO_PI = 2.0 * math.pi

H_PLANCK = 6.62607015e-34      # J s (exact)
HBAR = H_PLANCK / TWO_PI       # J s
C_LIGHT = 299792458.0          # m/s (exact)
E_CHARGE = 1.602176634e-19     # C (exact)
K_BOLTZMANN = 1.380649e-23     # J/K (exact)
EPSILON_0 = 8.85418781e-12     # F/m
MU_BOHR = 9.27401008e-24       # J/T
