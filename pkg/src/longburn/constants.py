"""Physical constants and unit conversions (SI throughout)."""

import math

MU_EARTH = 3.986004418e14  # m^3/s^2
R_EARTH = 6378137.0  # m, equatorial
J2_EARTH = 1.08262668e-3
C_LIGHT = 3.0e8  # m/s, value used by the measurement model

ARCSEC = math.pi / (180.0 * 3600.0)  # rad
DEG = math.pi / 180.0

CHI_MAX_3D = 3.38  # ~99% containment for a 3-D Mahalanobis distance
