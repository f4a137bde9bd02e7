"""Translation-invariant Gibbs measures of a given slope on the whole honeycomb.

The bulk inverse Kasteleyn kernel is a double contour integral over the unit
torus of z1^(n-m) w1^(-n) / (a + b z1 + c w1).  The z1 integral is done by
residues, leaving one real-variable integral over the angle of w1.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DegenerateSlope, InvalidSimplexPoint, ZeroDisplacement

QUAD_EPS = 1e-12


@dataclass(frozen=True)
class SlopeParams:
    p: tuple
    theta: tuple
    sides: tuple
    z: complex
    w: complex
    facet: bool = False

    @property
    def a(self):
        return self.sides[0]

    @property
    def b(self):
        return self.sides[1]

    @property
    def c(self):
        return self.sides[2]

    @property
    def complex_slope(self):
        """Phi = -c w / a, a point of the upper half-plane."""
        return -self.c * self.w / self.a

    def edge_weight(self, etype):
        return self.sides[etype - 1]

    def require_interior(self):
        if self.facet:
            raise DegenerateSlope(f"slope {self.p} lies on the boundary of the simplex")


def slope_from_p(pa, pb, pc, allow_facet=True):
    p = (float(pa), float(pb), float(pc))
    if any(not math.isfinite(x) or x < 0 for x in p) or abs(sum(p) - 1) > 1e-12:
        raise InvalidSimplexPoint(f"{p} is not a point of the simplex")
    facet = any(x <= 0 or x >= 1 for x in p)
    if facet and not allow_facet:
        raise InvalidSimplexPoint(f"{p} is on the simplex boundary")
    theta = tuple(math.pi * x for x in p)
    sides = tuple(math.sin(t) for t in theta)
    z = -np.exp(-1j * theta[2])
    w = -np.exp(1j * theta[1])
    return SlopeParams(p, theta, sides, complex(z), complex(w), facet)


def bulk_kernel(slope, m, n):
    """K^{-1}_abc(b, w) for b = w + e1 + m xhat + n yhat, accurate to ~1e-10."""
    slope.require_interior()
    m = int(m)
    n = int(n)
    k = n - m
    a, b, c = slope.sides
    # |z0| < 1 exactly on the arc |phi - pi| < theta_b of the w1 circle
    tb = slope.theta[1]
    if k >= 1:
        lo, hi = math.pi - tb, math.pi + tb
    else:
        lo, hi = -(math.pi - tb), math.pi - tb

    def integrand(phi):
        w1 = complex(math.cos(phi), math.sin(phi))
        z0 = -(a + c * w1) / b
        val = z0 ** (k - 1) / b * w1 ** (-n)
        return val if k >= 1 else -val

    # oscillation frequency grows with |m| + |n|; split the arc accordingly
    pieces = max(1, (abs(m) + abs(n)) // 4 + 1)
    edges = np.linspace(lo, hi, pieces + 1)
    re = 0.0
    for x0, x1 in zip(edges[:-1], edges[1:]):
        re += integrate.quad(lambda t: integrand(t).real, x0, x1, epsabs=QUAD_EPS, epsrel=QUAD_EPS, limit=200)[0]
    return re / (2 * math.pi)


def bulk_kernel_asymptotic(slope, m, n):
    """Leading term (1/pi) Im(z^(n-m) w^(-n) / (c w m + a n))."""
    slope.require_interior()
    if m == 0 and n == 0:
        raise ZeroDisplacement("the asymptotic form needs (m, n) != (0, 0)")
    a, c = slope.a, slope.c
    denom = c * slope.w * m + a * n
    return float((slope.z ** (n - m) * slope.w ** (-n) / denom).imag / math.pi)


def gauge_F_white(slope, m, n, lam=1.0):
    a, b, c = slope.sides
    return lam * (b * slope.z / a) ** m * (c * slope.w / (b * slope.z)) ** n


def gauge_F_black(slope, m, n, lam=1.0):
    a, b, c = slope.sides
    return np.conj(lam) * a * (b * slope.z / a) ** (-m) * (c * slope.w / (b * slope.z)) ** (-n)


def gauge_factor(slope, m, n):
    a, b, c = slope.sides
    return a * (a / b) ** m * (b / c) ** n


def gauge_kernel(slope, white, black):
    """Inverse of the unit-weight operator in the exponential gauge of this slope."""
    slope.require_interior()
    m = black[0] - white[0]
    n = black[1] - white[1]
    return gauge_factor(slope, m, n) * bulk_kernel(slope, m, n)


def gauge_kernel_leading(slope, white, black):
    """(1/pi) Im(F(w) F(b) / (c w m + a n)) with (m, n) = black - white."""
    m = black[0] - white[0]
    n = black[1] - white[1]
    if m == 0 and n == 0:
        raise ZeroDisplacement("leading term needs (m, n) != (0, 0)")
    fw = gauge_F_white(slope, *white)
    fb = gauge_F_black(slope, *black)
    return float((fw * fb / (slope.c * slope.w * m + slope.a * n)).imag / math.pi)


def edge_densities(slope):
    """Probabilities of the three edge types, a K^{-1}(0,0), b K^{-1}(-1,0), c K^{-1}(-1,-1)."""
    a, b, c = slope.sides
    return (a * bulk_kernel(slope, 0, 0), b * bulk_kernel(slope, -1, 0), c * bulk_kernel(slope, -1, -1))


def _log2sin_u(u):
    # t = u^2 removes the logarithmic endpoint singularity
    t = u * u
    if t == 0.0:
        return 0.0
    return 2 * u * math.log(2 * math.sin(t))


def lobachevsky(x):
    """L(x) = -int_0^x log|2 sin t| dt, odd and pi-periodic."""
    x = math.fmod(float(x), math.pi)
    if x < 0:
        x += math.pi
    if x > math.pi / 2:
        return -lobachevsky(math.pi - x) if x < math.pi else 0.0
    if x == 0.0:
        return 0.0
    with warnings.catch_warnings():
        # the tolerance sits at round-off level; quad reports that harmlessly
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(_log2sin_u, 0.0, math.sqrt(x), epsabs=1e-14, epsrel=1e-13, limit=200)
    return -val


def surface_tension(pa, pb, pc):
    p = (float(pa), float(pb), float(pc))
    if any(not math.isfinite(x) or x < -1e-15 for x in p) or abs(sum(p) - 1) > 1e-12:
        raise InvalidSimplexPoint(f"{p} is not a point of the simplex")
    return 0.0 - sum(lobachevsky(math.pi * x) for x in p) / math.pi


def surface_tension_grid(size):
    """sigma on the simplex grid (i/size, j/size, 1 - i/size - j/size)."""
    rows = []
    for i in range(size + 1):
        for j in range(size + 1 - i):
            pa = i / size
            pb = j / size
            pc = max(0.0, 1.0 - pa - pb)
            rows.append((pa, pb, pc, surface_tension(pa, pb, pc)))
    return rows
