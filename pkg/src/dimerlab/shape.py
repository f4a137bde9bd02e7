"""Limit-shape analytics: complex slope, Burgers residuals, complex height,
Beltrami coefficients and the explicit boxed-plane-partition maps.

Plane points are given by (x, y) coefficients of xhat and yhat, which sit at
120 degrees to each other; r^2 = x^2 - xy + y^2 is the squared Euclidean norm.
"""

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import BranchCutCrossing, GridTooCoarse, OutsideDomain, OutsideInscribedCircle

E_PI3 = cmath.exp(1j * math.pi / 3)
INSCRIBED_R2 = 0.75


def norm2(x, y):
    return x * x - x * y + y * y


def standard_coordinate(x, y):
    """Conformal coordinate z = i(y - e^{i pi/3} x) with |z|^2 = x^2 - xy + y^2."""
    return 1j * (np.asarray(y) - E_PI3 * np.asarray(x))


def from_standard_coordinate(z):
    z = np.asarray(z, dtype=complex)
    # z = x e^{-i pi/6} + i y
    x = z.real / math.cos(math.pi / 6)
    y = z.imag + x * math.sin(math.pi / 6)
    return x, y


def phi_bpp(x, y):
    """Complex slope of the boxed plane partition inside the inscribed circle.

    Works on scalars or arrays; the square root branch gives Im > 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = norm2(x, y)
    if np.any(r2 >= INSCRIBED_R2):
        raise OutsideInscribedCircle("point outside x^2 - xy + y^2 < 3/4")
    if np.any(x * x == 1.0):
        raise OutsideInscribedCircle("x^2 = 1 makes the formula singular")
    val = (1 - 2 * x * y + 1j * np.sqrt(3 - 4 * r2)) / (2 * (1 - x * x))
    return complex(val) if val.ndim == 0 else val


def quadratic_residual(x, y):
    p = phi_bpp(x, y)
    return np.abs((-p * np.asarray(x) + np.asarray(y)) ** 2 - (1 - p + p * p))


@dataclass
class ComplexSlopeField:
    """Samples of Phi on an axis-aligned (x, y) grid; NaN outside the domain."""

    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    spacing: float

    @property
    def mask(self):
        return np.isfinite(self.values)


def sample_field(func, spacing, extent, domain=None):
    """Sample func(x, y) on the grid spacing*Z^2 within [-extent, extent]^2.

    `domain(x, y)` selects the points kept; others are NaN.
    """
    k = int(math.floor(extent / spacing + 1e-9))
    xs = spacing * np.arange(-k, k + 1)
    ys = xs.copy()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    keep = np.ones_like(X, dtype=bool) if domain is None else domain(X, Y)
    vals = np.full(X.shape, np.nan + 0j)
    if np.any(keep):
        vals[keep] = func(X[keep], Y[keep])
    return ComplexSlopeField(xs, ys, vals, spacing)


def bpp_field(spacing, radius=0.8):
    """BPP slope sampled on the disk r < radius (radius < sqrt(3)/2)."""
    if radius ** 2 >= INSCRIBED_R2:
        raise OutsideInscribedCircle("sampling radius reaches the inscribed circle")
    return sample_field(phi_bpp, spacing, 1.2 * radius,
                        lambda X, Y: norm2(X, Y) < radius ** 2)


def _interior_stencil(field):
    m = field.mask
    inner = np.zeros_like(m)
    inner[1:-1, 1:-1] = (m[1:-1, 1:-1] & m[2:, 1:-1] & m[:-2, 1:-1]
                         & m[1:-1, 2:] & m[1:-1, :-2])
    return inner


def burgers_residual(field, region=None):
    """max |Phi_x + Phi Phi_y| by central differences over interior grid points.

    `region(x, y)` optionally restricts where the maximum is taken.  Returns
    (residual, spacing).
    """
    inner = _interior_stencil(field)
    if region is not None:
        X, Y = np.meshgrid(field.xs, field.ys, indexing="ij")
        inner &= region(X, Y)
    if not np.any(inner):
        raise GridTooCoarse("no grid point has a full central-difference stencil")
    v = field.values
    h = field.spacing
    px = np.zeros_like(v)
    py = np.zeros_like(v)
    px[1:-1, :] = (v[2:, :] - v[:-2, :]) / (2 * h)
    py[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * h)
    res = np.abs(px + v * py)[inner]
    return float(res.max()), h


def burgers_residual_at(func, points, h):
    """Central-difference Burgers residual of func at given (x, y) points."""
    out = []
    for x, y in points:
        px = (func(x + h, y) - func(x - h, y)) / (2 * h)
        py = (func(x, y + h) - func(x, y - h)) / (2 * h)
        out.append(abs(px + func(x, y) * py))
    return np.array(out)


def beltrami_from_phi(phi):
    phi = np.asarray(phi)
    return (phi - E_PI3) / (phi - E_PI3.conjugate())


@dataclass
class BeltramiField:
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray


def beltrami(field):
    with np.errstate(invalid="ignore"):  # NaN marks points outside the domain
        values = beltrami_from_phi(field.values)
    return BeltramiField(field.xs, field.ys, values)


def beltrami_bpp_closed_form(x, y):
    """(2 r^2 - 3 + sqrt(9 - 12 r^2)) / (2 (y - e^{-i pi/3} x)^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = norm2(x, y)
    return (2 * r2 - 3 + np.sqrt(9 - 12 * r2)) / (2 * (y - E_PI3.conjugate() * x) ** 2)


def dH(phi_value):
    """Coefficients (of dx, dy) of the complex height form at a slope value."""
    return cmath.log(phi_value - 1), -cmath.log(1 / phi_value - 1)


def complex_height_increment(func, start, end, steps=200):
    """Trapezoid integral of log(Phi - 1) dx - log(1/Phi - 1) dy along a segment.

    The logarithms are continued along the path; a jump in argument larger
    than pi/2 between neighbouring nodes raises BranchCutCrossing.
    """
    (x0, y0), (x1, y1) = start, end
    ts = np.linspace(0.0, 1.0, steps + 1)
    xs = x0 + ts * (x1 - x0)
    ys = y0 + ts * (y1 - y0)
    phis = np.asarray(func(xs, ys), dtype=complex)
    la = np.log(phis - 1)
    lb = np.log(1 / phis - 1)
    for arr in (la, lb):
        jumps = np.abs(np.diff(arr.imag))
        if np.any(jumps > math.pi / 2):
            raise BranchCutCrossing("logarithm branch jumps along the path; refine the path")
    integrand = la * (x1 - x0) - lb * (y1 - y0)
    return complex(np.sum((integrand[1:] + integrand[:-1]) / 2) / steps)


def loop_integral(func, vertices, steps=200):
    total = 0j
    for p, q in zip(vertices, vertices[1:] + vertices[:1]):
        total += complex_height_increment(func, p, q, steps)
    return total


def slope_from_phi(phi_value):
    """(p_a, p_b, p_c) from the triangle with vertices 0, 1, Phi."""
    tb = cmath.phase(phi_value)
    tc = math.pi - cmath.phase(phi_value - 1)
    ta = math.pi - tb - tc
    return (ta / math.pi, tb / math.pi, tc / math.pi)


def bpp_height_slope_consistency(x, y):
    p = slope_from_phi(phi_bpp(x, y))
    return p


def height_gradient(p):
    """Mean height change per unit step along xhat and yhat: (3 p_c - 1, 3 p_a - 1)."""
    pa, pb, pc = p
    return 3 * pc - 1, 3 * pa - 1


def phi_disk_map_bpp(x, y):
    """Diffeomorphism from the inscribed disk onto the unit disk."""
    z = standard_coordinate(x, y)
    r = np.abs(z)
    if np.any(r ** 2 >= INSCRIBED_R2):
        raise OutsideDomain("point outside the inscribed circle")
    # (sqrt3 - sqrt(3 - 4r^2)) / (2 r^2) rewritten without cancellation
    scale = 2 / (math.sqrt(3) + np.sqrt(3 - 4 * r * r))
    out = scale * z
    return complex(out) if np.ndim(out) == 0 else out


def phi_inverse_bpp(z):
    """Inverse map from the unit disk back to (x, y)."""
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z) > 1):
        raise OutsideDomain("point outside the closed unit disk")
    w = z * math.sqrt(3) / (1 + np.abs(z) ** 2)
    x, y = from_standard_coordinate(w)
    if np.ndim(x) == 0:
        return float(x), float(y)
    return x, y


def pullback_beltrami(mapping, x, y, h=1e-4):
    """phi_zbar / phi_z of mapping(x, y) in the standard coordinate, by differences."""
    z0 = standard_coordinate(x, y)

    def f(zz):
        xx, yy = from_standard_coordinate(zz)
        return mapping(xx, yy)

    fx = (f(z0 + h) - f(z0 - h)) / (2 * h)
    fy = (f(z0 + 1j * h) - f(z0 - 1j * h)) / (2 * h)
    dz = 0.5 * (fx - 1j * fy)
    dzb = 0.5 * (fx + 1j * fy)
    return dzb / dz


def self_beltrami_defect(x, y, h=1e-4):
    """|mu_zbar / mu_z - mu| for mu the BPP Beltrami coefficient."""
    mu = lambda xx, yy: beltrami_from_phi(phi_bpp(xx, yy))
    return abs(pullback_beltrami(mu, x, y, h) - mu(x, y))
