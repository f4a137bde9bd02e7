"""Height fluctuations: exact centered moments from the inverse Kasteleyn
matrix, Gaussian free field predictions and Monte Carlo estimates.

Heights are read along dual paths from the boundary, where they are
deterministic.  Crossing an edge e with sign s changes the height by
s (3 chi_e - 1), so a centered height is 3 sum s (chi_e - P(e)) and its
moments are sums of centered edge correlations.  For distinct edges those
equal determinants of K(w_i, b_i) K^{-1}(b_i, w_j) with the diagonal zeroed.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CoincidentPoints, OutsideDomain, PathsInvalid, TooLarge, ValidationError
from .lattice import STEPS, crossing, face_position
from .shape import phi_disk_map_bpp

HEIGHT_FACTOR = 9 / (4 * math.pi)
MOMENT_BUDGET = 5 * 10**7


@dataclass(frozen=True)
class MomentRequest:
    faces: tuple
    paths: tuple  # paths[i] runs from a boundary face to faces[i]

    def __post_init__(self):
        if len(self.faces) != len(self.paths):
            raise PathsInvalid("one path per face is required")


def path_to_boundary(region, face, direction):
    """Straight dual path from the first boundary face met along `direction`
    (an index into STEPS) back to `face`."""
    face = tuple(face)
    if face not in region.faces:
        raise PathsInvalid(f"{face} is not a face of the region")
    bnd = set(region.boundary_faces)
    d = STEPS[direction]
    out = [face]
    while out[-1] not in bnd:
        nxt = (out[-1][0] + d[0], out[-1][1] + d[1])
        if nxt not in region.faces:
            raise PathsInvalid(f"path from {face} leaves the region before the boundary")
        out.append(nxt)
    return tuple(reversed(out))


def straight_request(region, faces, directions):
    faces = [tuple(f) for f in faces]
    return MomentRequest(tuple(faces),
                         tuple(path_to_boundary(region, f, d) for f, d in zip(faces, directions)))


def validate_request(region, req, disjoint=False):
    bnd = set(region.boundary_faces)
    for f, path in zip(req.faces, req.paths):
        if not path or path[-1] != f:
            raise PathsInvalid(f"path does not end at {f}")
        if path[0] not in bnd:
            raise PathsInvalid(f"path to {f} does not start on the boundary")
        for g in path:
            if g not in region.faces:
                raise PathsInvalid(f"path face {g} is outside the region")
        for g, h in zip(path[:-1], path[1:]):
            crossing(g, h)  # raises for non-adjacent faces
    if disjoint:
        sets = [set(path_edges(region, p)) for p in req.paths]
        for i, j in itertools.combinations(range(len(sets)), 2):
            if {(w, b) for w, b, _ in sets[i]} & {(w, b) for w, b, _ in sets[j]}:
                raise PathsInvalid(f"paths {i} and {j} cross a common edge")


def path_edges(region, path):
    """(white, black, sign) for each region edge crossed along the path."""
    out = []
    for f, g in zip(path[:-1], path[1:]):
        w, b, s = crossing(f, g)
        if w in region.whites and b in region.blacks:
            out.append((w, b, s))
    return out


def _edge_block(system, rows, cols):
    """B[i, j] = sign_i K(w_i, b_i) K^{-1}(b_i, w'_j) over two edge lists."""
    inv = system.inverse
    bi = [system.black_index[b] for _, b, _ in rows]
    wj = [system.white_index[w] for w, _, _ in cols]
    sign = np.array([s for _, _, s in rows], dtype=float)
    return sign[:, None] * inv[np.ix_(bi, wj)]


def exact_height_covariance(system, req):
    """Cov(h(f1), h(f2)) from the two paths of the request."""
    if len(req.faces) != 2:
        raise ValidationError("covariance needs exactly two faces")
    region = system.region
    validate_request(region, req)
    e1 = path_edges(region, req.paths[0])
    e2 = path_edges(region, req.paths[1])
    if not e1 or not e2:
        return 0.0
    a12 = _edge_block(system, e1, e2)
    a21 = _edge_block(system, e2, e1)
    # distinct edges: -K^{-1}(b, w') K^{-1}(b', w); the diagonal term for a shared
    # edge must be P - P^2 rather than -P^2
    total = -float(np.sum(a12 * a21.T))
    index2 = {(w, b): j for j, (w, b, _) in enumerate(e2)}
    for i, (w, b, s) in enumerate(e1):
        j = index2.get((w, b))
        if j is not None:
            total += s * e2[j][2] * float(system.inverse[system.black_index[b], system.white_index[w]])
    return 9.0 * total


def _derangements(k):
    for perm in itertools.permutations(range(k)):
        if all(perm[i] != i for i in range(k)):
            yield perm


def _cycles(perm):
    seen = set()
    out = []
    for i in range(len(perm)):
        if i in seen:
            continue
        cyc = []
        j = i
        while j not in seen:
            seen.add(j)
            cyc.append(j)
            j = perm[j]
        out.append(cyc)
    return out


def _perm_sign(perm):
    return (-1) ** sum(len(c) - 1 for c in _cycles(perm))


def exact_higher_moment(system, req, budget=MOMENT_BUDGET):
    """E[prod (h(f_i) - E h(f_i))] for k <= 4 over edge-disjoint paths.

    The sum over k-tuples of crossed edges of the zero-diagonal determinant is
    expanded over derangements; each cycle of a derangement sums to the trace
    of a product of edge-to-edge blocks.
    """
    k = len(req.faces)
    if k > 4:
        raise TooLarge("moments are supported for k <= 4")
    if k == 0:
        return 1.0
    if k == 2:
        return exact_height_covariance(system, req)
    region = system.region
    validate_request(region, req, disjoint=True)
    edges = [path_edges(region, p) for p in req.paths]
    cost = max(len(e) for e in edges) ** 3 * max(1, k)
    if cost > budget:
        raise TooLarge(f"estimated cost {cost} exceeds budget {budget}")
    if any(not e for e in edges):
        return 0.0
    blocks = {}

    def block(i, j):
        if (i, j) not in blocks:
            blocks[i, j] = _edge_block(system, edges[i], edges[j])
        return blocks[i, j]

    total = 0.0
    for perm in _derangements(k):
        term = float(_perm_sign(perm))
        for cyc in _cycles(perm):
            mat = block(cyc[0], perm[cyc[0]])
            for i in cyc[1:]:
                mat = mat @ block(i, perm[i])
            term *= float(np.trace(mat))
        total += term
    return 3.0 ** k * total


# ---------------------------------------------------------------- GFF predictions

def half_plane_greens(z, z2):
    """Dirichlet Green's function of the upper half-plane, -(1/2 pi) log|(z - z')/(z - conj z')|."""
    z, z2 = complex(z), complex(z2)
    if z == z2:
        raise CoincidentPoints("Green's function is singular on the diagonal")
    if z.imag <= 0 or z2.imag <= 0:
        raise OutsideDomain("points must lie in the open upper half-plane")
    return -math.log(abs((z - z2) / (z - z2.conjugate()))) / (2 * math.pi)


def cayley(u):
    """Unit disk onto the upper half-plane."""
    return 1j * (1 + u) / (1 - u)


@dataclass(frozen=True)
class GFFPrediction:
    """A map from faces to the upper half-plane; the Green's function is fixed."""

    mapping: object
    label: str = ""

    def point(self, face):
        return self.mapping(tuple(face))

    def greens(self, z, z2):
        return half_plane_greens(z, z2)


def flat_disk_prediction(radius):
    """Flat slope: the conformal structure is the Euclidean one, so phi is the
    rescaling of the disk to the unit disk followed by the Cayley map."""
    center = face_position(0, 0)

    def mapping(f):
        u = (face_position(*f) - center) / radius
        if abs(u) >= 1:
            raise OutsideDomain(f"face {f} lies outside the disk")
        return cayley(u)

    return GFFPrediction(mapping, f"flat disk r={radius}")


def bpp_prediction(n):
    """Boxed plane partition in hexagon(n, n, n): the explicit disk map of the
    limit shape followed by the Cayley map."""

    def mapping(f):
        x = (f[0] - n) / n
        y = (f[1] - n) / n
        return cayley(complex(phi_disk_map_bpp(x, y)))

    return GFFPrediction(mapping, f"bpp n={n}")


def gff_covariance_prediction(pred, s1, s2):
    """G(phi(s1), phi(s2)); multiply by HEIGHT_FACTOR to compare with raw heights."""
    z1, z2 = pred.point(s1), pred.point(s2)
    if abs(z1 - z2) == 0:
        raise CoincidentPoints(f"{s1} and {s2} map to the same point")
    return pred.greens(z1, z2)


def pairings(items):
    items = list(items)
    if not items:
        yield []
        return
    first = items[0]
    for i in range(1, len(items)):
        rest = items[1:i] + items[i + 1:]
        for p in pairings(rest):
            yield [(first, items[i])] + p


def wick_from_covariances(cov, k):
    """Sum over pairings of products of cov(i, j); zero for odd k."""
    if k % 2:
        return 0.0
    return sum(math.prod(cov(i, j) for i, j in p) for p in pairings(range(k)))


def wick_moment(pred, points):
    pts = [pred.point(p) for p in points]
    if len(set(pts)) < len(pts):
        raise CoincidentPoints("Wick moments need distinct points")
    return wick_from_covariances(lambda i, j: pred.greens(pts[i], pts[j]), len(pts))


# ---------------------------------------------------------------- Monte Carlo

def mc_height_covariance(samples, f1, f2, base_face=None):
    """Sample covariance of h(f1), h(f2) with a jackknife standard error."""
    from .lattice import height_field

    if len(samples) < 100:
        raise ValidationError("at least 100 samples are required")
    f1, f2 = tuple(f1), tuple(f2)
    x = np.empty(len(samples))
    y = np.empty(len(samples))
    for i, m in enumerate(samples):
        h = height_field(m, base_face)
        x[i] = h[f1]
        y[i] = h[f2]
    return covariance_with_jackknife(x, y)


def covariance_with_jackknife(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    est = float(np.cov(x, y, ddof=1)[0, 1])
    sx, sy, sxy = x.sum(), y.sum(), (x * y).sum()
    # leave-one-out covariances in closed form
    mx = (sx - x) / (n - 1)
    my = (sy - y) / (n - 1)
    loo = ((sxy - x * y) - (n - 1) * mx * my) / (n - 2)
    stderr = float(math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    return est, stderr
