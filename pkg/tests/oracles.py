"""Brute-force oracles, written independently of the code under test.

Adjacency is recomputed from plane positions, matchings are enumerated by
search, heights are summed along explicit face paths and the bulk kernel is
integrated over the torus directly.
"""

import math

import numpy as np
from scipy import integrate, optimize

OMEGA = complex(math.cos(2 * math.pi / 3), math.sin(2 * math.pi / 3))
E1 = (1 - OMEGA.conjugate()) / 3
EDGE_LENGTH = abs(E1)


def white_point(w):
    return w[0] + w[1] * OMEGA


def black_point(b):
    return E1 + b[0] + b[1] * OMEGA


def face_point(f):
    return f[0] + f[1] * OMEGA - E1


def geometric_neighbors(whites, blacks):
    """white -> sorted blacks at unit honeycomb distance, from positions only."""
    blacks = sorted(blacks)
    pts = np.array([black_point(b) for b in blacks])
    out = {}
    for w in sorted(whites):
        if len(pts):
            d = np.abs(pts - white_point(w))
            out[w] = [blacks[i] for i in np.nonzero(np.abs(d - EDGE_LENGTH) < 1e-9)[0]]
        else:
            out[w] = []
    return out


def all_matchings(whites, blacks):
    """Every perfect matching as a dict white -> black (search over the geometric adjacency)."""
    whites = sorted(whites)
    if len(whites) != len(blacks):
        return []
    nbrs = geometric_neighbors(whites, blacks)
    out = []

    def rec(i, used, acc):
        if i == len(whites):
            out.append(dict(zip(whites, acc)))
            return
        for b in nbrs[whites[i]]:
            if b not in used:
                rec(i + 1, used | {b}, acc + [b])

    rec(0, frozenset(), [])
    return out


def hexagon_white_count(a, b, c):
    """Unit triangles of one colour in an a x b x c hexagon."""
    return a * b + b * c + c * a


def scan_hexagon(a, b, c):
    """Whites and blacks of the a x b x c hexagon by a point-in-polygon lattice scan."""
    corners = [0j]
    for length, d in zip((a, b, c, a, b, c), range(6)):
        step = [1, 1 + OMEGA, OMEGA, -1, -1 - OMEGA, -OMEGA][d]
        corners.append(corners[-1] + length * step)
    poly = np.array(corners[:-1]) - E1

    def inside(z):
        n = len(poly)
        wind = 0.0
        for i in range(n):
            p, q = poly[i] - z, poly[(i + 1) % n] - z
            wind += np.angle(q / p)
        return abs(wind) > math.pi

    span = a + b + c + 2
    whites, blacks = set(), set()
    for m in range(-span, span + 1):
        for n in range(-span, span + 1):
            if inside(white_point((m, n))):
                whites.add((m, n))
            if inside(black_point((m, n))):
                blacks.add((m, n))
    return whites, blacks


def step_sign_and_edge(f, g):
    """Honeycomb edge crossed between adjacent faces, and +1 when its white is on the left."""
    zf, zg = face_point(f), face_point(g)
    mid = (zf + zg) / 2
    # the crossed edge is perpendicular to the step and centred at its midpoint
    d = (zg - zf) / abs(zg - zf)
    ends = [mid + 1j * d * EDGE_LENGTH / 2, mid - 1j * d * EDGE_LENGTH / 2]
    white = black = zw = None
    # solve for lattice coordinates directly: z = m + n omega (+ e1 for blacks)
    for z in ends:
        n = round(z.imag / OMEGA.imag)
        m = round(z.real - n * OMEGA.real)
        if abs(m + n * OMEGA - z) < 1e-9:
            white = (m, n)
            zw = z
        zb = z - E1
        n = round(zb.imag / OMEGA.imag)
        m = round(zb.real - n * OMEGA.real)
        if abs(m + n * OMEGA - zb) < 1e-9:
            black = (m, n)
    left = ((zw - zf) * d.conjugate()).imag > 0
    return white, black, 1 if left else -1


def path_height(matching, path):
    """Height at the end of a face path, zero at its start: +2 across a matched
    edge with the white on the left, -1 across an unmatched one, signs reversed
    when the white is on the right."""
    h = 0
    for f, g in zip(path[:-1], path[1:]):
        w, b, s = step_sign_and_edge(f, g)
        h += s * (2 if matching.get(w) == b else -1)
    return h


def enumerated_moment(matchings, paths):
    """E prod (h_i - E h_i) over the uniform measure on `matchings`."""
    hs = np.array([[path_height(m, p) for p in paths] for m in matchings], dtype=float)
    centred = hs - hs.mean(axis=0)
    return float(np.mean(np.prod(centred, axis=1)))


def torus_kernel(sides, m, n, nz=2**14):
    """(1/(2 pi i)^2) double integral of z^(n-m) w^(-n) / (a + b z + c w) on |z| = |w| = 1.

    The z integral is a mean over shifted roots of unity; the w integral is
    adaptive quadrature broken where the pole in z crosses the unit circle.
    """
    a, b, c = sides
    z = np.exp(2j * np.pi * (np.arange(nz) + 0.5) / nz)
    zk = z ** (n - m)

    def inner(phi):
        w = np.exp(1j * phi)
        return ((zk / (a + b * z + c * w)).mean() * w ** (-n)).real

    def crossing(phi):
        return abs(a + c * np.exp(1j * phi)) - b

    grid = np.linspace(-np.pi, np.pi, 721)
    vals = [crossing(x) for x in grid]
    breaks = [optimize.brentq(crossing, grid[i], grid[i + 1])
              for i in range(len(grid) - 1) if vals[i] * vals[i + 1] < 0]
    val = integrate.quad(inner, -np.pi, np.pi, points=breaks, limit=400, epsabs=1e-9)[0]
    return val / (2 * np.pi)


def clausen_lobachevsky(x, terms=2_000_000):
    """L(x) = (1/2) sum_k sin(2 k x) / k^2."""
    k = np.arange(1, terms + 1, dtype=float)
    return 0.5 * float(np.sum(np.sin(2 * k * x) / k ** 2))


def walk_crossings(chain, cut, starts, walks, seed):
    """Mean and standard error of the algebraic number of cut crossings of
    walks absorbed at the roots.  Every non-root vertex has exactly two
    neighbours on its edge, so all walks advance together."""
    rng = np.random.default_rng(seed)
    psi = chain.tgraph.psi
    verts = list(chain.transitions)
    idx = {v: i for i, v in enumerate(verts)}
    nxt = np.zeros((len(verts), 2), dtype=int)
    prob0 = np.zeros(len(verts))
    jump = np.zeros((len(verts), 2))
    absorbing = np.zeros(len(verts), dtype=bool)
    for v, trans in chain.transitions.items():
        i = idx[v]
        if not trans:
            absorbing[i] = True
            nxt[i] = i
            continue
        assert len(trans) == 2
        for k, (g, p) in enumerate(trans):
            nxt[i, k] = idx[g]
            jump[i, k] = cut.crossings(psi[v], psi[g])
        prob0[i] = trans[0][1]
    out = {}
    for v in starts:
        pos = np.full(walks, idx[v])
        total = np.zeros(walks)
        while True:
            live = ~absorbing[pos]
            if not live.any():
                break
            k = (rng.random(walks) >= prob0[pos]).astype(int)
            total += np.where(live, jump[pos, k], 0.0)
            pos = np.where(live, nxt[pos, k], pos)
        out[v] = (float(total.mean()), float(total.std(ddof=1) / math.sqrt(walks)))
    return out


def shoelace(points):
    z = np.asarray(points, dtype=complex)
    return 0.5 * float(np.sum(z.real * np.roll(z.imag, -1) - np.roll(z.real, -1) * z.imag))
