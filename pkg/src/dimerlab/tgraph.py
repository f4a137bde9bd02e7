"""Constant-slope T-graphs.

Integrating the gauge form Omega(w b) = 2 Re(lam F(w)) conj(lam) F(b) over the
dual triangulation gives a map Psi of faces to the plane under which white
triangles become triangles similar to the (a, b, c) triangle and black
triangles collapse to segments.  The segments are the complete edges of a
T-graph; its random walk, conjugate Green's functions and the associated
dimer graph G_D are built here.
"""

import cmath
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import gmres, splu

from .errors import DegenerateLambda, MalformedBoundary, NonEmbedding, SingularSystem
from .gibbs import gauge_F_black, gauge_F_white
from .lattice import (
    BLACK_FACES, EDGE_TYPES, WHITE_FACES, Flow, black_of, crossing, dual_edge,
    face_position, faces_of_black, faces_of_white,
)
from .sampler import default_threads

DEFAULT_LAMBDA = cmath.exp(2j * math.pi * 0.381966)
LAMBDA_TOL = 1e-9
REL_TOL = 1e-9
SNAP = 1e-12
CUT_OFFSET = 1e-3
ITERATIVE_TARGET = 1e-12
WINDOW_SHIFT = 1e-9  # absorbs round-off of orbit points landing on window ends


def _sub(p, q):
    return (p[0] - q[0], p[1] - q[1])


def _cross(u, v):
    return u.real * v.imag - u.imag * v.real


def omega_form(slope, lam, w, b):
    return 2 * (gauge_F_white(slope, *w, lam)).real * gauge_F_black(slope, *b, lam)


def _face_neighbors(f):
    """(neighbour face, white, edge type, +1 if f -> g agrees with the dual edge)."""
    out = []
    for d in WHITE_FACES:
        w = _sub(f, d)
        for k in EDGE_TYPES:
            s, t = dual_edge(w, k)
            if s == f:
                out.append((t, w, k, 1))
            elif t == f:
                out.append((s, w, k, -1))
    return out


def integrate_psi(slope, lam, faces, base):
    """Psi on `faces` (which must be connected), breadth first from base with Psi(base) = 0."""
    faces = set(faces)
    psi = {base: 0j}
    queue = deque([base])
    while queue:
        f = queue.popleft()
        for g, w, k, sgn in _face_neighbors(f):
            if g in faces and g not in psi:
                psi[g] = psi[f] + sgn * omega_form(slope, lam, w, black_of(w, k))
                queue.append(g)
    if len(psi) != len(faces):
        raise NonEmbedding("face set is not connected")
    return psi


def lowest_leftmost(faces):
    return min(faces, key=lambda f: (face_position(*f).imag, face_position(*f).real))


def check_lambda(slope, region, lam):
    for w in region.whites:
        fw = gauge_F_white(slope, *w, lam)
        if abs(fw.real) <= LAMBDA_TOL * abs(fw):
            raise DegenerateLambda(f"Re(lam F(w)) vanishes at white {w}")


def resolve_lambda(slope, region, lam=None, seed=0):
    """The default golden-angle lam, re-drawn from `seed` while it is degenerate."""
    if lam is not None and lam != "auto":
        lam = complex(lam)
        check_lambda(slope, region, lam)
        return lam
    rng = np.random.default_rng(seed)
    cand = DEFAULT_LAMBDA
    for _ in range(64):
        try:
            check_lambda(slope, region, cand)
            return cand
        except DegenerateLambda:
            cand = cmath.exp(2j * math.pi * rng.random())
    raise DegenerateLambda("no admissible lam found")


@dataclass(frozen=True)
class CompleteEdge:
    black: tuple
    start: complex
    end: complex
    vertices: tuple  # faces on the segment, ordered from start to end

    @property
    def vector(self):
        return self.end - self.start

    def param(self, z):
        d = self.vector
        return ((z - self.start) * d.conjugate()).real / abs(d) ** 2


@dataclass(frozen=True, eq=False)
class TGraph:
    slope: object
    lam: complex
    region: object
    psi: dict                # region faces (plus one ring) -> complex
    vertices: tuple          # region faces
    complete_edges: dict     # black -> CompleteEdge
    owner: dict              # non-root face -> black
    roots: tuple             # cyclic order, roots[0] = r_1
    boundary: tuple          # faces of the outer polygon, counterclockwise
    root_positions: tuple    # indices of roots in `boundary`

    def point(self, f):
        return self.psi[f]

    def triangle(self, w):
        return tuple(self.psi[f] for f in faces_of_white(w))

    def side(self, w, k):
        """Image of the side of white w along its type-k black, counterclockwise around w."""
        f, g = dual_edge(w, k)
        return self.psi[f], self.psi[g]

    @cached_property
    def scale(self):
        return max(abs(e.vector) for e in self.complete_edges.values())

    @cached_property
    def boundary_steps(self):
        """(start face, end face, black) for each side of the outer polygon."""
        out = []
        n = len(self.boundary)
        for i in range(n):
            f, g = self.boundary[i], self.boundary[(i + 1) % n]
            _, b, _ = crossing(f, g)
            out.append((f, g, b))
        return out

    @cached_property
    def excluded_steps(self):
        """Indices of boundary steps on the stretch from r_m back to r_1."""
        n = len(self.boundary)
        i = self.root_positions[-1]
        out = []
        while i != self.root_positions[0]:
            out.append(i)
            i = (i + 1) % n
        return out

    def turning(self):
        """Turning angle of the outer polygon at each boundary face."""
        pts = [self.psi[f] for f in self.boundary]
        n = len(pts)
        return {self.boundary[i]: cmath.phase((pts[(i + 1) % n] - pts[i]) / (pts[i] - pts[i - 1]))
                for i in range(n)}


def _extended_faces(region):
    ext = set(region.faces)
    for f in region.faces:
        for d in BLACK_FACES:
            ext.update(faces_of_black(_sub(f, d)))
    return ext


def default_exit_step(region):
    """Middle of the first straight run of the boundary path."""
    steps = region.boundary
    run = 1
    while run < len(steps) and steps[run] == steps[0]:
        run += 1
    return run // 2


def build_constant_slope_tgraph(slope, region, lam=None, exit_step=None):
    """Returns (TGraph, Psi).  Psi covers the region faces and one extra ring.

    The outer stretch without a white vertex (from r_m to r_1) is the one
    containing boundary step `exit_step`; by default the middle of the first
    straight run of the boundary, away from macroscopic corners.
    """
    slope.require_interior()
    lam = resolve_lambda(slope, region, lam)
    faces = sorted(region.faces)
    base = lowest_leftmost(faces)
    psi = integrate_psi(slope, lam, _extended_faces(region), base)

    # complete edges: every black next to a region white, spanned by its present sides
    present = {}
    for w in region.whites:
        for k in EDGE_TYPES:
            present.setdefault(black_of(w, k), []).extend(dual_edge(w, k))
    edges = {}
    for b, fs in present.items():
        pts = [psi[f] for f in fs]
        d = pts[1] - pts[0]
        ts = [((p - pts[0]) * d.conjugate()).real for p in pts]
        start, end = pts[int(np.argmin(ts))], pts[int(np.argmax(ts))]
        length = abs(end - start)
        if length <= SNAP:
            raise NonEmbedding(f"black {b} collapses to a point")
        seg = CompleteEdge(b, start, end, ())
        on = []
        for f in faces_of_black(b):
            if f not in region.faces:
                continue
            t = seg.param(psi[f])
            off = abs(_cross(seg.vector, psi[f] - start)) / length
            if -REL_TOL <= t <= 1 + REL_TOL and off <= REL_TOL * length:
                on.append((t, f))
        on.sort()
        edges[b] = CompleteEdge(b, start, end, tuple(f for _, f in on))

    owner = {}
    for b, e in edges.items():
        for f in e.vertices:
            t = e.param(psi[f])
            if REL_TOL < t < 1 - REL_TOL:
                if f in owner:
                    raise NonEmbedding(f"face {f} lies inside two complete edges")
                owner[f] = b

    pts = [psi[f] for f in faces]
    order = np.lexsort((np.imag(pts), np.real(pts)))
    for i, j in zip(order[:-1], order[1:]):
        if abs(pts[i] - pts[j]) <= SNAP:
            raise NonEmbedding(f"faces {faces[i]} and {faces[j]} have the same image")

    boundary = tuple(region.boundary_faces)
    on_boundary = set(boundary)
    roots = [f for f in faces if f not in owner]
    stray = [f for f in roots if f not in on_boundary]
    if stray:
        raise MalformedBoundary(f"root vertices off the outer polygon: {stray[:3]}")
    n = len(boundary)
    bpts = [psi[f] for f in boundary]
    for i in range(n):
        turn = _cross(bpts[i] - bpts[i - 1], bpts[(i + 1) % n] - bpts[i])
        scale = abs(bpts[i] - bpts[i - 1]) * abs(bpts[(i + 1) % n] - bpts[i])
        convex = turn > SNAP * max(scale, 1.0)
        if convex != (boundary[i] not in owner):
            kind = "root" if boundary[i] not in owner else "owned vertex"
            raise MalformedBoundary(f"{kind} {boundary[i]} has turning {turn:.3g}")
    n = len(boundary)
    exit_step = default_exit_step(region) if exit_step is None else exit_step % n
    # r_1 is the first root strictly after the exit step
    pos = sorted(boundary.index(f) for f in roots)
    pos.sort(key=lambda i: (i - exit_step - 1) % n)
    tg = TGraph(slope, lam, region, psi, tuple(faces), edges, owner,
                tuple(boundary[i] for i in pos), boundary, tuple(pos))
    return tg, {f: psi[f] for f in faces}


# ---------------------------------------------------------------- checks

def similarity_defect(tg):
    """Max relative spread of side / (a, bz, cw) over white triangles; 0 for exact similarity."""
    s = tg.slope
    ref = (s.a, s.b * s.z, s.c * s.w)
    worst = 0.0
    for w in tg.region.whites:
        r = []
        for k in EDGE_TYPES:
            p, q = tg.side(w, k)
            r.append((q - p) / ref[k - 1])
        mean = sum(r) / 3
        worst = max(worst, max(abs(x - mean) for x in r) / abs(mean))
    return worst


def triangle_angles(tri):
    """Interior angles at the three corners; negative area flags a reversed triangle."""
    out = []
    for i in range(3):
        p, q, r = tri[i], tri[(i + 1) % 3], tri[(i + 2) % 3]
        out.append(abs(cmath.phase((q - p) / (r - p))))
    area = _cross(tri[1] - tri[0], tri[2] - tri[0]) / 2
    return out, area


def collinearity_defect(tg):
    """Max of |area| / length^2 over images of black triangles with all faces known."""
    worst = 0.0
    for b in tg.complete_edges:
        fs = faces_of_black(b)
        if not all(f in tg.psi for f in fs):
            continue
        p = [tg.psi[f] for f in fs]
        area = abs(_cross(p[1] - p[0], p[2] - p[0])) / 2
        length = max(abs(p[1] - p[0]), abs(p[2] - p[0]), abs(p[2] - p[1]))
        worst = max(worst, area / length ** 2)
    return worst


def _separated(t1, t2, tol):
    for tri in (t1, t2):
        for i in range(3):
            p, q = tri[i], tri[(i + 1) % 3]
            d = q - p
            # outward side of a counterclockwise triangle is to the right
            if all(_cross(d, x - p) <= tol * abs(d) for x in (t2 if tri is t1 else t1)):
                return True
    return False


def overlapping_whites(tg):
    """Pairs of white triangles whose images share interior points."""
    whites = sorted(tg.region.whites)
    tris = [tg.triangle(w) for w in whites]
    arr = np.array([[p.real for p in t] + [p.imag for p in t] for t in tris])
    lo_x, hi_x = arr[:, :3].min(1), arr[:, :3].max(1)
    lo_y, hi_y = arr[:, 3:].min(1), arr[:, 3:].max(1)
    tol = REL_TOL * tg.scale
    bad = []
    for i in range(len(whites)):
        cand = np.nonzero((lo_x[i + 1:] < hi_x[i] - tol) & (hi_x[i + 1:] > lo_x[i] + tol)
                          & (lo_y[i + 1:] < hi_y[i] - tol) & (hi_y[i + 1:] > lo_y[i] + tol))[0]
        for j in cand + i + 1:
            if not _separated(tris[i], tris[j], tol):
                bad.append((whites[i], whites[j]))
    return bad


def check_embedding(tg):
    bad = overlapping_whites(tg)
    if bad:
        raise NonEmbedding(f"{len(bad)} overlapping white triangles, e.g. {bad[0]}")


# ---------------------------------------------------------------- random walk

@dataclass(eq=False)
class TGraphChain:
    tgraph: TGraph
    transitions: dict        # face -> [(face, probability)]; roots map to []
    index: dict = field(default_factory=dict)   # non-root face -> unknown number
    _lu: object = None
    _direct_failed: bool = False

    @property
    def unknowns(self):
        return list(self.index)

    def operator(self):
        """I - P restricted to non-root vertices (sparse)."""
        rows, cols, vals = [], [], []
        for f, i in self.index.items():
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
            for g, p in self.transitions[f]:
                j = self.index.get(g)
                if j is not None:
                    rows.append(i)
                    cols.append(j)
                    vals.append(-p)
        n = len(self.index)
        return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))

    def factor(self):
        """Sparse LU of the operator, or None when the direct factorization fails."""
        if self._lu is None and not self._direct_failed:
            try:
                self._lu = splu(self.operator())
            except RuntimeError:
                self._direct_failed = True
        return self._lu

    def solve(self, rhs):
        lu = self.factor()
        if lu is not None:
            return lu.solve(rhs)
        # iterative fallback, accepted only at the residual target
        op = self.operator()
        sol, _ = gmres(op, rhs, rtol=ITERATIVE_TARGET, atol=0.0, restart=200, maxiter=50)
        residual = float(np.linalg.norm(op @ sol - rhs))
        if not residual <= ITERATIVE_TARGET * max(1.0, float(np.linalg.norm(rhs))):
            raise SingularSystem(f"direct factorization failed and GMRES stalled at residual {residual:.3g}")
        return sol

    def laplacian(self, values):
        """f(v) - sum p f(u) at each non-root vertex."""
        return {f: values[f] - sum(p * values[g] for g, p in self.transitions[f])
                for f in self.index}


def markov_chain(tg):
    trans = {}
    index = {}
    for f in tg.vertices:
        b = tg.owner.get(f)
        if b is None:
            trans[f] = []
            continue
        verts = tg.complete_edges[b].vertices
        i = verts.index(f)
        nbrs = [verts[j] for j in (i - 1, i + 1)]
        inv = [1 / abs(tg.psi[g] - tg.psi[f]) for g in nbrs]
        total = sum(inv)
        trans[f] = [(g, x / total) for g, x in zip(nbrs, inv)]
        index[f] = len(index)
    return TGraphChain(tg, trans, index)


# ---------------------------------------------------------------- dimer graph G_D

@dataclass(frozen=True, eq=False)
class DimerGraphGD:
    tgraph: TGraph
    whites: tuple   # lattice whites, then ("outer", j) for j = 1 .. m-1
    blacks: tuple
    entries: dict   # (white key, black) -> complex

    @cached_property
    def white_index(self):
        return {w: i for i, w in enumerate(self.whites)}

    @cached_property
    def black_index(self):
        return {b: j for j, b in enumerate(self.blacks)}

    @cached_property
    def bounded_whites(self):
        return [w for w in self.whites if w[0] != "outer"]

    def matrix(self):
        mat = np.zeros((len(self.whites), len(self.blacks)), dtype=complex)
        for (w, b), v in self.entries.items():
            mat[self.white_index[w], self.black_index[b]] = v
        return mat

    @cached_property
    def neighbors(self):
        nb = {w: [] for w in self.whites}
        for (w, b) in self.entries:
            nb[w].append(b)
        return nb


def outer_stretches(tg):
    """Lists of boundary step indices from r_j to r_{j+1}, j = 1 .. m-1."""
    n = len(tg.boundary)
    pos = tg.root_positions
    out = []
    for j in range(len(pos) - 1):
        i = pos[j]
        cur = []
        while i != pos[j + 1]:
            cur.append(i)
            i = (i + 1) % n
        out.append(cur)
    return out


def dimer_graph(tg):
    entries = {}
    whites = sorted(tg.region.whites)
    for w in whites:
        for k in EDGE_TYPES:
            p, q = tg.side(w, k)
            entries[(w, black_of(w, k))] = q - p
    steps = tg.boundary_steps
    for j, stretch in enumerate(outer_stretches(tg), start=1):
        key = ("outer", j)
        whites.append(key)
        for i in stretch:
            f, g, b = steps[i]
            if b not in tg.complete_edges:
                raise MalformedBoundary(f"boundary step {f}->{g} is not on a complete edge")
            # counterclockwise around the outer face runs against the polygon
            entries[(key, b)] = entries.get((key, b), 0j) + tg.psi[f] - tg.psi[g]
    blacks = sorted(tg.complete_edges)
    if len(whites) != len(blacks):
        raise MalformedBoundary(f"G_D has {len(whites)} whites and {len(blacks)} blacks")
    return DimerGraphGD(tg, tuple(whites), tuple(blacks), entries)


def _face_cycles(gd):
    """For each non-root vertex, the cyclic list of G_D edges (w, b) meeting there."""
    tg = gd.tgraph
    touching = {}
    for w in gd.bounded_whites:
        for k in EDGE_TYPES:
            for f in dual_edge(w, k):
                touching.setdefault(f, []).append((w, black_of(w, k)))
    steps = tg.boundary_steps
    for j, stretch in enumerate(outer_stretches(tg), start=1):
        for i in stretch:
            f, g, b = steps[i]
            for h in (f, g):
                touching.setdefault(h, []).append((("outer", j), b))
    cycles = {}
    for f in tg.vertices:
        if f in tg.roots:
            continue
        pairs = list(dict.fromkeys(touching.get(f, [])))
        deg = {}
        for w, b in pairs:
            deg[0, w] = deg.get((0, w), 0) + 1
            deg[1, b] = deg.get((1, b), 0) + 1
        if not pairs or any(d != 2 for d in deg.values()):
            continue
        cyc = [pairs[0]]
        used = {pairs[0]}
        cur_b = pairs[0][1]
        while True:
            nxt = next((e for e in pairs if e not in used and e[1] == cur_b), None)
            if nxt is None:
                break
            used.add(nxt)
            cyc.append(nxt)
            w = nxt[0]
            nxt = next((e for e in pairs if e not in used and e[0] == w), None)
            if nxt is None:
                break
            used.add(nxt)
            cyc.append(nxt)
            cur_b = nxt[1]
        if len(used) == len(pairs):
            cycles[f] = cyc
    return cycles


def kasteleyn_sign_report(gd):
    """{vertex: (alternating product, number of edges)} for each bounded G_D face.

    The cycle lists edges as (w1 b1), (w2 b1), (w2 b2), (w3 b2), ...; the
    alternating product is K(w1 b1) / K(w2 b1) * K(w2 b2) / ...
    """
    out = {}
    for f, cyc in _face_cycles(gd).items():
        prod = 1 + 0j
        for i, e in enumerate(cyc):
            v = gd.entries[e]
            prod = prod * v if i % 2 == 0 else prod / v
        out[f] = (prod, len(cyc))
    return out


def kasteleyn_sign_holds(prod, nedges, tol=1e-9):
    if abs(prod.imag) > tol * abs(prod):
        return False
    return prod.real > 0 if nedges % 4 == 2 else prod.real < 0


# ---------------------------------------------------------------- discrete analytic functions

def derivative(tg, values, cut=None):
    """df(b) = (f(v2) - f(v1)) / (v2 - v1) over the endpoints of each complete edge.

    With a cut, values are continued across it: crossing counterclockwise adds
    the crossing count, as the conjugate Green's function requires.
    """
    out = {}
    for b, e in tg.complete_edges.items():
        f1, f2 = e.vertices[0], e.vertices[-1]
        v1, v2 = tg.psi[f1], tg.psi[f2]
        jump = cut.crossings(v1, v2) if cut is not None else 0
        out[b] = (values[f2] + jump - values[f1]) / (v2 - v1)
    return out


def check_discrete_analytic(gd, g):
    """max over bounded whites of |sum_b K(w, b) g(b)|."""
    worst = 0.0
    for w in gd.bounded_whites:
        s = sum(gd.entries[(w, b)] * g[b] for b in gd.neighbors[w])
        worst = max(worst, abs(s))
    return worst


def coordinate_field(tg, which="x"):
    pick = (lambda z: z.real) if which == "x" else (lambda z: z.imag)
    return {f: pick(tg.psi[f]) for f in tg.vertices}


# ---------------------------------------------------------------- cuts and Green's functions

@dataclass(frozen=True)
class Cut:
    """A polyline from inside a white triangle out of the polygon."""

    white: tuple
    points: tuple

    def crossings(self, a, b):
        """Algebraic number of crossings of the segment a -> b, +1 when the
        motion is counterclockwise about the start of the cut."""
        e = b - a
        total = 0
        for p, q in zip(self.points[:-1], self.points[1:]):
            d = q - p
            den = _cross(d, e)
            if den == 0:
                continue
            u = _cross(a - p, e) / den
            t = _cross(a - p, d) / den
            if 0 <= u <= 1 and 0 < t < 1:
                total += 1 if den > 0 else -1
        return total


def _centroid(tri):
    return sum(tri) / 3


class _Adjacency:
    """Which white triangles face each other across a complete edge, and where."""

    def __init__(self, tg):
        self.tg = tg
        items = {}
        for w in tg.region.whites:
            c = _centroid(tg.triangle(w))
            for k in EDGE_TYPES:
                b = black_of(w, k)
                e = tg.complete_edges[b]
                p, q = tg.side(w, k)
                lo, hi = sorted((e.param(p), e.param(q)))
                side = 1 if _cross(e.vector, c - e.start) > 0 else -1
                items.setdefault(b, []).append((lo, hi, side, w))
        self.links = {w: [] for w in tg.region.whites}
        for b, lst in items.items():
            e = tg.complete_edges[b]
            for i, (lo1, hi1, s1, w1) in enumerate(lst):
                for lo2, hi2, s2, w2 in lst[i + 1:]:
                    lo, hi = max(lo1, lo2), min(hi1, hi2)
                    if s1 != s2 and hi - lo > REL_TOL:
                        mid = e.start + (lo + hi) / 2 * e.vector
                        gap = (hi - lo) * abs(e.vector)
                        self.links[w1].append((w2, mid, gap))
                        self.links[w2].append((w1, mid, gap))
        self.exits = {}
        steps = tg.boundary_steps
        for i in tg.excluded_steps:
            f, g, b = steps[i]
            e = tg.complete_edges[b]
            t0, t1 = sorted((e.param(tg.psi[f]), e.param(tg.psi[g])))
            outward = (tg.psi[g] - tg.psi[f]) * -1j
            outward /= abs(outward)
            for lo2, hi2, _, w in items[b]:
                lo, hi = max(t0, lo2), min(t1, hi2)
                if hi - lo > REL_TOL:
                    mid = e.start + (lo + hi) / 2 * e.vector
                    self.exits.setdefault(w, []).append((mid, outward, (hi - lo) * abs(e.vector)))


def cut_path(tg, w, choice=0, adjacency=None):
    """A cut from the centroid of white w through neighbouring triangles to the
    stretch r_m -> r_1 of the outer polygon.

    `choice` selects among exit triangles (ordered by distance), giving
    genuinely different cuts for the independence check.
    """
    adj = adjacency or _Adjacency(tg)
    if not adj.exits:
        raise MalformedBoundary("no triangle borders the stretch from r_m to r_1")
    prev = {w: None}
    queue = deque([w])
    while queue:
        u = queue.popleft()
        for v, _, _ in adj.links[u]:
            if v not in prev:
                prev[v] = u
                queue.append(v)
    targets = sorted((x for x in adj.exits if x in prev),
                     key=lambda x: (abs(_centroid(tg.triangle(x)) - _centroid(tg.triangle(w))), x))
    target = targets[choice % len(targets)]
    chain = [target]
    while prev[chain[-1]] is not None:
        chain.append(prev[chain[-1]])
    chain.reverse()
    pts = [_centroid(tg.triangle(chain[0]))]
    for u, v in zip(chain[:-1], chain[1:]):
        mid, gap = next((m, g) for x, m, g in adj.links[u] if x == v)
        cv = _centroid(tg.triangle(v))
        # step just past the shared side so no joint of the cut sits on an edge
        toward = (cv - mid) / abs(cv - mid)
        pts.append(mid + CUT_OFFSET * min(gap, abs(cv - mid)) * toward)
        pts.append(cv)
    mid, outward, gap = adj.exits[target][0]
    pts.append(mid + CUT_OFFSET * gap * outward)
    return Cut(w, tuple(pts))


@dataclass
class HarmonicField:
    values: dict
    cut: Cut = None

    def __getitem__(self, f):
        return self.values[f]


def _crossing_rhs(chain, cut):
    rhs = np.zeros(len(chain.index))
    psi = chain.tgraph.psi
    for f, i in chain.index.items():
        rhs[i] = sum(p * cut.crossings(psi[f], psi[g]) for g, p in chain.transitions[f])
    return rhs


def conjugate_greens(tg, chain, w, cut=None):
    """Expected algebraic number of crossings of the cut by the walk from each vertex."""
    if w not in tg.region.whites:
        raise MalformedBoundary(f"{w} is not a white triangle of this T-graph")
    cut = cut or cut_path(tg, w)
    sol = chain.solve(_crossing_rhs(chain, cut))
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("harmonic system produced non-finite values")
    values = {f: 0.0 for f in tg.roots}
    for f, i in chain.index.items():
        values[f] = float(sol[i])
    return HarmonicField(values, cut)


def kinv_from_greens(gd, field):
    """Column K_{G_D}^{-1}(., w) as a map black -> complex."""
    return derivative(gd.tgraph, field.values, field.cut)


def kinv_columns(gd, chain, whites, threads=None):
    """Several columns in parallel over one shared factorization."""
    tg = gd.tgraph
    chain.factor()
    adj = _Adjacency(tg)

    def one(w):
        field = conjugate_greens(tg, chain, w, cut_path(tg, w, adjacency=adj))
        return kinv_from_greens(gd, field)

    threads = threads or default_threads()
    if threads == 1:
        return {w: one(w) for w in whites}
    with ThreadPoolExecutor(threads) as pool:
        return dict(zip(whites, pool.map(one, whites)))


def identity_residual(gd, column, w):
    """max_w' |sum_b K(w', b) column(b) - delta(w', w)|."""
    worst = 0.0
    for u in gd.whites:
        s = sum(gd.entries[(u, b)] * column[b] for b in gd.neighbors[u])
        worst = max(worst, abs(s - (1.0 if u == w else 0.0)))
    return worst


def plane_kernel_leading(tg, b, w):
    """Whole-plane leading term Im(F(w) F(b) / (phi(b) - phi(w))) / (2 pi Re(F(w)) F(b))."""
    s, lam = tg.slope, tg.lam
    fw = gauge_F_white(s, *w, lam)
    fb = gauge_F_black(s, *b, lam)

    def phi(p):
        return s.c * s.w * p[0] + s.a * p[1]

    return (fw * fb / (phi(b) - phi(w))).imag / (2 * math.pi * fw.real * fb)


def linear_part(slope, point):
    """phi(m, n) = c w m + a n for real lattice coordinates (m, n) of a plane point."""
    return slope.c * slope.w * point[0] + slope.a * point[1]


def white_center(w):
    return (w[0] + 2 / 3, w[1] + 1 / 3)


def black_center(b):
    return (b[0] + 4 / 3, b[1] + 2 / 3)


class PolygonHalfPlaneMap:
    """Conformal map xi of a polygon onto the upper half-plane with xi(at_infinity) = inf.

    Built from a disk map D(v) = (v - v0) exp(-H(v)), H a polynomial fitted so
    that Re H = log|v - v0| on densely sampled sides, then a Moebius map.
    """

    def __init__(self, vertices, at_infinity, degree=30, per_side=20):
        vertices = np.asarray(vertices, dtype=complex)
        self.center = vertices.mean()
        pts = np.concatenate([a + np.linspace(0, 1, per_side, endpoint=False) * (b - a)
                              for a, b in zip(vertices, np.roll(vertices, -1))])
        self.radius = np.abs(pts - self.center).max()
        self.degree = degree
        basis = self._basis(pts)
        lhs = np.hstack([basis.real, -basis.imag])
        sol, *_ = np.linalg.lstsq(lhs, np.log(np.abs(pts - self.center)), rcond=None)
        self.coef = sol[:degree + 1] + 1j * sol[degree + 1:]
        self.fit_residual = float(np.abs(lhs @ sol - np.log(np.abs(pts - self.center))).max())
        e = self.disk(at_infinity)
        self.rotation = e / abs(e)

    def _basis(self, v):
        x = (np.asarray(v) - self.center) / self.radius
        return np.stack([x ** k for k in range(self.degree + 1)], -1)

    def disk(self, v):
        return (v - self.center) * np.exp(-(self._basis(v) @ self.coef))

    def disk_derivative(self, v):
        x = (v - self.center) / self.radius
        dh = sum(k * self.coef[k] * x ** (k - 1) for k in range(1, self.degree + 1)) / self.radius
        return np.exp(-(self._basis(v) @ self.coef)) * (1 - (v - self.center) * dh)

    def __call__(self, v):
        q = self.disk(v) / self.rotation
        return 1j * (1 + q) / (1 - q)

    def derivative(self, v):
        q = self.disk(v) / self.rotation
        return 2j / (1 - q) ** 2 * self.disk_derivative(v) / self.rotation


def continuum_map(tg, **kw):
    """Half-plane map of phi(region) sending the stretch r_m -> r_1 to infinity."""
    s = tg.slope
    verts = [linear_part(s, f) for f in tg.boundary]
    ex = [tg.boundary[i] for i in tg.excluded_steps] + [tg.roots[0]]
    at_inf = np.mean([linear_part(s, f) for f in ex])
    return PolygonHalfPlaneMap(verts, at_inf, **kw)


def continuum_kinv(tg, xi, b, w):
    """Bounded-domain leading term of K_{G_D}^{-1}(b, w) through the half-plane map xi."""
    s, lam = tg.slope, tg.lam
    fw = gauge_F_white(s, *w, lam)
    fb = gauge_F_black(s, *b, lam)
    pb = linear_part(s, black_center(b))
    pw = linear_part(s, white_center(w))
    xb, xw, dxb = xi(pb), xi(pw), xi.derivative(pb)
    val = dxb * fw * fb / (xb - xw) + dxb * np.conj(fw) * fb / (xb - np.conj(xw))
    return complex(val.imag / (2 * math.pi * fw.real * fb))


# ---------------------------------------------------------------- canonical flow

def plane_owner(tg, f):
    """Black whose whole-plane segment contains Psi(f) in its interior."""
    z = tg.psi[f]
    for d in BLACK_FACES:
        b = _sub(f, d)
        others = [tg.psi[g] for g in faces_of_black(b) if g != f]
        u, v = others
        t = ((z - u) * (v - u).conjugate()).real / abs(v - u) ** 2
        if REL_TOL < t < 1 - REL_TOL:
            return b
    raise NonEmbedding(f"no complete edge passes through face {f}")


def _corner_angle(tg, f, along, inside, through):
    """Angle between the ray f -> along and the line of `through`, on the side away from `inside`."""
    if through is None:
        return 0.0
    z = tg.psi[f]
    d = along - z
    u, v = [tg.psi[g] for g in faces_of_black(through) if g != f][:2]
    ray = v - u
    ccw = _cross(d, inside - z) < 0
    best = 2 * math.pi
    for r in (ray, -ray):
        ang = cmath.phase(r / d) if ccw else cmath.phase(d / r)
        ang %= 2 * math.pi
        if ang > REL_TOL:
            best = min(best, ang)
    return best


def _corner_shares(tg):
    """(white, black, corner face, angle / 2 pi) for both ends of every side."""
    owners = {}
    for w in tg.region.whites:
        c = _centroid(tg.triangle(w))
        for k in EDGE_TYPES:
            b = black_of(w, k)
            f, g = dual_edge(w, k)
            for h, other in ((f, g), (g, f)):
                if h not in owners:
                    owners[h] = plane_owner(tg, h)
                through = None if owners[h] == b else owners[h]
                yield w, b, h, _corner_angle(tg, h, tg.psi[other], c, through) / (2 * math.pi)


def canonical_flow(tg, gd=None):
    """Flow on triangle-to-complete-edge edges: (sum of the two angles) / 2 pi.

    Edges to outer faces carry zero flow.
    """
    values = {}
    for w, b, _, share in _corner_shares(tg):
        values[(w, b)] = values.get((w, b), 0.0) + share
    return Flow(values)


def endpoint_inflow(tg):
    """Canonical inflow into each complete edge split by the vertex it comes from."""
    out = {}
    for _, b, h, share in _corner_shares(tg):
        out[(b, h)] = out.get((b, h), 0.0) + share
    return out


def endpoint_defect(tg):
    """For each vertex v: canonical inflow arriving at v into edges ending there,
    minus 1/2 per such edge.  Zero off the boundary; on the outer polygon it
    equals turning(v) / 2 pi, less 1 at roots."""
    inflow = endpoint_inflow(tg)
    ends = {}
    for b, e in tg.complete_edges.items():
        for f in (e.vertices[0], e.vertices[-1]):
            ends.setdefault(f, []).append(b)
    return {f: sum(inflow.get((b, f), 0.0) for b in ends.get(f, [])) - len(ends.get(f, [])) / 2
            for f in tg.vertices}


# ---------------------------------------------------------------- boundary heights

_DIRECTION_TYPE = {"yhat": 0, "zhat": 1, "xhat": 2}


def boundary_height_profile(slope, direction, length):
    """Average flux of omega_{1/3} - omega per edge along a column of `length` edges.

    The column crossed by steps along `direction` consists of edges of one
    type; its image curve turns left at step j exactly when 2 j theta lies in
    [pi, pi + 2 theta] mod 2 pi, theta being the angle of that type.
    """
    slope.require_interior()
    if direction not in _DIRECTION_TYPE:
        raise ValueError(f"direction must be one of {sorted(_DIRECTION_TYPE)}")
    if length < 1:
        raise ValueError("length must be positive")
    theta = slope.theta[_DIRECTION_TYPE[direction]]
    j = np.arange(1, int(length) + 1)
    # the window wraps past 2 pi once theta > pi / 2; it is taken half open,
    # [pi, pi + 2 theta), so that at rational theta = pi p / q exactly p of
    # every q orbit points fall inside, as continuity in theta requires
    offset = np.mod(2 * j * theta - math.pi + WINDOW_SHIFT, 2 * math.pi)
    convex = offset < 2 * theta
    return float(convex.mean()) - 1.0 / 3.0


def column_convex_corners(slope, length):
    """Convex corners of the column curve counted from its edge vectors.

    Meant for generic slopes: at rational angles some image edges degenerate.
    Along a column of type-a edges the image edges are positive multiples of
    1 + (z/w)^(2j); a corner is convex when consecutive edges turn clockwise.
    """
    q = slope.z / slope.w
    j = np.arange(1, int(length) + 1)
    ratio = (1 + q ** (2 * j + 2)) / (1 + q ** (2 * j))
    return int(np.count_nonzero(ratio.imag < 0))
