"""Honeycomb lattice combinatorics.

Whites sit at m*xhat + n*yhat, blacks at e1 + m*xhat + n*yhat, and faces
(hexagon centres) at m*xhat + n*yhat - e1.  All three families are indexed by
integer pairs (m, n); colour is implied by which collection a pair lives in.

Black (m, n) touches white (m, n) along e1 (type 1), white (m+1, n) along e2
(type 2) and white (m+1, n+1) along e3 (type 3).  Seen from the white side,
white (m, n) touches blacks (m, n), (m-1, n), (m-1, n-1).
"""

import csv
import warnings
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import NonSimplePath, NotClosed, ValidationError

OMEGA = np.exp(2j * np.pi / 3)
XHAT = 1.0 + 0j
YHAT = OMEGA
ZHAT = OMEGA.conjugate()
E1 = (XHAT - ZHAT) / 3
E2 = (YHAT - XHAT) / 3
E3 = (ZHAT - YHAT) / 3

WHITE = "white"
BLACK = "black"
EDGE_TYPES = (1, 2, 3)

# black = white + offset, indexed by edge type
BLACK_OFFSET = {1: (0, 0), 2: (-1, 0), 3: (-1, -1)}
# white = black + offset
WHITE_OFFSET = {1: (0, 0), 2: (1, 0), 3: (1, 1)}
# faces of white (m, n) in counterclockwise order: w - e1, w - e2, w - e3
WHITE_FACES = ((0, 0), (1, 0), (1, 1))
# faces of black (m, n) in counterclockwise order: b + e1, b + e2, b + e3
BLACK_FACES = ((2, 1), (1, 1), (1, 0))
# dual edge of the edge of a given type, oriented with the white on its left,
# as face offsets from the white
DUAL_EDGE = {1: ((1, 0), (1, 1)), 2: ((1, 1), (0, 0)), 3: ((0, 0), (1, 0))}

# boundary steps between adjacent faces, counterclockwise at 60 degree spacing
# 0: xhat, 1: -zhat, 2: yhat, 3: -xhat, 4: zhat, 5: -yhat
STEPS = ((1, 0), (1, 1), (0, 1), (-1, 0), (-1, -1), (0, -1))
STEP_NAMES = {"x": 0, "-z": 1, "y": 2, "-x": 3, "z": 4, "-y": 5}


def _add(p, q):
    return (p[0] + q[0], p[1] + q[1])


def _sub(p, q):
    return (p[0] - q[0], p[1] - q[1])


def white_position(m, n):
    return m * XHAT + n * YHAT


def black_position(m, n):
    return E1 + m * XHAT + n * YHAT


def face_position(m, n):
    return m * XHAT + n * YHAT - E1


@dataclass(frozen=True, order=True)
class LatticeCoords:
    m: int
    n: int
    color: str = WHITE

    @property
    def position(self):
        if self.color == WHITE:
            return white_position(self.m, self.n)
        return black_position(self.m, self.n)

    @property
    def key(self):
        return (self.m, self.n)


def black_of(white, edge_type):
    return _add(white, BLACK_OFFSET[edge_type])


def white_of(black, edge_type):
    return _add(black, WHITE_OFFSET[edge_type])


def edge_type(white, black):
    d = _sub(black, white)
    for k, off in BLACK_OFFSET.items():
        if off == d:
            return k
    raise ValidationError(f"white {white} and black {black} are not adjacent")


def faces_of_white(w):
    return tuple(_add(w, d) for d in WHITE_FACES)


def faces_of_black(b):
    return tuple(_add(b, d) for d in BLACK_FACES)


def dual_edge(white, etype):
    """The two faces separated by an edge, ordered so the white is on the left."""
    f, g = DUAL_EDGE[etype]
    return _add(white, f), _add(white, g)


def crossing(f, g):
    """Edge crossed when stepping between adjacent faces f -> g.

    Returns (white, black, sign) where sign is +1 when the white lies on the
    left of the step.
    """
    ws_f = {_sub(f, d) for d in WHITE_FACES}
    ws_g = {_sub(g, d) for d in WHITE_FACES}
    common = ws_f & ws_g
    if len(common) != 1:
        raise ValidationError(f"faces {f} and {g} are not adjacent")
    w = common.pop()
    rf, rg = _sub(f, w), _sub(g, w)
    for k, (a, b) in DUAL_EDGE.items():
        if (a, b) == (rf, rg):
            return w, black_of(w, k), 1
        if (b, a) == (rf, rg):
            return w, black_of(w, k), -1
    raise AssertionError("unreachable")


def parse_steps(steps):
    out = []
    for s in steps:
        if isinstance(s, str):
            if s not in STEP_NAMES:
                raise ValidationError(f"unknown step {s!r}")
            out.append(STEP_NAMES[s])
        else:
            k = int(s)
            if not 0 <= k < 6:
                raise ValidationError(f"step index {k} outside 0..5")
            out.append(k)
    return tuple(out)


def path_vertices(steps, start=(0, 0)):
    pts = [tuple(start)]
    for k in steps:
        pts.append(_add(pts[-1], STEPS[k]))
    return pts


def _points_in_polygon(points, poly):
    """Even-odd test; points never lie on the lattice polygon's edges here."""
    x = points.real[:, None]
    y = points.imag[:, None]
    px = poly.real[None, :]
    py = poly.imag[None, :]
    qx = np.roll(px, -1, axis=1)
    qy = np.roll(py, -1, axis=1)
    cond = (py > y) != (qy > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = px + (y - py) * (qx - px) / (qy - py)
    hits = cond & (x < xint)
    return hits.sum(axis=1) % 2 == 1


@dataclass(frozen=True)
class Region:
    """A finite set of honeycomb vertices, closed under induced edges."""

    whites: frozenset
    blacks: frozenset
    boundary: tuple = ()
    start: tuple = (0, 0)
    scale: float = field(default=1.0, compare=False)

    @cached_property
    def white_list(self):
        return sorted(self.whites)

    @cached_property
    def black_list(self):
        return sorted(self.blacks)

    @cached_property
    def faces(self):
        fs = set()
        for w in self.whites:
            fs.update(faces_of_white(w))
        for b in self.blacks:
            fs.update(faces_of_black(b))
        return frozenset(fs)

    @cached_property
    def edges(self):
        """Induced edges as sorted (white, black, type) triples."""
        out = []
        for w in self.white_list:
            for k in EDGE_TYPES:
                b = black_of(w, k)
                if b in self.blacks:
                    out.append((w, b, k))
        return out

    @cached_property
    def black_neighbors(self):
        nb = {b: [] for b in self.blacks}
        for w, b, k in self.edges:
            nb[b].append(w)
        return nb

    @cached_property
    def white_neighbors(self):
        nb = {w: [] for w in self.whites}
        for w, b, k in self.edges:
            nb[w].append(b)
        return nb

    @property
    def balanced(self):
        return len(self.whites) == len(self.blacks)

    @cached_property
    def interior_faces(self):
        """Faces whose six surrounding triangles all belong to the region."""
        out = set()
        for f in self.faces:
            ws = [_sub(f, d) for d in WHITE_FACES]
            bs = [_sub(f, d) for d in BLACK_FACES]
            if all(w in self.whites for w in ws) and all(b in self.blacks for b in bs):
                out.add(f)
        return frozenset(out)

    @cached_property
    def boundary_faces(self):
        return tuple(path_vertices(self.boundary, self.start)[:-1])

    def to_json(self):
        return {
            "kind": "path",
            "start": list(self.start),
            "steps": list(self.boundary),
        }


def _check_path(steps, start):
    pts = path_vertices(steps, start)
    if len(steps) < 3 or pts[-1] != pts[0]:
        raise NotClosed(f"boundary path with {len(steps)} steps does not close")
    if len(set(pts[:-1])) != len(pts) - 1:
        raise NonSimplePath("boundary path revisits a face")
    for i in range(len(steps)):
        turn = (steps[(i + 1) % len(steps)] - steps[i]) % 6
        if turn == 3:
            raise NonSimplePath("boundary path reverses on itself")
    return pts


def _signed_area(pts):
    z = np.array([face_position(*p) for p in pts[:-1]])
    return 0.5 * float(np.sum(z.real * np.roll(z.imag, -1) - np.roll(z.real, -1) * z.imag))


def build_region_from_boundary(steps, start=(0, 0), scale=1.0):
    """Region enclosed by a simple closed path of face-to-face steps."""
    steps = parse_steps(steps)
    start = tuple(int(v) for v in start)
    pts = _check_path(steps, start)
    if _signed_area(pts) < 0:
        warnings.warn("boundary path is clockwise; reversing it", stacklevel=2)
        steps = tuple((k + 3) % 6 for k in reversed(steps))
        pts = path_vertices(steps, start)
    sharp = sum(
        (steps[(i + 1) % len(steps)] - steps[i]) % 6 in (2, 4) for i in range(len(steps))
    )
    if sharp:
        warnings.warn(
            f"boundary path turns by 120 degrees at {sharp} corners (not locally monotone)",
            stacklevel=2,
        )
    ms = [p[0] for p in pts]
    ns = [p[1] for p in pts]
    mm, nn = np.meshgrid(
        np.arange(min(ms) - 2, max(ms) + 3), np.arange(min(ns) - 2, max(ns) + 3), indexing="ij"
    )
    mm = mm.ravel()
    nn = nn.ravel()
    poly = np.array([face_position(*p) for p in pts[:-1]])
    wpos = mm * XHAT + nn * YHAT
    inside_w = _points_in_polygon(wpos, poly)
    inside_b = _points_in_polygon(wpos + E1, poly)
    whites = frozenset(zip(mm[inside_w].tolist(), nn[inside_w].tolist()))
    blacks = frozenset(zip(mm[inside_b].tolist(), nn[inside_b].tolist()))
    return Region(whites, blacks, steps, start, scale)


def hexagon_steps(a, b, c):
    return (0,) * a + (1,) * b + (2,) * c + (3,) * a + (4,) * b + (5,) * c


def build_hexagon_region(side_a, side_b, side_c, scale=1.0):
    """The a x b x c hexagon (boxed plane partition domain)."""
    for s in (side_a, side_b, side_c):
        if int(s) != s or s < 1:
            raise ValidationError("hexagon sides must be positive integers")
    return build_region_from_boundary(hexagon_steps(int(side_a), int(side_b), int(side_c)),
                                      scale=scale)


def _triangle_edges(whites, blacks):
    for w in whites:
        fs = faces_of_white(w)
        for i in range(3):
            yield fs[i], fs[(i + 1) % 3]
    for b in blacks:
        fs = faces_of_black(b)
        for i in range(3):
            yield fs[i], fs[(i + 1) % 3]


def trace_boundary(whites, blacks):
    """Counterclockwise boundary of a union of unit triangles, as (start, steps).

    Raises NonSimplePath for holes, pinch points or disconnected sets.
    """
    directed = set(_triangle_edges(whites, blacks))
    if not directed:
        raise NonSimplePath("empty triangle set")
    bnd = [(f, g) for f, g in directed if (g, f) not in directed]
    out = {}
    for f, g in bnd:
        if f in out:
            raise NonSimplePath(f"pinch point at face {f}")
        out[f] = g
    start = min(out)
    steps = []
    cur = start
    while True:
        nxt = out[cur]
        steps.append(STEPS.index(_sub(nxt, cur)))
        cur = nxt
        if cur == start:
            break
    if len(steps) != len(bnd):
        raise NonSimplePath("triangle set has more than one boundary component")
    return start, tuple(steps)


def region_from_triangles(whites, blacks, scale=1.0):
    whites = frozenset(map(tuple, whites))
    blacks = frozenset(map(tuple, blacks))
    start, steps = trace_boundary(whites, blacks)
    region = Region(whites, blacks, steps, start, scale)
    # reject sets whose union is not simply connected: Euler characteristic 1
    faces = region.faces
    edges = {frozenset(e) for e in _triangle_edges(whites, blacks)}
    if len(faces) - len(edges) + len(whites) + len(blacks) != 1:
        raise NonSimplePath("triangle set is not simply connected")
    return region


# coarse lattice of faces where a flat boundary returns to height 0
_COARSE_U1 = (2, 1)
_COARSE_U2 = (1, 2)
# fine steps realising each coarse edge vector (forward step, then backward step)
_COARSE_STEPS = {
    (1, -1): (0, 5),
    (2, 1): (0, 1),
    (1, 2): (2, 1),
    (-1, 1): (2, 3),
    (-2, -1): (4, 3),
    (-1, -2): (4, 5),
}


def flat_disk_steps(radius):
    """Zigzag boundary approximating a disk, with boundary height in {0, -1}.

    The disk is a union of coarse triangles (side sqrt(3)) whose centroids lie
    within `radius`; each coarse boundary edge becomes one forward and one
    backward step so the boundary height of the flat slope stays bounded.
    """
    r2 = float(radius) ** 2
    k = int(radius) + 3
    u1 = face_position(*_COARSE_U1) - face_position(0, 0)
    u2 = face_position(*_COARSE_U2) - face_position(0, 0)
    tris = set()
    for i in range(-k, k + 1):
        for j in range(-k, k + 1):
            v = i * u1 + j * u2
            if abs(v + (u1 + u2) / 3) ** 2 <= r2:
                tris.add(((i, j), (i + 1, j), (i, j + 1)))
            if abs(v + 2 * (u1 + u2) / 3) ** 2 <= r2:
                tris.add(((i + 1, j), (i + 1, j + 1), (i, j + 1)))
    # strip ears (triangles with two boundary edges) so the fine path stays simple
    while True:
        count = {}
        for t in tris:
            for e in range(3):
                key = frozenset((t[e], t[(e + 1) % 3]))
                count[key] = count.get(key, 0) + 1
        ears = [t for t in tris
                if sum(count[frozenset((t[e], t[(e + 1) % 3]))] == 1 for e in range(3)) >= 2]
        if not ears:
            break
        tris.difference_update(ears)
    directed = {(t[e], t[(e + 1) % 3]) for t in tris for e in range(3)}
    nxt = {}
    for f, g in directed:
        if (g, f) not in directed:
            if f in nxt:
                raise NonSimplePath("coarse disk has a pinch point")
            nxt[f] = g
    start = min(nxt)
    cur = start
    steps = []
    while True:
        g = nxt[cur]
        d = (g[0] - cur[0], g[1] - cur[1])
        d = (d[0] * _COARSE_U1[0] + d[1] * _COARSE_U2[0], d[0] * _COARSE_U1[1] + d[1] * _COARSE_U2[1])
        steps.extend(_COARSE_STEPS[d])
        cur = g
        if cur == start:
            break
    s = (start[0] * _COARSE_U1[0] + start[1] * _COARSE_U2[0],
         start[0] * _COARSE_U1[1] + start[1] * _COARSE_U2[1])
    return s, tuple(steps)


def build_flat_disk_region(radius, scale=1.0):
    start, steps = flat_disk_steps(radius)
    return build_region_from_boundary(steps, start, scale)


def dual_graph(region):
    """Triangles of the dual graph: one per white, plus blacks with all three neighbours.

    Returns a dict with keys "white_triangles", "black_triangles" (vertex
    triples in counterclockwise order) and "vertices" (the faces used).
    """
    wt = {w: faces_of_white(w) for w in region.white_list}
    bt = {}
    for b in region.black_list:
        if all(white_of(b, k) in region.whites for k in EDGE_TYPES):
            bt[b] = faces_of_black(b)
    verts = set()
    for t in wt.values():
        verts.update(t)
    return {"white_triangles": wt, "black_triangles": bt, "vertices": frozenset(verts)}


@dataclass(frozen=True)
class Matching:
    pairs: dict
    region: Region = field(repr=False, compare=False)

    def __post_init__(self):
        reg = self.region
        if set(self.pairs) != set(reg.whites):
            raise ValidationError("matching does not cover every white")
        if len(set(self.pairs.values())) != len(self.pairs) or set(self.pairs.values()) != set(reg.blacks):
            raise ValidationError("matching is not a bijection onto the blacks")
        for w, b in self.pairs.items():
            edge_type(w, b)

    @classmethod
    def from_triples(cls, region, triples):
        pairs = {}
        for m, n, k in triples:
            w = (int(m), int(n))
            pairs[w] = black_of(w, int(k))
        return cls(pairs, region)

    def to_triples(self):
        return [[w[0], w[1], edge_type(w, b)] for w, b in sorted(self.pairs.items())]

    def has_edge(self, w, b):
        return self.pairs.get(w) == b

    def type_counts(self):
        c = {1: 0, 2: 0, 3: 0}
        for w, b in self.pairs.items():
            c[edge_type(w, b)] += 1
        return c

    def key(self):
        return tuple(sorted(self.pairs.items()))


@dataclass(frozen=True)
class HeightField:
    values: dict
    base: tuple

    def __getitem__(self, f):
        return self.values[f]

    def shifted(self, base):
        off = self.values[base]
        return HeightField({f: h - off for f, h in self.values.items()}, base)

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["face_m", "face_n", "h"])
            for (m, n), h in sorted(self.values.items()):
                out.writerow([m, n, h])


def _dual_edges(region):
    """All dual edges touching the region: (from_face, to_face, white, black)."""
    seen = set()
    for w in region.whites:
        for k in EDGE_TYPES:
            seen.add((w, black_of(w, k), k))
    for b in region.blacks:
        for k in EDGE_TYPES:
            seen.add((white_of(b, k), b, k))
    out = []
    for w, b, k in sorted(seen):
        f, g = dual_edge(w, k)
        out.append((f, g, w, b))
    return out


def height_field(matching, base_face=None):
    """Integer heights on every face of the region.

    Crossing an edge with its white on the left raises the height by 2 when
    the edge is matched and lowers it by 1 otherwise.
    """
    region = matching.region
    adj = {}
    for f, g, w, b in _dual_edges(region):
        dh = 2 if matching.pairs.get(w) == b else -1
        adj.setdefault(f, []).append((g, dh))
        adj.setdefault(g, []).append((f, -dh))
    if base_face is None:
        base_face = region.start if region.boundary else min(region.faces)
    base_face = tuple(base_face)
    if base_face not in adj:
        raise ValidationError(f"base face {base_face} is not a face of the region")
    h = {base_face: 0}
    queue = deque([base_face])
    while queue:
        f = queue.popleft()
        for g, dh in adj[f]:
            if g not in h:
                h[g] = h[f] + dh
                queue.append(g)
            elif h[g] != h[f] + dh:
                raise ValidationError("height increments are not closed")
    return HeightField({f: v for f, v in h.items() if f in region.faces}, base_face)


class Flow:
    """Antisymmetric function on directed edges, stored on white -> black."""

    def __init__(self, values):
        self.values = dict(values)

    def value(self, u, v, u_is_white=True):
        if u_is_white:
            return self.values.get((u, v), 0.0)
        return -self.values.get((v, u), 0.0)

    def __sub__(self, other):
        keys = set(self.values) | set(other.values)
        return Flow({k: self.values.get(k, 0.0) - other.values.get(k, 0.0) for k in keys})

    def divergence(self):
        """Net outflow: keyed by ("white", w) and ("black", b)."""
        div = {}
        for (w, b), v in self.values.items():
            div[(WHITE, w)] = div.get((WHITE, w), 0.0) + v
            div[(BLACK, b)] = div.get((BLACK, b), 0.0) - v
        return div

    def flux(self, faces):
        """Flow crossing a dual path from left to right (white on the left)."""
        total = 0.0
        for f, g in zip(faces[:-1], faces[1:]):
            w, b, sign = crossing(tuple(f), tuple(g))
            total += sign * self.values.get((w, b), 0.0)
        return total


def matching_flow(matching):
    return Flow({(w, b): 1.0 for w, b in matching.pairs.items()})


def constant_flow(region, value=1.0 / 3.0):
    """The flow with a constant value on every white -> black edge touching the region."""
    return Flow({(w, b): value for f, g, w, b in _dual_edges(region)})


def region_from_json(obj):
    if not isinstance(obj, dict):
        raise ValidationError("a region must be a JSON object")
    kind = obj.get("kind")
    try:
        if kind == "hexagon":
            return build_hexagon_region(obj["a"], obj["b"], obj["c"], obj.get("scale", 1.0))
        if kind == "path":
            return build_region_from_boundary(obj["steps"], obj.get("start", (0, 0)),
                                              obj.get("scale", 1.0))
        if kind == "disk":
            return build_flat_disk_region(obj["radius"], obj.get("scale", 1.0))
    except KeyError as exc:
        raise ValidationError(f"{kind} region lacks field {exc.args[0]!r}") from exc
    raise ValidationError(f"unknown region kind {kind!r}")
