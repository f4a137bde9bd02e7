"""Kasteleyn matrices of honeycomb regions: exact counts, inverse entries and
edge correlations from minors."""

import threading
import warnings
from collections import OrderedDict
from functools import cached_property

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import NonSquare, SingularMatrix

COND_LIMIT = 1e14


class KasteleynSystem:
    """White x black adjacency matrix of a region, with a lazy LU factorization.

    Every honeycomb face has six edges, so the plain 0/1 adjacency matrix is
    already a Kasteleyn matrix and |det| counts perfect matchings.
    """

    def __init__(self, region, cache_bytes=256 * 2**20, allow_nonsquare=False):
        self.region = region
        self.whites = region.white_list
        self.blacks = region.black_list
        self.white_index = {w: i for i, w in enumerate(self.whites)}
        self.black_index = {b: j for j, b in enumerate(self.blacks)}
        self.square = len(self.whites) == len(self.blacks)
        if not self.square and not allow_nonsquare:
            raise NonSquare(f"{len(self.whites)} whites but {len(self.blacks)} blacks")
        mat = np.zeros((len(self.whites), len(self.blacks)))
        for w, b, _ in region.edges:
            mat[self.white_index[w], self.black_index[b]] = 1.0
        mat.setflags(write=False)
        self.matrix = mat
        self._cache = OrderedDict()
        self._cache_limit = max(1, cache_bytes // max(1, 8 * len(self.blacks)))
        self._lock = threading.Lock()
        self._factor_lock = threading.Lock()
        self._lu = None

    @property
    def size(self):
        return len(self.whites)

    def lu(self):
        if not self.square:
            raise NonSquare("non-square system has no inverse")
        with self._factor_lock:
            if self._lu is None:
                if self.size == 0:
                    raise SingularMatrix("empty region")
                with warnings.catch_warnings():
                    # exact singularity is reported below as SingularMatrix
                    warnings.simplefilter("ignore", sla.LinAlgWarning)
                    lu, piv = sla.lu_factor(self.matrix, check_finite=False)
                if np.any(np.diag(lu) == 0):
                    raise SingularMatrix("Kasteleyn matrix is exactly singular (no matching)")
                anorm = np.linalg.norm(self.matrix, 1)
                rcond, info = lapack.dgecon(lu, anorm, norm="1")
                if info != 0 or rcond * COND_LIMIT < 1:
                    raise SingularMatrix(f"condition estimate {1 / max(rcond, 1e-300):.3g} exceeds {COND_LIMIT:g}")
                self._lu = (lu, piv)
        return self._lu

    def inverse_column(self, w):
        """Column K^{-1}(., w) over blacks (a cached triangular solve)."""
        with self._lock:
            col = self._cache.get(w)
            if col is not None:
                self._cache.move_to_end(w)
                return col
        rhs = np.zeros(self.size)
        rhs[self.white_index[w]] = 1.0
        col = sla.lu_solve(self.lu(), rhs, check_finite=False)
        col.setflags(write=False)
        with self._lock:
            self._cache[w] = col
            while len(self._cache) > self._cache_limit:
                self._cache.popitem(last=False)
        return col

    @cached_property
    def inverse(self):
        """Full black x white inverse."""
        inv = sla.lu_solve(self.lu(), np.eye(self.size), check_finite=False)
        inv.setflags(write=False)
        return inv

    def kasteleyn_entry(self, w, b):
        i = self.white_index.get(w)
        j = self.black_index.get(b)
        if i is None or j is None:
            return 0.0
        return self.matrix[i, j]


def assemble(region, allow_nonsquare=False):
    return KasteleynSystem(region, allow_nonsquare=allow_nonsquare)


def bareiss_determinant(rows):
    """Exact determinant of an integer matrix by fraction-free elimination."""
    a = [list(map(int, r)) for r in rows]
    n = len(a)
    if n == 0:
        return 1
    sign = 1
    prev = 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for i in range(k + 1, n):
                if a[i][k] != 0:
                    a[k], a[i] = a[i], a[k]
                    sign = -sign
                    break
            else:
                return 0
        akk = a[k][k]
        rk = a[k]
        for i in range(k + 1, n):
            ri = a[i]
            aik = ri[k]
            for j in range(k + 1, n):
                ri[j] = (ri[j] * akk - aik * rk[j]) // prev
            ri[k] = 0
        prev = akk
    return sign * a[n - 1][n - 1]


def count_matchings_exact(system):
    """Number of perfect matchings as a Python integer (0 for unbalanced regions)."""
    if not system.square:
        return 0
    return abs(bareiss_determinant(system.matrix.astype(np.int64).tolist()))


def count_matchings(region):
    return count_matchings_exact(assemble(region, allow_nonsquare=True))


def inverse_entry(system, b, w):
    col = system.inverse_column(w)
    return float(col[system.black_index[b]])


def edge_probabilities(system):
    """P(edge) = K(w, b) K^{-1}(b, w) for every edge of the region."""
    inv = system.inverse
    out = {}
    for w, b, _ in system.region.edges:
        i = system.white_index[w]
        j = system.black_index[b]
        out[(w, b)] = float(system.matrix[i, j] * inv[j, i])
    return out


def joint_edge_probability(system, edges):
    """Probability that all the given (white, black) edges are matched."""
    edges = [(tuple(w), tuple(b)) for w, b in edges]
    if len(set(edges)) != len(edges):
        raise ValueError("edges must be distinct")
    ws = [w for w, _ in edges]
    bs = [b for _, b in edges]
    if len(set(ws)) < len(ws) or len(set(bs)) < len(bs):
        return 0.0
    weight = 1.0
    for w, b in edges:
        weight *= system.kasteleyn_entry(w, b)
    if weight == 0.0:
        return 0.0
    cols = [system.inverse_column(w) for w in ws]
    rows = [system.black_index[b] for b in bs]
    minor = np.array([[cols[j][rows[i]] for j in range(len(ws))] for i in range(len(bs))])
    return float(weight * np.linalg.det(minor))
