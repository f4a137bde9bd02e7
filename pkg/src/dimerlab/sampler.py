"""Uniform random matchings.

The exact sampler walks the whites in a fixed order and draws each partner
from its conditional law, which is again a determinant of inverse-Kasteleyn
entries; conditioning on a placed dimer is a rank-one Schur complement update
of the inverse.  Glauber rotation dynamics gives an independent cross-check.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.linalg import solve_triangular
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .errors import ConditioningError, EmptyWindow, NoMatchingExists, ValidationError
from .lattice import BLACK_FACES, WHITE_FACES, Matching, edge_type, faces_of_black, faces_of_white

DRIFT_LIMIT = 1e-8


def draw_rng(seed, index):
    """Counter-based stream for draw number `index` of a run seeded by `seed`."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def sample_exact(system, seed, index=0, block=64):
    """One uniform matching by sequential conditioning.

    After conditioning on dimers (w_k, b_k), k < i, the inverse equals
    K^{-1} - U V with U the pivot columns.  The rows of V solve a triangular
    system, so each panel of `block` columns is rebuilt with one matrix
    product; inside a panel the updates are rank one.
    """
    rng = draw_rng(seed, index)
    inv0 = system.inverse  # black x white
    region = system.region
    nbrs = region.white_neighbors
    bidx = system.black_index
    pairs = {}
    n = system.size
    cols = np.zeros((n, n))  # pivot columns u_k
    chosen = []
    for start in range(0, n, block):
        stop = min(n, start + block)
        if start:
            tri = np.tril(cols[chosen, :start])
            rows_v = solve_triangular(tri, inv0[chosen, start:stop], lower=True, check_finite=False)
            panel = inv0[:, start:stop] - cols[:, :start] @ rows_v
        else:
            panel = np.array(inv0[:, start:stop])
        for i in range(start, stop):
            c = i - start
            w = system.whites[i]
            cands = nbrs[w]
            probs = panel[[bidx[b] for b in cands], c]  # K(w, b) = 1 on every edge
            total = probs.sum()
            if abs(total - 1.0) >= DRIFT_LIMIT or np.any(probs < -DRIFT_LIMIT):
                raise ConditioningError(
                    f"conditional probabilities at white {w} sum to {total!r}",
                    {"white": w, "step": i, "candidates": cands, "probabilities": probs.tolist()},
                )
            probs = np.clip(probs, 0.0, 1.0)
            probs /= probs.sum()
            k = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
            k = min(k, len(cands) - 1)
            b = cands[k]
            pairs[w] = b
            j = bidx[b]
            u = panel[:, c].copy()
            cols[:, i] = u
            chosen.append(j)
            if c + 1 < stop - start:
                panel[:, c + 1:] -= np.outer(u, panel[j, c + 1:] / u[j])
                panel[j, c + 1:] = 0.0
    return Matching(pairs, region)


def default_threads():
    try:
        return max(1, int(os.environ.get("DIMERLAB_THREADS", "1")))
    except ValueError:
        return 1


def sample_many(system, count, seed, threads=None):
    """`count` independent exact draws; output does not depend on `threads`."""
    threads = threads or default_threads()
    system.inverse  # factor once before fanning out
    if threads == 1:
        return [sample_exact(system, seed, i) for i in range(count)]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda i: sample_exact(system, seed, i), range(count)))


def initial_matching(region):
    """Some perfect matching, via Hopcroft-Karp on the bipartite adjacency."""
    ws = region.white_list
    bs = region.black_list
    if len(ws) != len(bs):
        raise NoMatchingExists("unequal colour counts")
    wi = {w: i for i, w in enumerate(ws)}
    bi = {b: j for j, b in enumerate(bs)}
    rows = [wi[w] for w, b, _ in region.edges]
    cols = [bi[b] for w, b, _ in region.edges]
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(ws), len(bs)))
    match = maximum_bipartite_matching(graph, perm_type="column")
    if np.any(match < 0):
        raise NoMatchingExists("region admits no perfect matching")
    return Matching({ws[i]: bs[j] for i, j in enumerate(match)}, region)


def _hex_cycles(region):
    """For each interior face, the two perfect matchings of its hexagon."""
    out = []
    for f in sorted(region.interior_faces):
        ws = [(f[0] - d[0], f[1] - d[1]) for d in WHITE_FACES]
        bs = [(f[0] - d[0], f[1] - d[1]) for d in BLACK_FACES]
        # each white is adjacent to exactly two hexagon blacks
        adj = {w: [b for b in bs if b in region.black_neighbors and w in region.black_neighbors[b]]
               for w in ws}
        # walk the 6-cycle
        cyc = [ws[0]]
        b = adj[ws[0]][0]
        while True:
            cyc.append(b)
            w_next = next(w for w in ws if b in adj[w] and w != cyc[-2])
            if w_next == ws[0]:
                break
            cyc.append(w_next)
            b = next(x for x in adj[w_next] if x != b)
        m1 = tuple((cyc[i], cyc[(i + 1) % 6]) for i in range(0, 6, 2))
        m2 = tuple((cyc[(i + 2) % 6], cyc[i + 1]) for i in range(0, 6, 2))
        out.append((f, m1, m2))
    return out


def sample_glauber(region, seed, sweeps, start=None, record_every=None, records=None):
    """Rotation dynamics: propose a uniformly random interior hexagon, rotate it
    with probability 1/2 when its three dimers alternate around it.

    One sweep is as many proposals as there are interior faces.  When
    `record_every` is given, a copy of the matching is appended to `records`
    after every that many sweeps.
    """
    if sweeps < 1:
        raise ValidationError("sweeps must be at least 1")
    matching = start if start is not None else initial_matching(region)
    pairs = dict(matching.pairs)
    hexes = _hex_cycles(region)
    rng = draw_rng(seed, 2**32)
    if not hexes:
        return Matching(pairs, region)
    nh = len(hexes)
    for s in range(sweeps):
        picks = rng.integers(0, nh, size=nh)
        coins = rng.random(nh) < 0.5
        for h, c in zip(picks, coins):
            if not c:
                continue
            _, m1, m2 = hexes[h]
            if all(pairs[w] == b for w, b in m1):
                for w, b in m2:
                    pairs[w] = b
            elif all(pairs[w] == b for w, b in m2):
                for w, b in m1:
                    pairs[w] = b
        if record_every and (s + 1) % record_every == 0 and records is not None:
            records.append(Matching(dict(pairs), region))
    return Matching(pairs, region)


def lozenge_faces(w, b):
    return set(faces_of_white(w)) | set(faces_of_black(b))


def empirical_lozenge_densities(samples, window):
    """Fractions of type 1/2/3 dimers among dimers whose lozenge lies in `window`."""
    window = {tuple(f) for f in window}
    counts = np.zeros(3)
    for s in samples:
        for w, b in s.pairs.items():
            if lozenge_faces(w, b) <= window:
                counts[edge_type(w, b) - 1] += 1
    total = counts.sum()
    if total == 0:
        raise EmptyWindow("no dimer lies inside the window")
    return tuple(float(c) for c in counts / total)
