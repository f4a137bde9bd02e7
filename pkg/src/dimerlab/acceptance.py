"""The acceptance suite: ten end-to-end checks, each returning a CheckResult.

Used by `dimerlab verify` and by tests/test_acceptance.py.  Brute-force
oracles used here are deliberately independent of the code they check.
"""

import cmath
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import fluct, gibbs, shape, tgraph
from .errors import NonSimplePath
from .kasteleyn import assemble, count_matchings_exact
from .lattice import (
    STEPS, XHAT, YHAT, black_of, build_flat_disk_region,
    build_hexagon_region, face_position, region_from_triangles,
)
from .sampler import empirical_lozenge_densities, sample_glauber, sample_many

TGRAPH_SLOPE = (0.4, 0.35, 0.25)


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0
    budget: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        info = ", ".join(f"{k}={_short(v)}" for k, v in self.detail.items())
        return f"criterion {self.number:2d} [{status}] {self.name} ({self.seconds:.1f}s / {self.budget:.0f}s): {info}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _timed(number, name, budget, body):
    t0 = time.perf_counter()
    passed, detail = body()
    sec = time.perf_counter() - t0
    if sec > budget:
        detail["over_budget"] = True
        passed = False
    return CheckResult(number, name, bool(passed), detail, sec, budget)


# ---------------------------------------------------------------- brute-force oracles

def enumerate_matchings(region):
    """All perfect matchings as dicts white -> black, by depth-first search."""
    whites = sorted(region.whites)
    nbrs = {w: sorted(region.white_neighbors[w]) for w in whites}
    out = []
    used = set()
    pairs = {}

    def rec(i):
        if i == len(whites):
            out.append(dict(pairs))
            return
        w = whites[i]
        for b in nbrs[w]:
            if b not in used:
                used.add(b)
                pairs[w] = b
                rec(i + 1)
                used.discard(b)
                del pairs[w]

    if len(region.whites) == len(region.blacks):
        rec(0)
    return out


def random_triangle_region(rng, max_triangles):
    """A random simply connected union of at most `max_triangles` unit triangles."""
    while True:
        size = int(rng.integers(2, max_triangles + 1))
        whites, blacks = {(0, 0)}, set()
        while len(whites) + len(blacks) < size:
            # grow across a random side of a random triangle
            if rng.random() < 0.5 and whites:
                w = sorted(whites)[rng.integers(len(whites))]
                blacks.add(black_of(w, int(rng.integers(1, 4))))
            elif blacks:
                b = sorted(blacks)[rng.integers(len(blacks))]
                k = int(rng.integers(1, 4))
                whites.add({1: b, 2: (b[0] + 1, b[1]), 3: (b[0] + 1, b[1] + 1)}[k])
        try:
            return region_from_triangles(whites, blacks)
        except NonSimplePath:
            continue


# ---------------------------------------------------------------- criteria

def criterion_1():
    def body():
        mismatches = []
        n_regions = 0
        for a in range(1, 4):
            for b in range(1, 4):
                for c in range(1, 4):
                    r = build_hexagon_region(a, b, c)
                    n_regions += 1
                    if count_matchings_exact(assemble(r)) != len(enumerate_matchings(r)):
                        mismatches.append(("hexagon", a, b, c))
        rng = np.random.default_rng(20240601)
        nonzero = 0
        for i in range(25):
            r = random_triangle_region(rng, 12)
            n_regions += 1
            exact = count_matchings_exact(assemble(r, allow_nonsquare=True))
            brute = len(enumerate_matchings(r))
            nonzero += brute > 0
            if exact != brute:
                mismatches.append(("random", i))
        return not mismatches, {"regions": n_regions, "random_with_matchings": nonzero,
                                "mismatches": len(mismatches)}

    return _timed(1, "exact counting vs enumeration", 10, body)


def criterion_2():
    def body():
        rng = np.random.default_rng(7)
        worst_density = 0.0
        worst_identity = 0.0
        disps = [(0, 0), (1, 0), (0, 1), (2, -1), (-1, -2), (3, 2)]
        for _ in range(20):
            p = rng.dirichlet((2.0, 2.0, 2.0))
            s = gibbs.slope_from_p(*p)
            worst_density = max(worst_density, abs(s.a * gibbs.bulk_kernel(s, 0, 0) - s.theta[0] / math.pi))
        for _ in range(2):
            s = gibbs.slope_from_p(*rng.dirichlet((2.0, 2.0, 2.0)))
            for d in disps:
                # sum_b K(w, b) K^{-1}(b, w') with w = w' + d and w' at the origin
                total = sum(s.edge_weight(k) * gibbs.bulk_kernel(s, *black_of(d, k)) for k in (1, 2, 3))
                worst_identity = max(worst_identity, abs(total - (1.0 if d == (0, 0) else 0.0)))
        ok = worst_density < 1e-8 and worst_identity < 1e-8
        return ok, {"density_error": worst_density, "identity_error": worst_identity}

    return _timed(2, "local statistics identity", 5, body)


def criterion_3():
    def body():
        s = gibbs.slope_from_p(*TGRAPH_SLOPE)
        radii, errs = [], []
        for k in range(2, 31):
            m, n = 3 * k, k
            radii.append(abs(m * XHAT + n * YHAT))
            errs.append(abs(gibbs.bulk_kernel(s, m, n) - gibbs.bulk_kernel_asymptotic(s, m, n)))
        fit = float(np.polyfit(np.log(radii), np.log(errs), 1)[0])
        return fit <= -1.8, {"loglog_slope": fit, "r_min": radii[0], "r_max": radii[-1]}

    return _timed(3, "asymptotic kernel decay", 60, body)


def criterion_4(count=20000, seed=11):
    def body():
        region = build_hexagon_region(2, 2, 2)
        system = assemble(region)
        all_m = [tuple(sorted(m.items())) for m in enumerate_matchings(region)]
        index = {k: i for i, k in enumerate(all_m)}
        exact = np.zeros(len(all_m))
        for m in sample_many(system, count, seed):
            exact[index[m.key()]] += 1
        chi = stats.chisquare(exact)
        records = []
        sample_glauber(region, seed, 5 * count, record_every=5, records=records)
        glauber = np.zeros(len(all_m))
        for m in records:
            glauber[index[m.key()]] += 1
        tv = 0.5 * float(np.abs(exact / exact.sum() - glauber / glauber.sum()).sum())
        ok = chi.pvalue > 1e-3 and tv < 0.05
        return ok, {"matchings": len(all_m), "chi2_pvalue": float(chi.pvalue), "tv_exact_glauber": tv}

    return _timed(4, "sampler correctness", 120, body)


def _excluded_interior(tg):
    steps = tg.boundary_steps
    inner = set()
    for i in tg.excluded_steps:
        inner.update(steps[i][:2])
    return inner - set(tg.roots)


def criterion_5(n=10, columns=5):
    def body():
        s = gibbs.slope_from_p(*TGRAPH_SLOPE)
        region = build_hexagon_region(n, n, n)
        tg, _ = tgraph.build_constant_slope_tgraph(s, region)
        d = {}
        d["similarity"] = tgraph.similarity_defect(tg)
        d["collinearity"] = tgraph.collinearity_defect(tg)
        gd = tgraph.dimer_graph(tg)
        report = tgraph.kasteleyn_sign_report(gd)
        expected_faces = len(tg.vertices) - len(tg.roots) - len(_excluded_interior(tg))
        d["bounded_faces"] = len(report)
        d["bounded_faces_expected"] = expected_faces
        d["kasteleyn_sign_failures"] = sum(not tgraph.kasteleyn_sign_holds(p, k) for p, k in report.values())
        analytic = 0.0
        for which in ("x", "y"):
            g = tgraph.derivative(tg, tgraph.coordinate_field(tg, which))
            analytic = max(analytic, tgraph.check_discrete_analytic(gd, g))
        d["analytic_residual"] = analytic
        chain = tgraph.markov_chain(tg)
        whites = sorted(region.whites)
        pick = [whites[i] for i in np.linspace(0, len(whites) - 1, columns).astype(int)]
        cols = tgraph.kinv_columns(gd, chain, pick)
        d["identity_residual"] = max(tgraph.identity_residual(gd, cols[w], w) for w in pick)
        adj = tgraph._Adjacency(tg)
        indep = 0.0
        for w in pick:
            other = tgraph.conjugate_greens(tg, chain, w, tgraph.cut_path(tg, w, -1, adj))
            col = tgraph.kinv_from_greens(gd, other)
            indep = max(indep, max(abs(col[b] - cols[w][b]) for b in col))
        d["cut_independence"] = indep
        ok = (d["similarity"] < 1e-9 and d["collinearity"] < 1e-12
              and d["kasteleyn_sign_failures"] == 0 and len(report) == expected_faces
              and analytic < 1e-12 and d["identity_residual"] < 1e-10 and indep < 1e-10)
        return ok, d

    return _timed(5, f"T-graph structure on hexagon({n},{n},{n})", 120, body)


def criterion_6():
    def body():
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(10):
            p = rng.dirichlet((2.0, 2.0, 2.0))
            s = gibbs.slope_from_p(*p)
            flux = tgraph.boundary_height_profile(s, "yhat", 10**4)
            worst = max(worst, abs(flux - (p[0] - 1 / 3)))
        return worst < 2e-3, {"max_error": worst}

    return _timed(6, "boundary height flux", 10, body)


def criterion_7():
    def body():
        rng = np.random.default_rng(9)
        d = {}
        pts = []
        while len(pts) < 1000:
            x, y = rng.uniform(-0.9, 0.9, 2)
            if shape.norm2(x, y) < 0.74:
                pts.append((x, y))
        xs, ys = np.array(pts).T
        d["quadratic"] = float(shape.quadratic_residual(xs, ys).max())
        probe = [(0.1, 0.2), (-0.3, 0.1), (0.25, -0.35), (0.0, 0.5)]
        hs = [1e-2, 5e-3, 2.5e-3]
        res = [float(shape.burgers_residual_at(shape.phi_bpp, probe, h).max()) for h in hs]
        d["burgers_order"] = float(np.polyfit(np.log(hs), np.log(res), 1)[0])
        spread = 0.0
        for r in (0.2, 0.45, 0.7, 0.85):
            angles = np.linspace(0, 2 * math.pi, 37)
            zs = r * np.exp(1j * angles)
            x, y = shape.from_standard_coordinate(zs)
            mags = np.abs(shape.beltrami_from_phi(shape.phi_bpp(x, y)))
            spread = max(spread, float(mags.max() - mags.min()))
        d["beltrami_spread"] = spread
        zs = rng.uniform(0, 0.99, 1000) * np.exp(2j * math.pi * rng.random(1000))
        x, y = shape.phi_inverse_bpp(zs)
        d["round_trip"] = float(np.abs(shape.phi_disk_map_bpp(x, y) - zs).max())
        d["center"] = abs(shape.phi_bpp(0.0, 0.0) - cmath.exp(1j * math.pi / 3))
        ok = (d["quadratic"] < 1e-12 and d["burgers_order"] >= 1.8 and spread < 1e-10
              and d["round_trip"] < 1e-12 and d["center"] < 1e-12)
        return ok, d

    return _timed(7, "boxed plane partition analytics", 30, body)


def _disk_pair(region, radius, frac=0.35):
    center = face_position(0, 0)
    faces = sorted(region.interior_faces)

    def near(z):
        return min(faces, key=lambda f: (abs(face_position(*f) - center - z), f))

    return near(-frac * radius), near(frac * radius)


def disk_covariance_ratio(radius, factor=fluct.HEIGHT_FACTOR):
    region = build_flat_disk_region(radius)
    system = assemble(region)
    f1, f2 = _disk_pair(region, radius)
    req = fluct.straight_request(region, [f1, f2], [3, 0])
    exact = fluct.exact_height_covariance(system, req)
    pred = fluct.gff_covariance_prediction(fluct.flat_disk_prediction(radius), f1, f2)
    return exact / (factor * pred)


def criterion_8(radii=(8, 16, 32), mc_radius=6, mc_count=5000, seed=3):
    def body():
        d = {}
        ratios = [disk_covariance_ratio(n) for n in radii]
        d["ratios"] = ratios
        gaps = [abs(r - 1) for r in ratios]
        monotone = all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))
        in_band = 0.85 <= ratios[-1] <= 1.15
        region = build_flat_disk_region(mc_radius)
        system = assemble(region)
        f1, f2 = _disk_pair(region, mc_radius)
        exact = fluct.exact_height_covariance(system, fluct.straight_request(region, [f1, f2], [3, 0]))
        samples = sample_many(system, mc_count, seed)
        est, err = fluct.mc_height_covariance(samples, f1, f2, region.start)
        d["mc_exact"] = exact
        d["mc_estimate"] = est
        d["mc_z"] = abs(est - exact) / err
        d["monotone"] = monotone
        return monotone and in_band and d["mc_z"] < 3, d

    return _timed(8, "fluctuation convergence on flat disks", 1200, body)


def criterion_9(n=12, count=2000, seed=21, threads=None):
    def body():
        region = build_hexagon_region(n, n, n)
        system = assemble(region)
        samples = sample_many(system, count, seed, threads)
        center = face_position(n, n)
        window = [f for f in region.faces if abs(face_position(*f) - center) <= 2.5]
        dens = empirical_lozenge_densities(samples, window)
        err = max(abs(x - 1 / 3) for x in dens)
        return err < 0.03, {"densities": list(dens), "max_error": err, "window_faces": len(window)}

    return _timed(9, f"central densities of hexagon({n},{n},{n})", 600, body)


def wick_gap(radius, frac=0.45):
    """Relative gap between the exact 4-point moment and the Wick combination of
    exact covariances at four points on the rays x, y, -x, -y."""
    region = build_flat_disk_region(radius)
    system = assemble(region)
    center = face_position(0, 0)
    faces = sorted(region.interior_faces)
    dirs = [0, 2, 3, 5]
    pts = []
    for d in dirs:
        u = face_position(*STEPS[d]) - center
        z = frac * radius * u / abs(u)
        pts.append(min(faces, key=lambda f: (abs(face_position(*f) - center - z), f)))
    req = fluct.straight_request(region, pts, dirs)
    m4 = fluct.exact_higher_moment(system, req)
    cov = {}
    for i in range(4):
        for j in range(i + 1, 4):
            sub = fluct.MomentRequest((pts[i], pts[j]), (req.paths[i], req.paths[j]))
            cov[i, j] = cov[j, i] = fluct.exact_height_covariance(system, sub)
    wick = fluct.wick_from_covariances(lambda i, j: cov[i, j], 4)
    return abs(m4 - wick) / abs(wick)


def criterion_10(radii=(8, 16)):
    def body():
        gaps = [wick_gap(n) for n in radii]
        return all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:])), {"relative_gaps": gaps}

    return _timed(10, "Wick structure of 4-point moments", 1200, body)


CRITERIA = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
}
QUICK = (1, 2, 3, 6, 7)


def run_suite(numbers=None):
    numbers = numbers or sorted(CRITERIA)
    return [CRITERIA[k]() for k in numbers]
