import cmath
import math

import numpy as np
import pytest

import oracles
from dimerlab import tgraph as T
from dimerlab.errors import DegenerateLambda
from dimerlab.gibbs import gauge_F_black, gauge_F_white, slope_from_p
from dimerlab.lattice import EDGE_TYPES, black_of, build_flat_disk_region, build_hexagon_region, white_of

SLOPE = (0.4, 0.35, 0.25)


@pytest.fixture(scope="module")
def hex3():
    s = slope_from_p(*SLOPE)
    tg, psi = T.build_constant_slope_tgraph(s, build_hexagon_region(3, 3, 3))
    return tg, T.dimer_graph(tg), T.markov_chain(tg)


@pytest.fixture(scope="module")
def hex4():
    s = slope_from_p(*SLOPE)
    tg, psi = T.build_constant_slope_tgraph(s, build_hexagon_region(4, 4, 4))
    return tg, T.dimer_graph(tg), T.markov_chain(tg)


def test_flat_slope_equilateral_triangles():
    s = slope_from_p(1 / 3, 1 / 3, 1 / 3)
    tg, _ = T.build_constant_slope_tgraph(s, build_hexagon_region(3, 3, 3), lam=cmath.exp(0.7j))
    for w in tg.region.whites:
        angles, area = T.triangle_angles(tg.triangle(w))
        assert angles == pytest.approx([math.pi / 3] * 3, abs=1e-9)
        assert area > 0


@pytest.mark.parametrize("p", [SLOPE, (0.2, 0.5, 0.3), (0.6, 0.15, 0.25)])
def test_similarity_and_collinearity(p):
    s = slope_from_p(*p)
    tg, _ = T.build_constant_slope_tgraph(s, build_hexagon_region(4, 3, 5))
    assert T.similarity_defect(tg) < 1e-9
    assert T.collinearity_defect(tg) < 1e-12
    assert not T.overlapping_whites(tg)


def test_psi_minus_linear_part_bounded():
    s = slope_from_p(*SLOPE)
    sups = []
    for n in (4, 8, 16):
        tg, psi = T.build_constant_slope_tgraph(s, build_hexagon_region(n, n, n))
        diff = np.array([psi[f] - T.linear_part(s, f) for f in psi])
        sups.append(np.abs(diff - diff.mean()).max())
    assert max(sups) < 1.0
    assert sups[-1] < 1.1 * sups[0]


def test_degenerate_lambda():
    s = slope_from_p(*SLOPE)
    region = build_hexagon_region(2, 2, 2)
    w = sorted(region.whites)[1]
    fw = gauge_F_white(s, *w)
    bad = 1j * fw.conjugate() / abs(fw)
    with pytest.raises(DegenerateLambda):
        T.build_constant_slope_tgraph(s, region, lam=bad)


def test_auto_lambda_redraws(monkeypatch):
    s = slope_from_p(*SLOPE)
    region = build_hexagon_region(2, 2, 2)
    w = sorted(region.whites)[1]
    fw = gauge_F_white(s, *w)
    monkeypatch.setattr(T, "DEFAULT_LAMBDA", 1j * fw.conjugate() / abs(fw))
    lam = T.resolve_lambda(s, region, "auto", seed=4)
    T.check_lambda(s, region, lam)
    assert lam == T.resolve_lambda(s, region, None, seed=4)
    assert abs(abs(lam) - 1) < 1e-12


def test_lambda_over_roots_of_unity():
    s = slope_from_p(*SLOPE)
    region = build_hexagon_region(3, 3, 3)
    largest = set()
    built = 0
    for j in range(64):
        lam = cmath.exp(2j * math.pi * j / 64)
        try:
            tg, _ = T.build_constant_slope_tgraph(s, region, lam)
        except DegenerateLambda:
            # Re(lam F(w)) = 0 exactly for some white: excluded by the precondition
            with pytest.raises(DegenerateLambda):
                T.check_lambda(s, region, lam)
            continue
        built += 1
        T.check_embedding(tg)
        report = T.kasteleyn_sign_report(T.dimer_graph(tg))
        assert all(T.kasteleyn_sign_holds(p, k) for p, k in report.values())
        areas = {w: abs(T.triangle_angles(tg.triangle(w))[1]) for w in region.whites}
        largest.add(max(areas, key=areas.get))
    assert built >= 48
    assert len(largest) > 1


def test_chain_probabilities(hex3):
    tg, gd, chain = hex3
    for f, trans in chain.transitions.items():
        if f in tg.roots:
            assert trans == []
            continue
        probs = [p for _, p in trans]
        assert all(p > 0 for p in probs) and sum(probs) == pytest.approx(1, abs=1e-15)
        dists = [abs(tg.psi[g] - tg.psi[f]) for g, _ in trans]
        # probability times distance is the same for both neighbours
        assert probs[0] * dists[0] == pytest.approx(probs[1] * dists[1], rel=1e-12)
        if dists[0] == pytest.approx(dists[1], rel=1e-14):
            assert probs == pytest.approx([0.5, 0.5])


def test_coordinates_harmonic(hex4):
    tg, gd, chain = hex4
    for which in ("x", "y"):
        lap = chain.laplacian(T.coordinate_field(tg, which))
        assert max(abs(v) for v in lap.values()) < 1e-12


def test_dimer_graph_shape(hex4):
    tg, gd, chain = hex4
    assert len(gd.whites) == len(tg.region.whites) + len(tg.roots) - 1
    assert len(gd.whites) == len(gd.blacks)
    for w in tg.region.whites:
        for k in EDGE_TYPES:
            p, q = tg.side(w, k)
            assert abs(gd.entries[(w, black_of(w, k))]) == pytest.approx(abs(q - p), rel=1e-14)
    outer = [v for (w, _), v in gd.entries.items() if w[0] == "outer"]
    assert outer and all(abs(v) > 0 for v in outer)


def test_gauge_identity(hex4):
    tg, gd, chain = hex4
    s, lam = tg.slope, tg.lam
    for w in tg.region.whites:
        for k in EDGE_TYPES:
            b = black_of(w, k)
            expect = 2 * gauge_F_white(s, *w, lam).real * gauge_F_black(s, *b, lam)
            assert abs(gd.entries[(w, b)] - expect) < 1e-12 * max(1.0, abs(expect))


def test_gauge_functions_in_kernel():
    # sum_b K(w, b) F(b) = 0 and sum_w F(w) K(w, b) = 0 on the whole lattice
    s = slope_from_p(*SLOPE)
    lam = cmath.exp(0.3j)
    for m in range(-3, 4):
        for n in range(-3, 4):
            fb = sum(gauge_F_black(s, *black_of((m, n), k), lam) for k in EDGE_TYPES)
            fw = sum(gauge_F_white(s, *white_of((m, n), k), lam) for k in EDGE_TYPES)
            assert abs(fb) < 1e-12 * abs(gauge_F_black(s, m, n, lam))
            assert abs(fw) < 1e-12 * abs(gauge_F_white(s, m, n, lam))


@pytest.mark.parametrize("region", [build_hexagon_region(2, 2, 2), build_hexagon_region(5, 3, 4),
                                    build_flat_disk_region(5)])
def test_kasteleyn_sign_condition(region):
    s = slope_from_p(*SLOPE)
    tg, _ = T.build_constant_slope_tgraph(s, region)
    report = T.kasteleyn_sign_report(T.dimer_graph(tg))
    assert report
    assert all(T.kasteleyn_sign_holds(p, k) for p, k in report.values())


def test_kasteleyn_sign_rejects_wrong_signs():
    assert T.kasteleyn_sign_holds(complex(2.0, 0), 6)
    assert not T.kasteleyn_sign_holds(complex(-2.0, 0), 6)
    assert T.kasteleyn_sign_holds(complex(-1.0, 0), 8)
    assert not T.kasteleyn_sign_holds(complex(1.0, 0.1), 6)


def test_discrete_analytic(hex4):
    tg, gd, chain = hex4
    for which in ("x", "y"):
        g = T.derivative(tg, T.coordinate_field(tg, which))
        assert T.check_discrete_analytic(gd, g) < 1e-12
    ident = T.derivative(tg, {f: tg.psi[f] for f in tg.vertices})
    assert max(abs(v - 1) for v in ident.values()) < 1e-12
    assert T.check_discrete_analytic(gd, ident) < 1e-12
    rng = np.random.default_rng(0)
    noise = {b: complex(*rng.normal(size=2)) for b in gd.blacks}
    assert T.check_discrete_analytic(gd, noise) > 1e-2


def test_greens_zero_on_roots_and_identity(hex3):
    tg, gd, chain = hex3
    for w in sorted(tg.region.whites):
        field = T.conjugate_greens(tg, chain, w)
        assert all(field[r] == 0.0 for r in tg.roots)
        col = T.kinv_from_greens(gd, field)
        assert T.identity_residual(gd, col, w) < 1e-10


def test_kinv_columns_parallel_matches_serial(hex3):
    tg, gd, chain = hex3
    whites = sorted(tg.region.whites)[:6]
    one = T.kinv_columns(gd, chain, whites, threads=1)
    many = T.kinv_columns(gd, chain, whites, threads=3)
    assert one == many


def test_cut_independence(hex4):
    tg, gd, chain = hex4
    for w in sorted(tg.region.whites)[::7]:
        a = T.kinv_from_greens(gd, T.conjugate_greens(tg, chain, w, T.cut_path(tg, w, 0)))
        b = T.kinv_from_greens(gd, T.conjugate_greens(tg, chain, w, T.cut_path(tg, w, -1)))
        assert max(abs(a[k] - b[k]) for k in a) < 1e-10


def test_greens_against_random_walks(hex4):
    tg, gd, chain = hex4
    w = sorted(tg.region.whites)[len(tg.region.whites) // 2]
    field = T.conjugate_greens(tg, chain, w)
    starts = sorted(chain.index)[:: max(1, len(chain.index) // 10)][:10]
    walks = oracles.walk_crossings(chain, field.cut, starts, 100_000, seed=1)
    for v in starts:
        mean, err = walks[v]
        assert abs(mean - field[v]) < 3 * err + 1e-12


def test_greens_linear_along_edges(hex4):
    tg, gd, chain = hex4
    w = sorted(tg.region.whites)[5]
    field = T.conjugate_greens(tg, chain, w)
    for b, e in tg.complete_edges.items():
        vs = e.vertices
        quotients = []
        for f, g in zip(vs[:-1], vs[1:]):
            jump = field.cut.crossings(tg.psi[f], tg.psi[g])
            quotients.append((field[g] + jump - field[f]) / abs(tg.psi[g] - tg.psi[f]))
        assert max(quotients) - min(quotients) < 1e-9


def continuum_errors(n):
    """Relative L2 gap between K^{-1}_{G_D} columns and the bounded-domain
    leading term at mid-range separations, for three whites at fixed
    macroscopic positions of hexagon(n, n, n)."""
    s = slope_from_p(*SLOPE)
    tg, _ = T.build_constant_slope_tgraph(s, build_hexagon_region(n, n, n))
    gd, chain = T.dimer_graph(tg), T.markov_chain(tg)
    xi = T.continuum_map(tg)
    outline = np.array([T.linear_part(s, f) for f in tg.boundary])
    whites = [(n, n // 2), (n + n // 2, n), (n // 2 + 2, n // 2 + 1)]
    cols = T.kinv_columns(gd, chain, whites)
    out = []
    for w in whites:
        pw = T.linear_part(s, w)
        exact, model = [], []
        for b in gd.blacks:
            pb = T.linear_part(s, b)
            if not 0.25 * n < abs(pb - pw) < 0.6 * n:
                continue
            if np.min(np.abs(outline - pb)) < 0.2 * n * abs(s.a):
                continue
            exact.append(cols[w][b])
            model.append(T.continuum_kinv(tg, xi, b, w))
        exact, model = np.array(exact), np.array(model)
        out.append(float(np.linalg.norm(exact - model) / np.linalg.norm(exact)))
    return out


@pytest.fixture(scope="module")
def continuum_trend():
    return {n: continuum_errors(n) for n in (10, 20, 40)}


@pytest.mark.xfail(strict=True, reason="finite-size corrections exceed 10% at n = 10; see the trend test")
def test_continuum_within_ten_percent_at_n10(continuum_trend):
    assert max(continuum_trend[10]) < 0.1


def test_continuum_gap_shrinks(continuum_trend):
    e10, e20, e40 = (np.array(continuum_trend[n]) for n in (10, 20, 40))
    assert np.all(e20 < e10) and np.all(e40 < e20)
    assert max(e40) < 0.1


def test_half_plane_map_fit():
    s = slope_from_p(*SLOPE)
    tg, _ = T.build_constant_slope_tgraph(s, build_hexagon_region(8, 8, 8))
    xi = T.continuum_map(tg)
    assert xi.fit_residual < 1e-2
    centre = np.mean([T.linear_part(s, f) for f in tg.boundary])
    assert xi(centre).imag > 0


def test_canonical_flow(hex4):
    tg, gd, chain = hex4
    flow = T.canonical_flow(tg)
    out, inflow = {}, {}
    for (w, b), v in flow.values.items():
        out[w] = out.get(w, 0.0) + v
        inflow[b] = inflow.get(b, 0.0) + v
    assert all(v == pytest.approx(1, abs=1e-9) for v in out.values())
    boundary = set(tg.boundary)
    from dimerlab.lattice import faces_of_black
    for b, v in inflow.items():
        if not any(f in boundary for f in faces_of_black(b)):
            assert v == pytest.approx(1, abs=1e-9)


def test_endpoint_defect_is_turning(hex4):
    tg, gd, chain = hex4
    defect = T.endpoint_defect(tg)
    boundary = set(tg.boundary)
    pts = [tg.psi[f] for f in tg.boundary]
    total = 0.0
    for i, f in enumerate(tg.boundary):
        # turning angle from the polygon vertices, independent of TGraph.turning
        a, b, c = pts[i - 1], pts[i], pts[(i + 1) % len(pts)]
        turn = math.atan2(((c - b) * (b - a).conjugate()).imag, ((c - b) * (b - a).conjugate()).real)
        total += turn
        assert defect[f] == pytest.approx(turn / (2 * math.pi) - (f in tg.roots), abs=1e-12)
    assert total / (2 * math.pi) == pytest.approx(1.0, abs=1e-12)
    assert oracles.shoelace(pts) > 0
    for f in tg.vertices:
        if f not in boundary:
            assert defect[f] == pytest.approx(0, abs=1e-12)


def test_boundary_profile_flat_limit():
    s = slope_from_p(1 / 3, 1 / 3, 1 / 3)
    errs = [abs(T.boundary_height_profile(s, "yhat", n)) for n in (10**2, 10**3, 10**4)]
    assert errs[-1] < 1e-3
    assert all(e * n <= 1 for e, n in zip(errs, (10**2, 10**3, 10**4)))


def test_boundary_profile_rational_example():
    s = slope_from_p(0.5, 0.25, 0.25)
    n = 10**4
    assert abs(T.boundary_height_profile(s, "yhat", n) - (0.5 - 1 / 3)) <= 2 / n


@pytest.mark.parametrize("seed", range(5))
def test_boundary_profile_two_routes(seed):
    p = np.random.default_rng(seed).dirichlet((2, 2, 2))
    s = slope_from_p(*p)
    n = 10**4
    flux = T.boundary_height_profile(s, "yhat", n)
    frequency = T.column_convex_corners(s, n) / n
    assert 0 <= frequency <= 1
    assert flux + 1 / 3 == pytest.approx(frequency, abs=2 / n)
    assert flux == pytest.approx(p[0] - 1 / 3, abs=2e-3)


def test_boundary_profile_directions():
    s = slope_from_p(0.45, 0.3, 0.25)
    n = 10**4
    for name, pk in (("yhat", 0.45), ("zhat", 0.3), ("xhat", 0.25)):
        assert T.boundary_height_profile(s, name, n) == pytest.approx(pk - 1 / 3, abs=2e-3)
    with pytest.raises(ValueError):
        T.boundary_height_profile(s, "what", n)


def test_iterative_fallback(hex3, monkeypatch):
    tg, gd, chain = hex3
    w = sorted(tg.region.whites)[4]
    direct = T.conjugate_greens(tg, chain, w)
    fresh = T.markov_chain(tg)

    def fail(_):
        raise RuntimeError("Factor is exactly singular")

    monkeypatch.setattr(T, "splu", fail)
    assert fresh.factor() is None
    again = T.conjugate_greens(tg, fresh, w, direct.cut)
    assert max(abs(again[f] - direct[f]) for f in direct.values) < 1e-10


def test_singular_system_reported(hex3, monkeypatch):
    from dimerlab.errors import SingularSystem
    tg, gd, chain = hex3
    fresh = T.markov_chain(tg)
    monkeypatch.setattr(T, "splu", lambda _: (_ for _ in ()).throw(RuntimeError("singular")))
    # a zero operator cannot meet the residual target
    monkeypatch.setattr(fresh, "operator", lambda: T.sp.csc_matrix((len(fresh.index),) * 2))
    with pytest.raises(SingularSystem):
        fresh.solve(np.ones(len(fresh.index)))
