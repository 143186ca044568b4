import numpy as np
import pytest
from scipy import integrate

from reebsim import coeffs as C
from reebsim import graphdiff as G
from reebsim.errors import CoefficientGap, ConfigInvalid, SolverSingular
from reebsim.reeb import GraphPoint, ReebGraph


def saddle(graph):
    return [v for v in graph.vertices if v.type == "1/2"][0]


def scale_oracle(graph, tables, vid, h_v, delta):
    """Exit probabilities from the vertex by quadrature of the scale functions.

    On edge k with distance s from the vertex the scale density is
    ``(h(0)/h(s)) exp(-int 2 sigma side (b_hat + delta beta_hat)/(delta h))``;
    gluing gives ``p_j`` proportional to ``gamma_j / S_j(h_v)`` with
    ``gamma_j = h_j(0)``.
    """
    zO = graph.vertex(vid).z
    w = {}
    for e in graph.incident_edges(vid):
        t = tables[e]
        sig = 1.0 if graph.edge(e).lower == vid else -1.0
        z = lambda s: zO + sig * s  # noqa: E731
        k = lambda s: 2 * sig * t.side * (t.b_hat(z(s)) + delta * t.beta_hat(z(s))) / (
            delta * t.h(z(s)))  # noqa: E731
        s = np.linspace(0.0, h_v, 4001)
        K = integrate.cumulative_trapezoid(k(s), s, initial=0.0)
        dens = t.h(z(0.0)) / t.h(z(s)) * np.exp(-K)
        S = integrate.simpson(dens, x=s)
        w[e] = t.h(z(0.0)) / S
    tot = sum(w.values())
    return {e: v / tot for e, v in w.items()}


def test_bernoulli():
    assert G.bernoulli(0.0) == 1.0
    x = np.array([-30.0, -1.0, 1e-9, 0.5, 40.0])
    assert np.allclose(G.bernoulli(x), x / np.expm1(x), rtol=1e-12)
    assert np.allclose(G.bernoulli(x) - G.bernoulli(-x), -x, rtol=1e-10)


@pytest.mark.parametrize("delta", [1e-2, 1e-3])
def test_star_matches_scale_oracle(sep4d_graph, sep4d_tables, delta):
    O = saddle(sep4d_graph)
    got = G.vertex_exit_distribution(sep4d_graph, sep4d_tables, delta, O.id, 0.2)
    ref = scale_oracle(sep4d_graph, sep4d_tables, O.id, 0.2, delta)
    assert sum(got.values()) == pytest.approx(1.0, abs=1e-10)
    for e in got:
        assert got[e] == pytest.approx(ref[e], abs=1e-4)


def test_star_tends_to_volume_ratio(sep4d_graph, sep4d_tables, sep4d_cls):
    O = saddle(sep4d_graph)
    got = G.vertex_exit_distribution(sep4d_graph, sep4d_tables, 1e-4, O.id, 0.2)
    for e, p in sep4d_cls[O.id].probabilities.items():
        assert got[e] == pytest.approx(p, abs=0.01)


def constant_star(gammas, b_hat=0.0):
    """Three edges meeting at z = 0 with v = 1, constant h and b_hat."""
    g = ReebGraph.from_structure(
        [(0, -1.0, None, None), (1, -1.0, None, None), (2, 0.0, None, None)],
        [(0, 2, None), (1, 0, 2), (2, 1, 2)], z_max=1.0)
    tabs = {}
    for e in g.edges:
        s = g.side(e.id)
        tabs[e.id] = C.analytic_table(
            e.id, s, e.z_lo, e.z_hi, V=lambda z, s=s: s * np.asarray(z, dtype=float) + 5.0,
            h=lambda z, c=gammas[e.id]: c * np.ones_like(np.asarray(z, dtype=float)),
            b_hat=lambda z: b_hat * np.ones_like(np.asarray(z, dtype=float)),
            dV=lambda z, s=s: s * np.ones_like(np.asarray(z, dtype=float)),
            dh=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
            lo_kind="exterior" if e.lower != 2 else "interior",
            hi_kind="open" if e.upper is None else "interior")
    return g, tabs


def test_constant_star_mean_time_closed_form():
    # w = w_O - s^2/(delta gamma_k) + a_k s with sum gamma_k a_k = 0
    gam = {0: 1.0, 1: 2.0, 2: 3.0}
    g, tabs = constant_star(gam)
    delta, h = 1e-2, 0.1
    w = G.mean_exit_time(g, tabs, delta, 2, h, n_mesh=800)
    assert w == pytest.approx(3 * h * h / (delta * sum(gam.values())), rel=1e-3)
    p = G.vertex_exit_distribution(g, tabs, delta, 2, h)
    for e, c in gam.items():
        assert p[e] == pytest.approx(c / sum(gam.values()), abs=1e-6)


def test_mean_time_maximum_principle(sep4d_graph, sep4d_tables):
    O = saddle(sep4d_graph)
    star = G.StarProblem(sep4d_graph, sep4d_tables, O.id, 0.2, 1e-2)
    w = star.solve_time()
    for e in star.edges:
        assert np.all(w[e] >= 0)
        assert w[e][-1] == 0.0
    y = GraphPoint(star.edges[0], O.z + star.sigma[star.edges[0]] * 0.1)
    assert 0 < G.mean_exit_time(sep4d_graph, sep4d_tables, 1e-2, O.id, 0.2, y) < star.mean_time()


def test_symmetric_star_mean_time():
    gam = {0: 1.0, 1: 1.0, 2: 2.0}
    g, tabs = constant_star(gam)
    star = G.StarProblem(g, tabs, 2, 0.1, 1e-2)
    a = star.mean_time(0, -0.05)
    b = star.mean_time(1, -0.05)
    assert a == pytest.approx(b, rel=1e-12)


def test_mean_time_band(h2_graph, h2_tables):
    # planar saddle: v has a log singularity, so w scales like h |ln h|
    O = saddle(h2_graph)
    r = [G.mean_exit_time(h2_graph, h2_tables, 1e-3, O.id, h) / (h * abs(np.log(h)))
         for h in (0.02, 0.04, 0.08)]
    assert max(r) / min(r) < 2.0


def test_exterior_star_rejected(sep4d_graph, sep4d_tables):
    ext = [v for v in sep4d_graph.vertices if v.exterior][0]
    with pytest.raises(SolverSingular):
        G.StarProblem(sep4d_graph, sep4d_tables, ext.id, 0.05, 1e-2)


def test_star_larger_than_edge(sep4d_graph, sep4d_tables):
    with pytest.raises(CoefficientGap):
        G.StarProblem(sep4d_graph, sep4d_tables, saddle(sep4d_graph).id, 5.0, 1e-2)


def test_config_validation(sep4d_graph, sep4d_tables):
    start = GraphPoint(sep4d_graph.open_edge, 1.5)
    with pytest.raises(ConfigInvalid):
        G.GraphDiffusionConfig(1e-2, 1.0, 1e-3, 0.5, start).validate(sep4d_graph)
    with pytest.raises(ConfigInvalid):
        G.GraphDiffusionConfig(1e-2, 1.0, 0.5, 0.05, start).validate(sep4d_graph, sep4d_tables)
    G.GraphDiffusionConfig(1e-2, 1.0, 1e-3, 0.2, start).validate(sep4d_graph, sep4d_tables)


def test_interior_increment_moments(harmonic_graph):
    # harmonic edge with closed-form coefficients: drift -2z + delta, variance 2 delta z
    e = harmonic_graph.edges[0]
    tab = C.analytic_table(e.id, 1, e.z_lo, e.z_hi, V=lambda z: 2 * np.pi * np.asarray(z),
                           h=lambda z: 4 * np.pi * np.asarray(z),
                           b_hat=lambda z: -4 * np.pi * np.asarray(z),
                           dV=lambda z: 2 * np.pi * np.ones_like(np.asarray(z, dtype=float)),
                           dh=lambda z: 4 * np.pi * np.ones_like(np.asarray(z, dtype=float)))
    delta, dt, N = 1e-2, 1e-3, 40_000
    sim = G.GraphDiffusion(harmonic_graph, {e.id: tab}, delta, 0.1)
    for z0 in (0.5, 1.0, 2.0):
        _, z, _ = sim.run([e.id] * N, [z0] * N, dt, dt, seed=1)
        dz = z - z0
        var_ref = delta * 2 * z0 * dt
        mean_ref = (delta - 2 * z0) * dt
        assert dz.var() == pytest.approx(var_ref, rel=0.05)
        assert abs(dz.mean() - mean_ref) < 4 * np.sqrt(var_ref / N)


def test_simulated_exits_match_star(h2, h2_graph):
    # excursions at radius 0.01, first exit measured at radius 0.08
    tabs = C.tabulate_edges(h2_graph, h2, mc_samples=1_000_000, seed=0)
    O = saddle(h2_graph)
    up = h2_graph.upper_edges(O.id)[0]
    delta, H, N = 1e-2, 0.08, 2000
    ref = G.vertex_exit_distribution(h2_graph, tabs, delta, O.id, H)
    sim = G.GraphDiffusion(h2_graph, tabs, delta, 0.01)
    e, _, _ = sim.run([up] * N, [O.z + 1e-4] * N, 50.0, 2e-4, seed=0,
                      stop_band=(O.z - H, O.z + H))
    for k, p in ref.items():
        freq = np.mean(e == k)
        assert abs(freq - p) < 3 * np.sqrt(p * (1 - p) / N)
    lows = h2_graph.lower_edges(O.id)
    assert ref[lows[0]] == pytest.approx(ref[lows[1]], abs=0.01)
    w = G.mean_exit_time(h2_graph, tabs, delta, O.id, H)
    assert sim.last_times.mean() == pytest.approx(w, rel=0.1)


def test_drift_dominated_tracks_limit_flow(sep4d_graph, sep4d_tables, sep4d_cls):
    from reebsim.limit import LimitFlow
    e0 = sep4d_graph.open_edge
    O = saddle(sep4d_graph)
    flow = LimitFlow(sep4d_graph, sep4d_tables, sep4d_cls)
    seg, stop, kind = flow.segment(e0, 1.5, 0.0, 100.0)
    assert kind == "vertex" and stop == ("vertex", O.id)
    cfg = G.GraphDiffusionConfig(1e-4, float(seg.t[-1]) * 0.95, 1e-3, 0.05,
                                 GraphPoint(e0, 1.5), seed=2)
    path = G.simulate_graph_diffusion(cfg, sep4d_graph, sep4d_tables)
    on = path.edge == e0
    ref = np.interp(path.t[on], seg.t, seg.z)
    assert np.abs(path.z[on] - ref).max() < 0.05
