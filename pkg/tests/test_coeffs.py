import numpy as np
import pytest
from scipy import integrate, optimize

from reebsim import coeffs as C
from reebsim.errors import (AmbiguousSign, AssumptionA6Violated, AssumptionA8Violated,
                            CycleDetected, DegenerateDiffusion, EmptyDomain,
                            ExtrapolationUnstable)
from reebsim.perturbations import IsotropicDiffusion, LinearDrift
from reebsim.reeb import FIGURE2_X0, GraphPoint, figure2_fixture


def F1(q):
    return q ** 4 / 4 - q ** 2 / 2


def h2_well_volume(z, sign):
    """Area of ``{p^2/2 + F1(q) < z}`` in one well by quadrature over q."""
    inner = np.sqrt(max(1 - np.sqrt(1 + 4 * z), 0.0)) if z < 0 else 0.0
    outer = np.sqrt(1 + np.sqrt(1 + 4 * z))
    f = lambda q: 2 * np.sqrt(max(2 * (z - F1(q)), 0.0))  # noqa: E731
    return integrate.quad(f, inner, outer, limit=200)[0]


def sep4d_well_volume(z, c, sign):
    """4-volume below ``z`` on one side of q1 = q1_saddle: disc area pi*2(z-F) integrated over q."""
    F = lambda q1, q2: (q1 ** 2 - 1) ** 2 + 5 * q2 ** 2 + c * q1  # noqa: E731
    q1s = optimize.brentq(lambda q: 4 * q * (q * q - 1) + c, -0.5, 0.5)
    lo, hi = (q1s, 2.0) if sign > 0 else (-2.0, q1s)
    val, _ = integrate.dblquad(lambda q2, q1: 2 * np.pi * max(z - F(q1, q2), 0.0),
                               lo, hi, -1.0, 1.0, epsabs=1e-10, epsrel=1e-9)
    return val


def well_edges(graph, axis):
    return {e.id: np.sign(graph.vertex(e.lower).critical.location[axis])
            for e in graph.edges if e.lower is not None and graph.vertex(e.lower).type == "1/0"}


@pytest.fixture(scope="module")
def harmonic_tables(harmonic, harmonic_graph):
    return C.tabulate_edges(harmonic_graph, harmonic, b_model=LinearDrift(1.0, 1.0, dp=1),
                            mc_samples=1_000_000, seed=1)


def test_harmonic_closed_forms(harmonic_tables):
    t = harmonic_tables[0]
    z = np.array([0.3, 1.0, 2.0])
    V = 2 * np.pi * z
    assert np.allclose(t.V(z), V, rtol=0.02)
    assert np.allclose(t.v(z), 2 * np.pi, rtol=0.03)
    assert np.allclose(t.h(z), 4 * np.pi * z, rtol=0.02)
    assert np.allclose(t.b_hat(z), -4 * np.pi * z, rtol=0.02)
    assert np.allclose(t.a2_bar(z), 2 * z, rtol=0.04)
    assert np.allclose(t.b_bar(z), -2 * z, rtol=0.04)


def test_harmonic_raw_within_errors(harmonic_tables):
    t = harmonic_tables[0]
    m = t.z > 0.05
    dev = np.abs(t.raw["V"][m] - 2 * np.pi * t.z[m])
    assert np.all(dev < 4 * t.raw["V_se"][m] + 1e-12)


def test_harmonic_exterior_scaling(harmonic_tables):
    t = harmonic_tables[0]
    z = np.array([1e-3, 1e-2, 1e-1])
    r = t.a2_bar(z) / z
    assert np.ptp(r) / r.mean() < 0.15
    assert t.h(1e-4) < 1e-2


def test_h2_volumes_against_quadrature(h2_graph, h2_tables):
    for eid, sign in well_edges(h2_graph, 1).items():
        t = h2_tables[eid]
        for z in (-0.2, -0.1, -0.03):
            ref = h2_well_volume(z, sign)
            k = np.argmin(np.abs(t.z - z))
            assert abs(t.V(z) - ref) < 4 * t.raw["V_se"][k] + 1e-3


def test_sep4d_drift_is_minus_volume(sep4d_graph, sep4d_tables):
    # div b = -2 lam = -1, so b_hat = -V on every edge
    for eid, t in sep4d_tables.items():
        e = sep4d_graph.edge(eid)
        z = np.linspace(e.z_lo, min(e.z_hi, 1.5), 7)[1:-1]
        assert np.allclose(t.b_hat(z), -t.V(z), rtol=1e-9, atol=1e-12)


def test_additivity_h2(h2_graph, h2_tables):
    add = C.additivity(h2_tables, h2_graph)
    assert add
    for vid, res in add.items():
        for name, (r, se) in res.items():
            assert abs(r) <= 3 * se + 1e-12, (name, r, se)


def test_gluing_h2(h2_graph, h2_tables):
    gam = C.gluing_weights(h2_tables, h2_graph)
    saddle = [v for v in h2_graph.vertices if v.type == "1/2"][0].id
    g = gam[saddle]
    up = h2_graph.upper_edges(saddle)[0]
    lows = h2_graph.lower_edges(saddle)
    assert all(x > 0 for x in g.values())
    assert g[up] == pytest.approx(g[lows[0]] + g[lows[1]], rel=0.05)
    # symmetric wells
    assert g[lows[0]] == pytest.approx(g[lows[1]], rel=0.05)


def test_exterior_gluing_zero(harmonic_graph, harmonic_tables):
    gam = C.gluing_weights(harmonic_tables, harmonic_graph)
    assert list(gam[harmonic_graph.vertices[0].id].values()) == [0.0]


def test_sep4d_branching_matches_volume_oracle(sep4d_graph, sep4d_tables, sep4d_cls):
    saddle = [v for v in sep4d_graph.vertices if v.type == "1/2"][0]
    cls = sep4d_cls[saddle.id]
    assert cls.essential
    assert set(cls.exits) == set(sep4d_graph.lower_edges(saddle.id))
    assert sum(cls.probabilities.values()) == pytest.approx(1.0, abs=1e-15)
    V = {e: sep4d_well_volume(saddle.z, 0.1, s) for e, s in well_edges(sep4d_graph, 2).items()}
    tot = sum(V.values())
    for e, p in cls.probabilities.items():
        assert p == pytest.approx(V[e] / tot, abs=0.01)


def test_branching_invariant_under_rescaling(sep4d, sep4d_graph, sep4d_cls):
    t2 = C.tabulate_edges(sep4d_graph, sep4d, b_model=LinearDrift(1.0, 0.0, dp=2),
                          mc_samples=1_000_000, seed=0)
    cls2 = C.classify_vertices(sep4d_graph, t2)
    for vid, c in sep4d_cls.items():
        for e, p in c.probabilities.items():
            assert cls2[vid].probabilities[e] == pytest.approx(p, abs=1e-12)


def test_expanding_drift_single_exit(h2, h2_graph):
    t = C.tabulate_edges(h2_graph, h2, b_model=LinearDrift(-0.5, 0.0, dp=1),
                         mc_samples=400_000, seed=2)
    cls = C.classify_vertices(h2_graph, t)
    saddle = [v for v in h2_graph.vertices if v.type == "1/2"][0].id
    assert not cls[saddle].essential
    assert cls[saddle].exits == tuple(h2_graph.upper_edges(saddle))
    assert cls[saddle].probabilities == {cls[saddle].exits[0]: 1.0}


def test_stable_set_sep4d(sep4d_graph, sep4d_tables, sep4d_cls):
    y = GraphPoint(sep4d_graph.open_edge, 1.5)
    ss = C.stable_set(sep4d_graph, sep4d_tables, sep4d_cls, y)
    assert len(ss.targets) == 2
    assert all(t.kind == "vertex" for t in ss.targets)
    assert sum(t.probability for t in ss.targets) == pytest.approx(1.0, abs=1e-14)
    saddle = [v for v in sep4d_graph.vertices if v.type == "1/2"][0].id
    for t in ss.targets:
        assert t.essential == (saddle,)


def figure2_tables(graph, flip=()):
    """Closed-form tables with downward flow; |b_hat| on edge e is e + 1."""
    tabs = {}
    for e in graph.edges:
        s = graph.side(e.id)
        mag = -1.0 if e.id in flip else 1.0
        tabs[e.id] = C.analytic_table(
            e.id, s, e.z_lo, e.z_hi,
            V=lambda z, s=s, lo=e.z_lo: s * (np.asarray(z) - lo) + 10.0,
            h=lambda z: np.ones_like(np.asarray(z, dtype=float)),
            b_hat=lambda z, s=s, m=-(e.id + 1.0) * mag: s * m * np.ones_like(np.asarray(z, float)),
            dV=lambda z, s=s: s * np.ones_like(np.asarray(z, dtype=float)),
            dh=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
            lo_kind="interior", hi_kind="interior" if e.upper is not None else "open")
    return tabs


def test_figure2_stable_set():
    g = figure2_fixture()
    tabs = figure2_tables(g)
    cls = C.classify_vertices(g, tabs)
    ss = C.stable_set(g, tabs, cls, FIGURE2_X0)
    label = {v.id: v.label for v in g.vertices}
    got = {label[t.vertex]: t for t in ss.targets}
    assert set(got) == {"O5", "O6", "O11", "O12"}
    assert sum(t.probability for t in ss.targets) == pytest.approx(1.0, abs=1e-15)
    t11 = got["O11"]
    assert sorted(label[v] for v in t11.essential) == ["O10", "O2"]
    # p(O2 -> I7) p(O10 -> I11) with |b_hat_e| = e + 1
    assert t11.probability == pytest.approx((8 / 13) * (12 / 23), rel=1e-12)


def test_a8_escape_detected():
    g = figure2_fixture()
    tabs = figure2_tables(g, flip=(0,))
    cls = C.classify_vertices(g, tabs)
    with pytest.raises(AssumptionA8Violated):
        C.stable_set(g, tabs, cls, GraphPoint(0, 11.0))


def test_cycle_guard():
    g = figure2_fixture()
    tabs = figure2_tables(g)
    cls = C.classify_vertices(g, tabs)
    with pytest.raises(CycleDetected):
        C.stable_set(g, tabs, cls, FIGURE2_X0, max_depth=1)


def test_a6_zero_drift_at_interior_vertex(h2, h2_graph):
    t = C.tabulate_edges(h2_graph, h2, mc_samples=200_000, seed=3)
    with pytest.raises(AssumptionA6Violated):
        C.classify_vertices(h2_graph, t)


def test_ambiguous_sign():
    g = figure2_fixture()
    tabs = figure2_tables(g)
    t = tabs[4]
    zO = t.z_hi
    t.raw["b_hat"][t.window["hi"]] = [1.0, -1.0, 1.0][:len(t.window["hi"])]
    assert zO == g.vertex(2).z
    with pytest.raises(AmbiguousSign):
        C.classify_vertices(g, tabs)


def test_extrapolation_unstable():
    g = figure2_fixture()
    tabs = figure2_tables(g)
    t = tabs[4]
    idx = t.window["hi"]
    t.raw["h"][idx] = [1.0, 3.0, 0.2][:len(idx)]
    with pytest.raises(ExtrapolationUnstable):
        C.gluing_weights(tabs, g)


class NegativeFlux(IsotropicDiffusion):
    def flux_divergence(self, x, field):
        return -field.laplacian(np.asarray(x, dtype=float)) - 10.0


def test_degenerate_diffusion(h2, h2_graph):
    with pytest.raises(DegenerateDiffusion):
        C.tabulate_edges(h2_graph, h2, a2_model=NegativeFlux(), mc_samples=100_000, seed=0)


def test_empty_domain(h2, h2_graph):
    with pytest.raises(EmptyDomain):
        C.tabulate_edges(h2_graph, h2, mc_samples=20, seed=0)


def test_singular_fit_recovers_log_term():
    fit = C.SingularFit(0.0, 1.0, "interior", "open", 1.0, 4)
    zb = np.linspace(0.0, 1.0, 201)
    truth = lambda z: 0.3 + 2.0 * z * np.log(np.maximum(z, 1e-300)) + 0.5 * z ** 2  # noqa: E731
    dy = np.diff(truth(zb))
    fit.fit(zb, dy, np.full(dy.size, 1e-8), anchor=(0.0, 0.3, 1e-12))
    z = np.array([1e-4, 1e-2, 0.3, 0.9])
    assert np.allclose(fit(z), truth(z), atol=1e-8)
    assert np.allclose(fit.deriv(z), 2 * np.log(z) + 2 + z, rtol=1e-6)


def test_write_read_round_trip(sep4d_graph, sep4d_tables, sep4d_cls, tmp_path):
    gam = C.gluing_weights(sep4d_tables, sep4d_graph)
    C.write_tables(sep4d_tables, tmp_path, gam, sep4d_cls)
    back = C.read_tables(tmp_path)
    assert sorted(back) == sorted(sep4d_tables)
    for eid, t in sep4d_tables.items():
        z = t.z[1:-1]
        assert np.allclose(back[eid].b_bar(z), t.b_bar(z), rtol=1e-10)
        assert np.allclose(back[eid].raw["V"], t.raw["V"], rtol=1e-10)
    header = (tmp_path / f"coeffs_{sep4d_graph.open_edge}.csv").read_text().splitlines()[0]
    assert header.split(",") == list(C.CSV_COLUMNS)
