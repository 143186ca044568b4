import json

import numpy as np
import pytest

from reebsim import coeffs as C
from reebsim import limit as L
from reebsim.errors import EmptyShell
from reebsim.perturbations import LinearDrift
from reebsim.reeb import GraphPoint


def harmonic_table(edge, lam):
    """b = -lam x on the oscillator: V = 2 pi z, b_hat = -4 pi lam z, so b_bar = -2 lam z."""
    one = lambda z: np.ones_like(np.asarray(z, dtype=float))  # noqa: E731
    return C.analytic_table(edge.id, 1, edge.z_lo, edge.z_hi,
                            V=lambda z: 2 * np.pi * np.asarray(z),
                            h=lambda z: 4 * np.pi * np.asarray(z),
                            b_hat=lambda z: -4 * np.pi * lam * np.asarray(z),
                            dV=lambda z: 2 * np.pi * one(z), dh=lambda z: 4 * np.pi * one(z),
                            z=np.linspace(edge.z_lo, edge.z_hi, 41)[1:-1])


@pytest.fixture(scope="module")
def harmonic_exact(harmonic_graph):
    e = harmonic_graph.edges[0]
    tabs = {e.id: harmonic_table(e, 0.5)}
    return tabs, C.classify_vertices(harmonic_graph, tabs)


def test_exponential_law(harmonic_graph, harmonic_exact):
    tabs, cls = harmonic_exact
    e = harmonic_graph.edges[0]
    p = L.simulate_limit(harmonic_graph, tabs, cls, GraphPoint(e.id, 2.0), T=3.0)
    assert p.status == "active"
    for seg in p.segments:
        assert np.allclose(seg.z, 2.0 * np.exp(-seg.t), rtol=1e-8)


def test_exterior_vertex_is_asymptotic(harmonic_graph, harmonic_exact):
    tabs, cls = harmonic_exact
    e = harmonic_graph.edges[0]
    p = L.simulate_limit(harmonic_graph, tabs, cls, GraphPoint(e.id, 1.0), T=1e4)
    assert p.status == "converged"
    assert p.target == ("vertex", harmonic_graph.vertices[0].id)
    # z = e^{-t} reaches the 1e-10 tolerance at t = ln(1e10)
    assert p.t_end == pytest.approx(np.log(1e10), rel=1e-4)


def test_branching_frequencies(sep4d_graph, sep4d_tables, sep4d_cls):
    y = GraphPoint(sep4d_graph.open_edge, 1.5)
    n = 2000
    counts = L.branching_frequencies(sep4d_graph, sep4d_tables, sep4d_cls, y, n, seed=3)
    O = [v for v in sep4d_graph.vertices if v.type == "1/2"][0]
    probs = sep4d_cls[O.id].probabilities
    assert sum(counts.values()) == n
    for e, p in probs.items():
        lo = sep4d_graph.edge(e).lower
        k = counts.get(("vertex", lo), 0)
        assert abs(k / n - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_paths_are_reproducible(sep4d_graph, sep4d_tables, sep4d_cls):
    y = GraphPoint(sep4d_graph.open_edge, 1.5)
    a = L.simulate_limit(sep4d_graph, sep4d_tables, sep4d_cls, y, 50.0, seed=1, index=7)
    b = L.simulate_limit(sep4d_graph, sep4d_tables, sep4d_cls, y, 50.0, seed=1, index=7)
    assert a.branches == b.branches
    assert a.rows() == b.rows()


def test_hitting_time_stable_under_tolerance(sep4d_graph, sep4d_tables, sep4d_cls):
    e0 = sep4d_graph.open_edge
    f1 = L.LimitFlow(sep4d_graph, sep4d_tables, sep4d_cls)
    f2 = L.LimitFlow(sep4d_graph, sep4d_tables, sep4d_cls, rtol=5e-11, atol=5e-14)
    s1, _, k1 = f1.segment(e0, 1.5, 0.0, 100.0)
    s2, _, k2 = f2.segment(e0, 1.5, 0.0, 100.0)
    assert k1 == k2 == "vertex"
    assert s1.t[-1] == pytest.approx(s2.t[-1], rel=1e-6)


def test_limit_distribution(sep4d_graph, sep4d_tables, sep4d_cls, tmp_path):
    y = GraphPoint(sep4d_graph.open_edge, 1.5)
    dist = L.limit_distribution(sep4d_graph, sep4d_tables, sep4d_cls, y)
    probs = dist.probabilities()
    assert sum(probs.values()) == pytest.approx(1.0, abs=1e-14)
    assert np.isfinite(dist.T0) and dist.T0 > 0
    assert all(np.isfinite(v) and v <= dist.T0 for v in dist.transit.values())
    out = tmp_path / "limit.json"
    dist.to_json(out)
    back = json.loads(out.read_text())
    assert len(back["targets"]) == 2
    assert back["T0"] == pytest.approx(dist.T0)


def test_observable_of_one(sep4d, sep4d_graph, sep4d_tables, sep4d_cls):
    y = GraphPoint(sep4d_graph.open_edge, 1.5)
    dist = L.limit_distribution(sep4d_graph, sep4d_tables, sep4d_cls, y)
    val, se = L.expected_observable(sep4d_graph, sep4d, dist,
                                    lambda x: np.ones(x.shape[0]), mc_samples=10_000)
    assert val == pytest.approx(1.0, abs=1e-14)
    assert se == 0.0


def test_vertex_targets_are_point_masses(sep4d, sep4d_graph, sep4d_tables, sep4d_cls):
    y = GraphPoint(sep4d_graph.open_edge, 1.5)
    dist = L.limit_distribution(sep4d_graph, sep4d_tables, sep4d_cls, y)
    val, _ = L.expected_observable(sep4d_graph, sep4d, dist, lambda x: x[:, 2])
    ref = sum(t.probability * sep4d_graph.vertex(t.vertex).critical.location[2]
              for t in dist.targets)
    assert val == pytest.approx(ref, abs=1e-12)


@pytest.fixture(scope="module")
def attractor(harmonic, harmonic_graph):
    # b = mu (z* - H) x: b_hat = 4 pi mu z (z* - z), attracting zero at z*
    b = LinearDrift(0.0, 0.0, 1.0, 1.0, dp=1)
    tabs = C.tabulate_edges(harmonic_graph, harmonic, b_model=b, mc_samples=1_000_000, seed=4)
    return tabs, C.classify_vertices(harmonic_graph, tabs)


def test_level_attractor_table(harmonic_graph, attractor):
    tabs, _ = attractor
    t = tabs[harmonic_graph.edges[0].id]
    z = np.array([0.25, 0.5, 1.5, 2.0])
    assert np.allclose(t.b_hat(z), 4 * np.pi * z * (1.0 - z), atol=0.05)
    roots = C.edge_roots(t)
    assert len(roots) == 1 and roots[0] == pytest.approx(1.0, abs=0.01)


def test_level_attractor_distribution(harmonic, harmonic_graph, attractor):
    tabs, cls = attractor
    e = harmonic_graph.edges[0].id
    for z0 in (0.3, 2.5):
        dist = L.limit_distribution(harmonic_graph, tabs, cls, GraphPoint(e, z0))
        assert len(dist.targets) == 1
        tgt = dist.targets[0]
        assert tgt.kind == "level" and tgt.probability == 1.0
        p = L.simulate_limit(harmonic_graph, tabs, cls, GraphPoint(e, z0), T=1e4)
        assert p.status == "converged"
        assert p.segments[-1].z[-1] == pytest.approx(tgt.z, abs=1e-8)
    # x1^2 averaged over the circle of radius sqrt(2 z*) is z*
    val, se = L.expected_observable(harmonic_graph, harmonic, dist, lambda x: x[:, 0] ** 2,
                                    mc_samples=400_000, seed=1)
    assert val == pytest.approx(tgt.z, abs=4 * se + 2e-3)


def test_empty_shell(harmonic, harmonic_graph, attractor):
    tabs, cls = attractor
    dist = L.limit_distribution(harmonic_graph, tabs, cls, GraphPoint(0, 0.3))
    with pytest.raises(EmptyShell):
        L.expected_observable(harmonic_graph, harmonic, dist, lambda x: x[:, 0],
                              mc_samples=100, shell=1e-9)


def test_symmetric_h2_branching(h2_graph, h2_tables):
    cls = C.classify_vertices(h2_graph, h2_tables)
    y = GraphPoint(h2_graph.open_edge, 0.5)
    n = 10_000
    counts = L.branching_frequencies(h2_graph, h2_tables, cls, y, n, seed=0)
    ext = sorted(k for k in counts if k[0] == "vertex")
    assert len(ext) == 2
    assert counts[ext[0]] / n == pytest.approx(0.5, abs=0.015)


def test_single_well_distribution(harmonic_graph, harmonic_exact):
    tabs, cls = harmonic_exact
    dist = L.limit_distribution(harmonic_graph, tabs, cls, GraphPoint(0, 1.0))
    assert dist.probabilities() == {("vertex", harmonic_graph.vertices[0].id): 1.0}


def test_volume_law_along_segments(sep4d_graph, sep4d_tables, sep4d_cls):
    # div b = -2 lam, so dV/dt = -2 lam V along the averaged flow
    lam = 0.5
    y = GraphPoint(sep4d_graph.open_edge, 1.5)
    for k in range(4):
        p = L.simulate_limit(sep4d_graph, sep4d_tables, sep4d_cls, y, 10.0, seed=0, index=k)
        for seg in p.segments:
            t = sep4d_tables[seg.edge]
            V = t.V(seg.z)
            ref = V[0] * np.exp(-2 * lam * (seg.t - seg.t[0]))
            assert np.abs(V / ref - 1).max() < 0.02
