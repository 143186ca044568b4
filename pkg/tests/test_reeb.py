import numpy as np
import pytest
from scipy import ndimage

from reebsim.errors import PDimTooSmall, UnsupportedKinetic
from reebsim.morse import ScalarFieldModel, make_field
from reebsim.reeb import (FIGURE2_X0, ReebGraph, build_reeb_grid, build_reeb_separable,
                          figure2_fixture, validate)


def edges_at(graph, z):
    return [e for e in graph.edges if e.z_lo < z < e.z_hi]


def test_h2_structure(h2_graph):
    tc = h2_graph.type_counts()
    assert tc["1/0"] == 2 and tc["1/2"] == 1 and tc["0/1"] == 0 and tc["2/1"] == 0
    zs = sorted(v.z for v in h2_graph.vertices)
    assert np.allclose(zs, [-0.25, -0.25, 0.0], atol=1e-9)
    assert sum(e.is_open for e in h2_graph.edges) == 1
    assert validate(h2_graph).is_tree


@pytest.mark.parametrize("z", [-0.2, -0.1, 0.1])
def test_h2_components_match_flood_fill(h2, h2_graph, z):
    # oracle: connected components of the sublevel set on an independent grid
    p = np.linspace(*h2.box[0], 601)
    q = np.linspace(*h2.box[1], 601)
    P, Q = np.meshgrid(p, q, indexing="ij")
    H = h2(np.stack([P, Q], axis=-1))
    _, n = ndimage.label(H < z)
    assert len(edges_at(h2_graph, z)) == n


def test_harmonic_single_vertex(harmonic_graph):
    assert harmonic_graph.type_counts()["1/0"] == 1
    assert len(harmonic_graph.vertices) == 1
    assert len(harmonic_graph.edges) == 1 and harmonic_graph.edges[0].is_open


def test_project_examples(h2, h2_graph):
    gp = h2_graph.project(np.array([0.0, 0.5]), h2)
    assert gp.z == pytest.approx(-7 / 64)
    e = h2_graph.edge(gp.edge)
    assert h2_graph.vertex(e.lower).critical.location[1] > 0
    gp = h2_graph.project(np.array([1.0, 0.0]), h2)
    assert gp.z == pytest.approx(0.5)
    assert h2_graph.edge(gp.edge).is_open


def test_project_near_vertex_flag(h2, h2_graph):
    gp = h2_graph.project(np.array([0.0, 1e-5]), h2)
    assert gp.near_vertex
    assert h2_graph.vertex(gp.vertex).type == "1/2"


def test_locator_matches_sign_of_q(h2, h2_graph, rng):
    x = h2.uniform(rng, 20000)
    z, e = h2_graph.locate(x, h2)
    below = z < -1e-3
    wells = {ed.id: np.sign(h2_graph.vertex(ed.lower).critical.location[1])
             for ed in h2_graph.edges if not ed.is_open}
    sign = np.array([wells.get(int(k), 0.0) for k in e[below]])
    assert np.all(sign == np.sign(x[below, 1]))
    assert np.all(np.array([h2_graph.edge(int(k)).is_open for k in e[z > 1e-3]]))


def test_locator_constant_along_orbits(sep4d, sep4d_graph, rng):
    from scipy.integrate import solve_ivp

    from reebsim.morse import symplectic_gradient
    x = sep4d.uniform(rng, 200)
    x = x[(sep4d(x) < 0.8) & (np.abs(sep4d(x) - 0.0994) > 0.02)][:10]
    for x0 in x:
        sol = solve_ivp(lambda t, y: symplectic_gradient(sep4d, y), (0, 5), x0, rtol=1e-10,
                        atol=1e-12, t_eval=np.linspace(0, 5, 50))
        z, e = sep4d_graph.locate(sol.y.T, sep4d)
        assert len(set(e.tolist())) == 1
        assert np.ptp(z) < 1e-7


def test_sep4d_separable_structure(sep4d, sep4d_graph):
    tc = sep4d_graph.type_counts()
    assert (tc["1/0"], tc["1/2"], tc["0/1"], tc["2/1"]) == (2, 1, 0, 0)
    saddle = [v for v in sep4d_graph.vertices if v.type == "1/2"][0]
    assert np.allclose(saddle.critical.location[:2], 0.0)
    assert validate(sep4d_graph).ok


def test_sep4d_symmetric_saddle_level():
    # F = (q1^2 - 1)^2 + 5 q2^2 has its saddle at q = 0 with value 1
    g = build_reeb_separable(make_field("sep4d", c=0.0))
    saddle = [v for v in g.vertices if v.type == "1/2"][0]
    assert saddle.z == pytest.approx(1.0, abs=1e-10)


def test_sep4d_random_well_points(sep4d, sep4d_graph, rng):
    # points with H below the saddle level lie in the well of sign(q1)
    x = sep4d.uniform(rng, 50000)
    z, e = sep4d_graph.locate(x, sep4d)
    zs = [v.z for v in sep4d_graph.vertices if v.type == "1/2"][0]
    m = z < zs - 1e-3
    wells = {ed.id: np.sign(sep4d_graph.vertex(ed.lower).critical.location[2])
             for ed in sep4d_graph.edges if not ed.is_open}
    assert np.all(np.array([wells[int(k)] for k in e[m]]) == np.sign(x[m, 2]))


def test_potential_maximum_lifts_to_order_two():
    g = build_reeb_separable(make_field("sep4d_hat", c=0.1))
    assert validate(g).ok
    tops = [v for v in g.vertices if v.critical is not None and v.critical.index == 2]
    assert tops and all(v.type == "1/1" and v.order == 2 for v in tops)


def test_grid_and_separable_agree_4d(sep4d):
    a = build_reeb_grid(sep4d, resolution=40)
    b = build_reeb_separable(sep4d)
    assert a.type_counts() == b.type_counts()
    assert np.allclose(sorted(v.z for v in a.vertices), sorted(v.z for v in b.vertices),
                       atol=1e-8)


@pytest.mark.parametrize("c", [-0.3, -0.05, 0.05, 0.2])
def test_counting_identities_random_tilts(c):
    for name in ("h2", "sep4d"):
        rep = validate(build_reeb_separable(make_field(name, c=c)) if name == "sep4d"
                       else build_reeb_grid(make_field(name, c=c), resolution=256))
        assert rep.prop2a and rep.prop2b and rep.is_tree


def test_figure2_fixture():
    g = figure2_fixture()
    rep = validate(g)
    assert rep.type_counts["1/0"] == 6
    assert rep.type_counts["1/2"] == 5
    assert rep.type_counts["0/1"] == 1
    assert rep.type_counts["2/1"] == 1
    assert rep.ok
    minima = sorted(v.label for v in g.vertices if v.type == "1/0")
    assert minima == sorted(["O5", "O6", "O11", "O12", "O14", "O15"])
    assert g.edge(FIGURE2_X0.edge).contains(FIGURE2_X0.z)


def test_validate_reports_broken_counts():
    verts = [(0, 0.0, None, None), (1, 0.5, None, None), (2, 1.0, None, None)]
    # two minima joined upward through an order-2 chain: no merging saddle
    g = ReebGraph.from_structure(verts, [(0, 2, None), (1, 0, 1), (2, 1, 2)], z_max=2.0)
    assert validate(g).ok
    g = ReebGraph.from_structure([(0, 0.0, None, None), (1, 0.1, None, None)],
                                 [(0, 0, None), (1, 1, None)], z_max=2.0)
    rep = validate(g)
    assert not rep.one_open_edge and not rep.ok


def test_json_round_trip(h2_graph, tmp_path):
    p = tmp_path / "reeb.json"
    h2_graph.to_json(p)
    g = ReebGraph.from_json(p)
    assert [(v.id, v.type) for v in g.vertices] == [(v.id, v.type) for v in h2_graph.vertices]
    assert np.allclose([v.z for v in g.vertices], [v.z for v in h2_graph.vertices])
    assert [(e.id, e.lower, e.upper) for e in g.edges] == \
        [(e.id, e.lower, e.upper) for e in h2_graph.edges]


def test_separable_errors(h2):
    with pytest.raises(PDimTooSmall):
        build_reeb_separable(h2)
    f = make_field("doublewell2d", c=0.1)
    with pytest.raises(UnsupportedKinetic):
        build_reeb_separable(f)


def test_grid_needs_ceiling():
    f = ScalarFieldModel("bowl", 2, lambda x: np.sum(x ** 2, axis=-1), lambda x: 2 * x,
                         lambda x: np.broadcast_to(2 * np.eye(2), x.shape + (2,)),
                         [(-1.0, 1.0), (-1.0, 1.0)])
    with pytest.raises(ValueError):
        build_reeb_grid(f, resolution=64)
