"""Reeb graphs of Morse functions.

The graph is a tree whose vertices are the critical points and whose edges
are families of level-set components parameterised by ``z``.  Two builders
are provided:

* :func:`build_reeb_grid` runs a join/split-tree sweep on a Freudenthal grid
  and merges the two trees into the contour tree;
* :func:`build_reeb_separable` lifts the join tree of ``F`` to
  ``H = |p|^2/2 + F(q)`` (valid for ``d_p >= 2``, where each fibre
  ``{|p|^2 = 2(z - F(q))}`` is connected).

Critical points that neither merge nor split components are kept as order-2
(``1/1``) vertices.
"""

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _backend
from .errors import (NotATree, PDimTooSmall, UnsupportedKinetic, VertexCountMismatch)
from .morse import CriticalPoint, find_critical_points

TYPES = ("1/0", "0/1", "1/1", "1/2", "2/1")
ORDER = {"1/0": 1, "0/1": 1, "1/1": 2, "1/2": 3, "2/1": 3}


@dataclass(frozen=True)
class ReebVertex:
    id: int
    z: float
    type: str
    critical: CriticalPoint | None = None
    label: str | None = None

    @property
    def order(self):
        return ORDER[self.type]

    @property
    def exterior(self):
        return self.order == 1


@dataclass(frozen=True)
class ReebEdge:
    id: int
    lower: int | None
    upper: int | None
    z_lo: float
    z_hi: float

    @property
    def is_open(self):
        return self.upper is None

    def contains(self, z):
        return self.z_lo <= z <= self.z_hi


@dataclass(frozen=True)
class GraphPoint:
    """A point ``(z, edge)`` of the graph; ``vertex`` is set near a vertex."""

    edge: int | None
    z: float
    vertex: int | None = None
    near_vertex: bool = False


@dataclass
class ValidationReport:
    is_tree: bool
    one_open_edge: bool
    type_counts: dict
    prop2a: bool
    prop2b: bool
    order_ok: bool
    index_ok: bool
    a2_ok: bool
    problems: list = dc_field(default_factory=list)

    @property
    def ok(self):
        return all((self.is_tree, self.one_open_edge, self.prop2a, self.prop2b,
                    self.order_ok, self.index_ok, self.a2_ok))


class ReebGraph:
    """An immutable tree of typed vertices and z-parameterised edges.

    ``locator`` maps ``(x, z)`` arrays to edge ids; it is ``None`` for graphs
    entered by hand.
    """

    def __init__(self, vertices, edges, z_max, dim=None, locator=None, merged=(), mode="manual"):
        self.vertices = tuple(vertices)
        self.edges = tuple(edges)
        self.z_max = float(z_max)
        self.dim = dim
        self._locator = locator
        self.merged = tuple(merged)
        self.mode = mode
        self._vid = {v.id: v for v in self.vertices}
        self._eid = {e.id: e for e in self.edges}
        self._up = defaultdict(list)
        self._down = defaultdict(list)
        for e in self.edges:
            if e.lower is not None:
                self._up[e.lower].append(e.id)
            if e.upper is not None:
                self._down[e.upper].append(e.id)
        self._side_cache = {}
        self._field = None

    # structure -------------------------------------------------------------

    @classmethod
    def from_structure(cls, vertices, edges, z_max, **kwargs):
        """Build from ``vertices = [(id, z, critical, label)]`` and ``edges = [(id, lower, upper)]``.

        Vertex types are derived from the adjacency.
        """
        zs = {vid: z for vid, z, *_ in vertices}
        ups = Counter(lo for _, lo, _ in edges if lo is not None)
        downs = Counter(up for _, _, up in edges if up is not None)
        verts = []
        for vid, z, crit, *rest in vertices:
            label = rest[0] if rest else None
            verts.append(ReebVertex(vid, float(z), f"{ups[vid]}/{downs[vid]}", crit, label))
        es = []
        for eid, lo, up in edges:
            z_lo = zs[lo] if lo is not None else -np.inf
            z_hi = zs[up] if up is not None else float(z_max)
            es.append(ReebEdge(eid, lo, up, float(z_lo), float(z_hi)))
        return cls(sorted(verts, key=lambda v: v.id), sorted(es, key=lambda e: e.id), z_max, **kwargs)

    def vertex(self, vid):
        return self._vid[vid]

    def edge(self, eid):
        return self._eid[eid]

    def upper_edges(self, vid):
        return tuple(self._up[vid])

    def lower_edges(self, vid):
        return tuple(self._down[vid])

    def incident_edges(self, vid):
        return self.upper_edges(vid) + self.lower_edges(vid)

    @property
    def open_edge(self):
        opens = [e.id for e in self.edges if e.upper is None]
        return opens[0] if len(opens) == 1 else None

    def interior_vertices(self):
        return [v for v in self.vertices if not v.exterior]

    def type_counts(self):
        c = Counter(v.type for v in self.vertices)
        return {t: c.get(t, 0) for t in TYPES}

    def _neighbors(self, vid):
        out = []
        for eid in self.incident_edges(vid):
            e = self._eid[eid]
            other = e.upper if e.lower == vid else e.lower
            out.append((eid, other))
        return out

    def _component(self, start, banned_edge):
        """Edge ids reachable from vertex ``start`` without crossing ``banned_edge``."""
        seen_v = {start}
        edges = set()
        stack = [start]
        while stack:
            v = stack.pop()
            for eid, other in self._neighbors(v):
                if eid == banned_edge:
                    continue
                edges.add(eid)
                if other is not None and other not in seen_v:
                    seen_v.add(other)
                    stack.append(other)
        return edges

    def bounded_side(self, eid):
        """Orientation and descendants of edge ``eid``.

        Returns ``(sign, edges)``: ``sign = +1`` when the bounded region
        ``G_i(z)`` lies below the level (sublevel side) and ``-1`` when it lies
        above; ``edges`` are the edges entirely inside ``G_i``.
        """
        if eid in self._side_cache:
            return self._side_cache[eid]
        e = self._eid[eid]
        open_id = self.open_edge
        if e.upper is None:
            res = (1, frozenset(self._component(e.lower, eid)) if e.lower is not None else frozenset())
        else:
            below = self._component(e.lower, eid) if e.lower is not None else set()
            above = self._component(e.upper, eid)
            if open_id in above:
                res = (1, frozenset(below))
            else:
                res = (-1, frozenset(above))
        self._side_cache[eid] = res
        return res

    def side(self, eid):
        return self.bounded_side(eid)[0]

    # projection ------------------------------------------------------------

    def edge_at(self, eid, z):
        """Walk from ``eid`` along unambiguous vertices until ``z`` is in range."""
        e = self._eid[eid]
        for _ in range(len(self.edges) + 1):
            if z > e.z_hi and e.upper is not None:
                ups = self._up[e.upper]
                if len(ups) != 1:
                    break
                e = self._eid[ups[0]]
            elif z < e.z_lo and e.lower is not None:
                downs = self._down[e.lower]
                if len(downs) != 1:
                    break
                e = self._eid[downs[0]]
            else:
                break
        return e.id

    def locate(self, x, field=None):
        """Vectorised ``(z, edge id)`` for points ``x`` of shape ``(n, d)``."""
        if self._locator is None:
            raise ValueError("graph has no component locator")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        field = field or self._field
        if field is None:
            raise ValueError("no field attached to the graph")
        z = field(x)
        return z, self._locator(x, z)

    def project(self, x, field=None, vertex_tol=1e-6):
        """Map a point of the phase space to the graph."""
        z, eids = self.locate(np.asarray(x, dtype=float)[None, :], field)
        z, eid = float(z[0]), int(eids[0])
        e = self._eid[eid]
        for vid in (e.lower, e.upper):
            if vid is not None and abs(z - self._vid[vid].z) < vertex_tol:
                return GraphPoint(eid, z, vertex=vid, near_vertex=True)
        return GraphPoint(eid, z)

    # serialisation ---------------------------------------------------------

    def to_dict(self):
        return {
            "z_max": self.z_max,
            "dim": self.dim,
            "mode": self.mode,
            "vertices": [
                {"id": v.id, "z": v.z, "type": v.type, "label": v.label,
                 "critical": None if v.critical is None else v.critical.as_dict()}
                for v in self.vertices],
            "edges": [
                {"id": e.id, "lower": e.lower, "upper": e.upper,
                 "z_lo": None if not np.isfinite(e.z_lo) else e.z_lo, "z_hi": e.z_hi,
                 "side": self.side(e.id)}
                for e in self.edges],
        }

    def to_json(self, path=None, indent=2):
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, data):
        verts = []
        for v in data["vertices"]:
            c = v.get("critical")
            crit = None if c is None else CriticalPoint(
                np.array(c["location"]), c["value"], c["index"], np.array(c["eigenvalues"]))
            verts.append((v["id"], v["z"], crit, v.get("label")))
        edges = [(e["id"], e["lower"], e["upper"]) for e in data["edges"]]
        g = cls.from_structure(verts, edges, data["z_max"], dim=data.get("dim"),
                               mode=data.get("mode", "manual"))
        return g

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# validation

def _index_consistent(vtype, k, d):
    if k is None:
        return True
    if k == 0:
        return vtype == "1/0"
    if k == d:
        return vtype == "0/1"
    if 1 < k < d - 1:
        return vtype == "1/1"
    allowed = {"1/1"}
    if k == 1:
        allowed.add("1/2")
    if k == d - 1:
        allowed.add("2/1")
    return vtype in allowed


def validate(graph):
    """Tree check, type/order table, counting identities and component check."""
    problems = []
    n_closed = sum(1 for e in graph.edges if e.upper is not None and e.lower is not None)
    opens = [e for e in graph.edges if e.upper is None]
    one_open = len(opens) == 1
    connected = True
    if graph.vertices:
        start = graph.vertices[0].id
        seen = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            for _, other in graph._neighbors(v):
                if other is not None and other not in seen:
                    seen.add(other)
                    stack.append(other)
        connected = len(seen) == len(graph.vertices)
    is_tree = connected and n_closed == len(graph.vertices) - 1
    if not is_tree:
        problems.append(f"not a tree: {len(graph.vertices)} vertices, {n_closed} closed edges")
    if not one_open:
        problems.append(f"{len(opens)} open edges")
    counts = graph.type_counts()
    prop2a = counts["1/2"] == counts["1/0"] - 1
    prop2b = counts["2/1"] == counts["0/1"]
    if not prop2a:
        problems.append(f"#(1/2)={counts['1/2']} but #(1/0)-1={counts['1/0'] - 1}")
    if not prop2b:
        problems.append(f"#(2/1)={counts['2/1']} but #(0/1)={counts['0/1']}")
    order_ok = True
    for v in graph.vertices:
        deg = len(graph.incident_edges(v.id))
        if v.type not in ORDER or deg != v.order:
            order_ok = False
            problems.append(f"vertex {v.id}: type {v.type} with {deg} edges")
    index_ok = True
    if graph.dim is not None:
        for v in graph.vertices:
            k = None if v.critical is None else v.critical.index
            if not _index_consistent(v.type, k, graph.dim):
                index_ok = False
                problems.append(f"vertex {v.id}: type {v.type} inconsistent with index {k}")
    for e in graph.edges:
        if not e.z_lo < e.z_hi:
            problems.append(f"edge {e.id}: empty z-range")
            is_tree = False
    a2_ok = not graph.merged
    for group in graph.merged:
        problems.append(f"several critical points on one level component: {group}")
    return ValidationReport(is_tree, one_open, counts, prop2a, prop2b, order_ok,
                            index_ok, a2_ok, problems)


# ---------------------------------------------------------------------------
# contour tree from join and split trees

def _reduced(nodes, arc, parent, rank, ascending):
    """Parent map of a merge tree restricted to ``nodes``."""
    by_arc = defaultdict(list)
    for x in nodes:
        by_arc[int(arc[x])].append(x)
    up = {}
    for a, members in by_arc.items():
        members.sort(key=lambda v: rank[v], reverse=not ascending)
        for i, x in enumerate(members):
            if i + 1 < len(members):
                up[x] = members[i + 1]
            else:
                p = int(parent[a])
                up[x] = p if p >= 0 else None
    return up


def _contour_tree(nodes, jt_up, st_up):
    """Merge reduced join and split trees (Carr, Snoeyink and Axen)."""
    jt_up = dict(jt_up)
    st_up = dict(st_up)
    jt_down = defaultdict(set)
    st_down = defaultdict(set)
    for x, p in jt_up.items():
        if p is not None:
            jt_down[p].add(x)
    for x, p in st_up.items():
        if p is not None:
            st_down[p].add(x)
    alive = set(nodes)
    queue = [x for x in nodes if len(jt_down[x]) + len(st_down[x]) == 1]
    edges = []
    while len(alive) > 1:
        if not queue:
            raise NotATree("contour tree merge stalled")
        x = queue.pop()
        if x not in alive or len(jt_down[x]) + len(st_down[x]) != 1:
            continue
        if not jt_down[x]:
            y = jt_up[x]
            edges.append((x, y))
            # x is a lower leaf: drop from the join tree, splice out of the split tree
            jt_down[y].discard(x)
            child = next(iter(st_down[x])) if st_down[x] else None
            par = st_up.get(x)
        else:
            y = st_up[x]
            edges.append((y, x))
            st_down[y].discard(x)
            child = next(iter(jt_down[x])) if jt_down[x] else None
            par = jt_up.get(x)
        if not jt_down[x]:
            # splice in the split tree
            if child is not None:
                st_up[child] = par
                if par is not None:
                    st_down[par].discard(x)
                    st_down[par].add(child)
            elif par is not None:
                st_down[par].discard(x)
        else:
            if child is not None:
                jt_up[child] = par
                if par is not None:
                    jt_down[par].discard(x)
                    jt_down[par].add(child)
            elif par is not None:
                jt_down[par].discard(x)
        alive.discard(x)
        jt_up.pop(x, None)
        st_up.pop(x, None)
        jt_down.pop(x, None)
        st_down.pop(x, None)
        if y is not None and y in alive and len(jt_down[y]) + len(st_down[y]) == 1:
            queue.append(y)
    return edges


def _grid_axes(field, resolution):
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (field.dim,))
    return [np.linspace(lo, hi, r + 1) for (lo, hi), r in zip(field.box, res)]


class _GridLocator:
    """Snap to grid corners and read precomputed contour-edge labels."""

    def __init__(self, axes, values, labels, ct_to_edges, graph_ref, field=None, interior=()):
        self.field = field
        self.interior = list(interior)
        self.axes = axes
        self.lo = np.array([a[0] for a in axes])
        self.h = np.array([a[1] - a[0] for a in axes])
        self.shape = tuple(len(a) for a in axes)
        self.values = values.ravel()
        self.labels = labels
        self.ct_to_edges = ct_to_edges
        self.graph_ref = graph_ref
        self.cell = float(np.linalg.norm(self.h))
        self.band = 0.0
        if field is not None:
            g = np.linalg.norm(field.gradient(np.stack(np.meshgrid(*axes, indexing="ij"), -1)
                                              .reshape(-1, len(axes))), axis=1)
            self.band = 4.0 * self.cell * float(np.percentile(g, 5)) + 1e-12

    def corner_labels(self, x, z):
        d = x.shape[1]
        base = np.floor((x - self.lo) / self.h).astype(np.int64)
        base = np.clip(base, 0, np.array(self.shape) - 2)
        best = np.full(len(x), -1, dtype=np.int64)
        gap = np.full(len(x), np.inf)
        for m in range(2 ** d):
            off = np.array([(m >> k) & 1 for k in range(d)])
            flat = np.ravel_multi_index(tuple((base + off).T), self.shape)
            lab = self.labels[flat]
            g = np.abs(self.values[flat] - z)
            better = (g < gap) & (lab >= 0)
            best[better] = lab[better]
            gap[better] = g[better]
        return best

    def __call__(self, x, z):
        z = np.asarray(z, dtype=float)
        x = self._escape_vertices(x, z)
        zz = self.field(x)
        ct = self.corner_labels(x, zz)
        graph = self.graph_ref()
        out = _resolve_chains(graph, self.ct_to_edges, ct, zz)
        moved = np.flatnonzero(zz != z)
        for i in moved:
            out[i] = graph.edge_at(int(out[i]), float(z[i]))
        return out

    def _escape_vertices(self, x, z):
        """Move points whose level is within grid resolution of a vertex.

        A gradient path below (above) ``x`` stays in its sublevel (superlevel)
        component, so labelling its end point and walking back along the tree
        is unambiguous through merging (splitting) vertices.
        """
        x = np.array(x, dtype=float)
        for zv, vtype in self.interior:
            near = np.flatnonzero(np.abs(z - zv) < self.band)
            if near.size == 0:
                continue
            sign = -1.0 if vtype != "2/1" else 1.0
            target = zv + sign * self.band
            y = x[near]
            for _ in range(200):
                hy = self.field(y)
                todo = (hy - target) * sign < 0
                if not todo.any():
                    break
                g = self.field.gradient(y[todo])
                gn = np.linalg.norm(g, axis=1, keepdims=True)
                step = sign * 0.25 * self.cell * g / np.maximum(gn, 1e-300)
                y[todo] += step
            x[near] = y
        return x


def _resolve_chains(graph, chains, keys, z):
    """Vectorised edge choice along per-key chains of consecutive edges.

    ``chains(key)`` returns the edge ids stacked along one tree arc, lowest
    first.  Points whose level falls outside the chosen edge are walked along
    the tree.
    """
    out = np.empty(len(keys), dtype=np.int64)
    for key in np.unique(keys):
        sel = np.flatnonzero(keys == key)
        eids = chains(int(key))
        tops = np.array([graph.edge(e).z_hi for e in eids])
        k = np.minimum(np.searchsorted(tops, z[sel]), len(eids) - 1)
        out[sel] = np.asarray(eids)[k]
    for eid in np.unique(out):
        e = graph.edge(int(eid))
        sel = np.flatnonzero((out == eid) & ((z < e.z_lo) | (z > e.z_hi)))
        for i in sel:
            out[i] = graph.edge_at(int(eid), float(z[i]))
    return out


def _match_criticals(points, values, criticals, tol_pos):
    """Assign each grid node to its nearest critical point within ``tol_pos``."""
    matched = {}
    for node, pos in points.items():
        d = [np.linalg.norm(c.location - pos) for c in criticals]
        k = int(np.argmin(d)) if d else -1
        if k < 0 or d[k] > tol_pos:
            raise VertexCountMismatch(
                f"grid critical node at {pos} (level {values[node]:.6g}) matches no critical point")
        matched[node] = k
    return matched


def build_reeb_grid(field, resolution=512, criticals=None, check_values=True):
    """Contour tree of ``field`` on a Freudenthal grid, cut at ``field.z_max``."""
    if field.z_max is None:
        raise ValueError("field needs z_max")
    if criticals is None:
        criticals = find_critical_points(field)
    crits = [c for c in criticals if c.value < field.z_max]
    axes = _grid_axes(field, resolution)
    shape = tuple(len(a) for a in axes)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, field.dim)
    values = field(mesh)
    n = values.size
    mt = _backend.merge_trees(values, shape)
    ext = np.append(values, np.inf)
    order = np.lexsort((np.arange(n + 1), ext))
    rank = np.empty(n + 1, dtype=np.int64)
    rank[order] = np.arange(n + 1)
    nodes = np.flatnonzero(mt["jt_crit"] | mt["st_crit"]).tolist()
    if n not in nodes:
        nodes.append(n)
    jt_up = _reduced(nodes, mt["jt_arc"], mt["jt_parent"], rank, True)
    st_up = _reduced(nodes, mt["st_arc"], mt["st_parent"], rank, False)
    ct_edges = _contour_tree(nodes, jt_up, st_up)
    if len(ct_edges) != len(nodes) - 1:
        raise NotATree(f"{len(nodes)} nodes but {len(ct_edges)} contour edges")
    # orient lower -> upper
    ct_edges = [(a, b) if rank[a] < rank[b] else (b, a) for a, b in ct_edges]

    # per-vertex contour-edge labels
    node_ranks = np.sort(rank[nodes])
    jt_arc, st_arc = mt["jt_arc"], mt["st_arc"]
    jt_par, st_par = mt["jt_parent"], mt["st_parent"]

    def jt_at(a, r):
        while jt_par[a] >= 0 and rank[jt_par[a]] < r:
            a = jt_par[a]
        return int(a)

    def st_at(s, r):
        while st_par[s] >= 0 and rank[st_par[s]] > r:
            s = st_par[s]
        return int(s)

    interval = np.searchsorted(node_ranks, rank[:n])
    keys = np.stack([jt_arc[:n], st_arc[:n], interval], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    lookup = {}
    for ci, (a, b) in enumerate(ct_edges):
        k0 = np.searchsorted(node_ranks, rank[a]) + 1
        k1 = np.searchsorted(node_ranks, rank[b])
        for k in range(k0, k1 + 1):
            r = node_ranks[k - 1] + 0.5
            key = (jt_at(jt_arc[a], r), st_at(st_arc[b], r), k)
            if key in lookup and lookup[key] != ci:
                raise NotATree("two contour edges share a component key")
            lookup[key] = ci
    ulab = np.array([lookup.get(tuple(int(v) for v in u), -1) for u in uniq], dtype=np.int64)
    labels = ulab[inverse]
    # critical nodes take the label of an incident edge
    for ci, (a, b) in enumerate(ct_edges):
        if b < n:
            labels[b] = ci
    for ci, (a, b) in enumerate(ct_edges):
        labels[a] = ci
    if (labels < 0).any():
        raise NotATree(f"{int((labels < 0).sum())} grid vertices not on any contour edge")

    # cut at z_max
    crossing = [ci for ci, (a, b) in enumerate(ct_edges) if ext[a] < field.z_max <= ext[b]]
    if len(crossing) != 1:
        raise NotATree(f"{len(crossing)} contour edges cross z_max")
    keep_nodes = [v for v in nodes if v < n and values[v] < field.z_max]

    # match grid nodes with analytic critical points
    cell = np.linalg.norm([a[1] - a[0] for a in axes])
    pos = {v: mesh[v] for v in keep_nodes}
    matched = _match_criticals(pos, values, crits, 3 * cell)
    inv = defaultdict(list)
    for node, k in matched.items():
        inv[k].append(node)
    dup = [v for v in inv.values() if len(v) > 1]
    if dup:
        raise VertexCountMismatch(f"critical point matched by several grid nodes: {dup}")
    if check_values:
        for node, k in matched.items():
            nb_vals = values[mesh_neighbors(node, shape)]
            tol = 2 * np.abs(nb_vals - values[node]).max() + 1e-12
            if abs(values[node] - crits[k].value) > tol:
                raise VertexCountMismatch(
                    f"grid level {values[node]:.6g} far from critical value {crits[k].value:.6g}")

    # vertices: matched nodes plus order-2 criticals inserted into edges
    unmatched = [k for k in range(len(crits)) if k not in inv]
    ct_split = defaultdict(list)
    for k in unmatched:
        c = crits[k]
        if c.index in (0, field.dim):
            raise VertexCountMismatch(f"extremum at {c.location} (level {c.value:.6g}) missing from grid tree")
        flat = np.ravel_multi_index(
            tuple(np.clip(np.rint((c.location - [a[0] for a in axes]) /
                                  [a[1] - a[0] for a in axes]).astype(int), 0, np.array(shape) - 1)),
            shape)
        ci = int(labels[flat])
        ct_split[ci].append(k)

    vid_of_node = {}
    vertices = []
    entries = [(crits[matched[v]].value, tuple(crits[matched[v]].location), "node", v) for v in keep_nodes]
    entries += [(crits[k].value, tuple(crits[k].location), "crit", k) for k in unmatched]
    entries.sort()
    crit_of = {}
    for vid, (_, _, kind, ref) in enumerate(entries):
        k = matched[ref] if kind == "node" else ref
        crit_of[vid] = crits[k]
        if kind == "node":
            vid_of_node[ref] = vid
        else:
            vid_of_node[("crit", ref)] = vid
        vertices.append((vid, crits[k].value, crits[k]))

    raw_edges = []
    ct_chain = {}
    for ci, (a, b) in enumerate(ct_edges):
        if values[a] >= field.z_max and a < n:
            continue
        lower = vid_of_node[a]
        upper = None if (b == n or values[b] >= field.z_max) else vid_of_node[b]
        mids = sorted(ct_split.get(ci, []), key=lambda k: crits[k].value)
        chain = [lower] + [vid_of_node[("crit", k)] for k in mids] + [upper]
        ct_chain[ci] = chain
        for lo, up in zip(chain[:-1], chain[1:]):
            raw_edges.append((lo, up))
    zs = {vid: crit_of[vid].value for vid in crit_of}
    raw_edges.sort(key=lambda e: (zs[e[0]], e[0], np.inf if e[1] is None else zs[e[1]]))
    edge_id = {e: i for i, e in enumerate(raw_edges)}
    chain_edges = {ci: [edge_id[(lo, up)] for lo, up in zip(ch[:-1], ch[1:])]
                   for ci, ch in ct_chain.items()}
    top_ci = crossing[0]

    def ct_to_edges(ci):
        return chain_edges.get(ci, chain_edges[top_ci])

    import weakref
    graph = ReebGraph.from_structure(
        vertices, [(i, lo, up) for i, (lo, up) in enumerate(raw_edges)], field.z_max,
        dim=field.dim, mode="grid")
    interior = [(v.z, v.type) for v in graph.vertices if v.type in ("1/2", "2/1")]
    locator = _GridLocator(axes, values, labels, ct_to_edges, weakref.ref(graph), field, interior)
    graph._locator = locator
    graph._field = field
    return graph


def mesh_neighbors(node, shape):
    from ._fallback import freudenthal_offsets
    c = np.array(np.unravel_index(node, shape))
    out = []
    for off in freudenthal_offsets(len(shape)):
        cc = c + off
        if np.all((cc >= 0) & (cc < np.array(shape))):
            out.append(np.ravel_multi_index(tuple(cc), shape))
    return np.array(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# separable lift

class _JoinTreeF:
    """Join tree of a potential ``F`` on a grid, with analytic critical values."""

    def __init__(self, potential, resolution, criticals, z_max):
        self.potential = potential
        axes = _grid_axes(potential, resolution)
        self.axes = axes
        self.lo = np.array([a[0] for a in axes])
        self.h = np.array([a[1] - a[0] for a in axes])
        self.shape = tuple(len(a) for a in axes)
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, potential.dim)
        self.values = potential(mesh)
        n = self.values.size
        mt = _backend.merge_trees(self.values, self.shape)
        self.arc = mt["jt_arc"][:n]
        parent = mt["jt_parent"]
        crit_nodes = [v for v in np.flatnonzero(mt["jt_crit"]).tolist() if v < n]
        self.parent = {v: (int(parent[v]) if 0 <= parent[v] < n else None) for v in crit_nodes}
        # nodes at or above z_max belong to the top arc
        self.nodes = [v for v in crit_nodes if self.values[v] < z_max]
        above = [v for v in self.nodes
                 if self.parent[v] is not None and self.values[self.parent[v]] >= z_max]
        roots = [v for v in self.nodes if self.parent[v] is None] + above
        if len(roots) != 1:
            raise NotATree(f"{len(roots)} sublevel components of F reach z_max")
        self.root = roots[0]
        self.parent[self.root] = None
        cell = np.linalg.norm(self.h)
        self.match = _match_criticals({v: mesh[v] for v in self.nodes}, self.values,
                                      criticals, 3 * cell)
        self.crit_value = {v: criticals[k].value for v, k in self.match.items()}
        self.mesh = mesh

    def arc_at(self, a, z):
        while self.parent.get(a) is not None and self.crit_value[self.parent[a]] <= z:
            a = self.parent[a]
        return a

    def lift_arcs(self, arcs, z):
        """Vectorised :meth:`arc_at`."""
        arcs = np.asarray(arcs, dtype=np.int64).copy()
        for _ in range(len(self.nodes) + 1):
            moved = False
            for a in np.unique(arcs):
                p = self.parent.get(int(a))
                if p is None:
                    continue
                sel = (arcs == a) & (z >= self.crit_value[p])
                if sel.any():
                    arcs[sel] = p
                    moved = True
            if not moved:
                break
        return arcs

    def corner_arcs(self, q, z):
        d = q.shape[1]
        base = np.clip(np.floor((q - self.lo) / self.h).astype(np.int64), 0,
                       np.array(self.shape) - 2)
        best = np.full(len(q), -1, dtype=np.int64)
        bestval = np.full(len(q), np.inf)
        for m in range(2 ** d):
            off = np.array([(m >> k) & 1 for k in range(d)])
            flat = np.ravel_multi_index(tuple((base + off).T), self.shape)
            val = self.values[flat]
            # prefer corners inside the sublevel set, then the lowest
            score = np.where(val <= z, val - 1e9, val)
            better = score < bestval
            best[better] = flat[better]
            bestval[better] = score[better]
        return self.arc[best]


def build_reeb_separable(field, reeb_F=None, resolution=256, criticals_F=None, probes=64):
    """Lift the join tree of ``F`` to ``H = |p|^2/2 + F(q)``.

    ``reeb_F`` may pass a precomputed :class:`_JoinTreeF`; otherwise the join
    tree of the potential is computed on a ``resolution`` grid.
    """
    tag = field.separable
    if tag is None:
        raise UnsupportedKinetic(f"{field.name} carries no separable tag")
    rng = np.random.default_rng(0)
    x = field.uniform(rng, probes)
    kin = field(x) - tag.potential(x[:, tag.dp:])
    if np.abs(kin - 0.5 * np.sum(x[:, :tag.dp] ** 2, axis=1)).max() > 1e-10:
        raise UnsupportedKinetic("kinetic part is not |p|^2/2")
    if tag.dp < 2:
        raise PDimTooSmall("d_p = 1: level-set fibres are disconnected")
    pot = tag.potential
    if criticals_F is None:
        criticals_F = find_critical_points(pot)
    crits = [c for c in criticals_F if c.value < field.z_max]
    jt = reeb_F if reeb_F is not None else _JoinTreeF(pot, resolution, crits, field.z_max)
    kids = defaultdict(list)
    for v, p in jt.parent.items():
        if p is not None and v in jt.match:
            kids[p].append(v)
    for v in jt.nodes:
        if len(kids[v]) > 2:
            raise NotATree(f"degenerate merge of {len(kids[v])} components")
    used = set(jt.match.values())
    inserts = defaultdict(list)
    for k, c in enumerate(crits):
        if k in used:
            continue
        if c.index == 0:
            raise VertexCountMismatch(f"minimum of F at {c.location} missing from join tree")
        a0 = jt.corner_arcs(c.location[None, :], c.value)[0]
        inserts[jt.arc_at(int(a0), c.value - 1e-12)].append(k)

    dp = tag.dp

    def lifted(c):
        loc = np.concatenate([np.zeros(dp), c.location])
        ev = np.sort(np.concatenate([np.ones(dp), c.eigenvalues]))
        return CriticalPoint(loc, c.value, c.index, ev)

    entries = [(crits[jt.match[v]].value, "node", v) for v in jt.nodes]
    entries += [(crits[k].value, "crit", k) for ks in inserts.values() for k in ks]
    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    vid = {}
    vertices = []
    for i, (z, kind, ref) in enumerate(entries):
        c = crits[jt.match[ref]] if kind == "node" else crits[ref]
        vid[(kind, ref)] = i
        vertices.append((i, c.value, lifted(c)))
    raw = []
    chains = {}
    for a in jt.nodes:
        p = jt.parent[a]
        mids = sorted(inserts.get(a, []), key=lambda k: crits[k].value)
        chain = [vid[("node", a)]] + [vid[("crit", k)] for k in mids] + \
                [None if p is None else vid[("node", p)]]
        chains[a] = chain
        raw.extend(zip(chain[:-1], chain[1:]))
    zs = {i: z for i, z, _ in vertices}
    raw.sort(key=lambda e: (zs[e[0]], e[0], np.inf if e[1] is None else zs[e[1]]))
    eid = {e: i for i, e in enumerate(raw)}
    chain_edges = {a: [eid[e] for e in zip(ch[:-1], ch[1:])] for a, ch in chains.items()}

    import weakref
    holder = {}

    def locator(x, z):
        z = np.asarray(z, dtype=float)
        arcs = jt.lift_arcs(jt.corner_arcs(x[:, dp:], z), z)
        return _resolve_chains(holder["g"](), chain_edges.__getitem__, arcs, z)

    graph = ReebGraph.from_structure(vertices, [(i, lo, up) for i, (lo, up) in enumerate(raw)],
                                     field.z_max, dim=field.dim, locator=locator, mode="separable")
    holder["g"] = weakref.ref(graph)
    graph._field = field
    graph.join_tree_F = jt
    return graph


def build_reeb(field, resolution=None, criticals=None):
    """Separable lift when possible, grid construction otherwise."""
    if field.separable is not None and field.separable.dp >= 2:
        return build_reeb_separable(field, resolution=resolution or 256)
    return build_reeb_grid(field, resolution=resolution or 512, criticals=criticals)


# ---------------------------------------------------------------------------
# fixtures

def figure2_fixture():
    """A 15-vertex, 15-edge tree with the vertex-type census of the classic example.

    Minima O5, O6, O11, O12, O14, O15; maximum O8; order-2 saddles O3, O9;
    merging saddles O1, O2, O4, O10, O13; splitting saddle O7.  ``x0`` sits on
    edge I1 (between O1 and O2).  Going from ``x0`` to O11 uses I7 at O2 and
    I11 at O10.
    """
    z = {1: 10.0, 2: 8.0, 3: 6.0, 4: 5.0, 5: 1.0, 6: 2.0, 7: 4.5, 8: 5.0, 9: 5.5,
         10: 4.0, 11: 0.0, 12: 1.5, 13: 7.0, 14: 3.0, 15: 2.5}
    vertices = [(k, z[k], None, f"O{k}") for k in range(1, 16)]
    edges = [
        (0, 1, None),
        (1, 2, 1), (2, 13, 1), (3, 10, 3), (4, 4, 2), (5, 5, 4), (6, 6, 4),
        (7, 3, 2), (8, 14, 13), (9, 9, 13), (10, 12, 10), (11, 11, 10),
        (12, 7, 9), (13, 7, 8), (14, 15, 7),
    ]
    return ReebGraph.from_structure(vertices, edges, z_max=12.0)


FIGURE2_X0 = GraphPoint(edge=1, z=9.0)
