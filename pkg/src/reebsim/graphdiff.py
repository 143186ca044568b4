"""Diffusion on the Reeb graph with gluing conditions at the vertices.

Inside an edge ``z`` follows the Ito equation of the averaged generator.
Near an interior vertex the process is advanced by one excursion: the exit
edge is drawn from the harmonic measure of a local star problem and the clock
is advanced by an exponential time with the solved mean exit time.

Star problems are discretised by an exponentially fitted finite volume scheme
in the distance ``s = |z - z_O|`` on graded meshes.  Writing the generator as
``v l u = (A u_s)_s + B u_s`` with ``A = delta h / 2`` and
``B = sigma side (b_hat + delta beta_hat)`` (``sigma = +1`` above the vertex),
the face flux ``A u_s + B u`` uses Bernoulli weights, so constants are exact
and the drift-dominated limit stays stable.  The gluing condition
``sum_k gamma_k D_k u(O) = 0`` enters as flux balance in the vertex cell.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import rng as rngmod
from .errors import ClockStall, CoefficientGap, ConfigInvalid, SolverSingular


def bernoulli(x):
    """``x / (exp(x) - 1)`` with the removable singularity filled in."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    with np.errstate(over="ignore", invalid="ignore"):
        out = x / np.expm1(np.where(small, 1.0, x))
    return np.where(small, 1.0 - 0.5 * x, out)


@dataclass
class StarProblem:
    """Local Dirichlet problems on the ``h_v``-star of an interior vertex."""

    graph: object
    tables: dict
    vertex: int
    h_v: float
    delta: float
    n_mesh: int = 400
    edges: list = dc_field(init=False)
    sigma: dict = dc_field(init=False)
    s: np.ndarray = dc_field(init=False)

    def __post_init__(self):
        vtx = self.graph.vertex(self.vertex)
        if vtx.exterior:
            raise SolverSingular(f"vertex {self.vertex} is exterior")
        self.z_O = vtx.z
        self.edges = list(self.graph.incident_edges(self.vertex))
        self.sigma = {e: (1.0 if self.graph.edge(e).lower == self.vertex else -1.0)
                      for e in self.edges}
        M = self.n_mesh
        self.s = self.h_v * (np.arange(M + 1) / M) ** 2
        for e in self.edges:
            t = self.tables[e]
            z_far = self.z_O + self.sigma[e] * self.h_v
            if not (t.z_lo <= z_far <= t.z_hi):
                raise CoefficientGap(f"star of radius {self.h_v} leaves edge {e}")
        self._assemble()
        self._prob = None
        self._time = None

    def _z(self, e, s):
        return self.z_O + self.sigma[e] * s

    def _assemble(self):
        M = self.n_mesh
        K = len(self.edges)
        n = 1 + K * (M - 1)
        s = self.s
        mid = 0.5 * (s[1:] + s[:-1])
        ds = np.diff(s)
        rows, cols, vals = [], [], []
        self._bnd = {}
        self._vol = np.zeros(n)

        def idx(k, j):
            return 0 if j == 0 else 1 + k * (M - 1) + (j - 1)

        for k, e in enumerate(self.edges):
            t = self.tables[e]
            sg = self.sigma[e]
            zf = self._z(e, mid)
            A = 0.5 * self.delta * np.asarray(t.h(zf))
            B = sg * t.side * (np.asarray(t.b_hat(zf)) + self.delta * np.asarray(t.beta_hat(zf)))
            if np.any(~np.isfinite(A)) or np.any(A <= 0):
                raise SolverSingular(f"non-positive diffusion on edge {e} near vertex "
                                     f"{self.vertex}")
            pe = B * ds / A
            wp = A / ds * bernoulli(-pe)  # coefficient of u_{j+1} in J_{j+1/2}
            wm = A / ds * bernoulli(pe)   # coefficient of u_j
            # cell volumes in the V-measure between face midpoints
            Vm = np.asarray(t.V(zf))
            V0 = float(t.V(self.z_O + sg * 1e-14 * max(1.0, abs(self.z_O))))
            edges_v = np.concatenate([[V0], Vm])
            cellv = np.abs(np.diff(edges_v))
            self._vol[0] += cellv[0]
            self._vol[1 + k * (M - 1):1 + (k + 1) * (M - 1)] += cellv[1:M]
            for j in range(M):
                # face j+1/2 between nodes j and j+1
                a, b = j, j + 1
                # contribution of J_{j+1/2} to node a (outgoing: +J) and b (incoming: -J)
                for node, sgn in ((a, 1.0), (b, -1.0)):
                    if node == M:
                        continue
                    r = idx(k, node)
                    if node == 0:
                        # vertex cell: J_{1/2} - B_{1/2} u_0
                        rows += [r, r]
                        cols += [idx(k, 1) if M > 1 else -1, 0]
                        vals += [wp[0], -wm[0] - B[0]]
                        continue
                    cu = wp[j] * sgn
                    cv = -wm[j] * sgn
                    # B' u term: -(B_{j+1/2} - B_{j-1/2}) u_j split over the faces
                    extra = -B[j] * sgn
                    if b == M:
                        self._bnd.setdefault(k, []).append((r, cu))
                    else:
                        rows.append(r)
                        cols.append(idx(k, b))
                        vals.append(cu)
                    rows.append(r)
                    cols.append(idx(k, a))
                    vals.append(cv)
                    rows.append(r)
                    cols.append(r)
                    vals.append(extra)
        keep = [i for i, c in enumerate(cols) if c >= 0]
        A = sp.coo_matrix((np.asarray(vals)[keep], (np.asarray(rows)[keep],
                                                    np.asarray(cols)[keep])), shape=(n, n))
        try:
            self._lu = splu(A.tocsc())
        except RuntimeError as exc:
            raise SolverSingular(f"star matrix at vertex {self.vertex} is singular") from exc
        self._n = n

    def _node_values(self, sol):
        M = self.n_mesh
        out = {}
        for k, e in enumerate(self.edges):
            u = np.empty(M + 1)
            u[0] = sol[0]
            u[1:M] = sol[1 + k * (M - 1):1 + (k + 1) * (M - 1)]
            out[e] = u
        return out

    def solve_probabilities(self):
        """Harmonic measure: ``{target edge: {edge: u on its mesh}}``."""
        if self._prob is None:
            self._prob = {}
            M = self.n_mesh
            for k, e in enumerate(self.edges):
                rhs = np.zeros(self._n)
                for r, c in self._bnd.get(k, []):
                    rhs[r] -= c
                sol = self._lu.solve(rhs)
                if not np.all(np.isfinite(sol)):
                    raise SolverSingular(f"exit problem at vertex {self.vertex} did not solve")
                vals = self._node_values(sol)
                for e2 in self.edges:
                    vals[e2][M] = 1.0 if e2 == e else 0.0
                self._prob[e] = vals
        return self._prob

    def solve_time(self):
        """Mean exit time ``w`` with ``l w = -1`` and ``w = 0`` on the boundary."""
        if self._time is None:
            sol = self._lu.solve(-self._vol)
            if not np.all(np.isfinite(sol)) or np.min(sol) < -1e-12 * max(1.0, np.max(sol)):
                raise ClockStall(f"mean exit time at vertex {self.vertex} failed")
            vals = self._node_values(sol)
            for e in self.edges:
                vals[e][self.n_mesh] = 0.0
            self._time = vals
        return self._time

    def _interp(self, vals, edge, z):
        s = np.clip(np.abs(np.asarray(z, dtype=float) - self.z_O), 0.0, self.h_v)
        return np.interp(s, self.s, vals[edge])

    def probabilities(self, edge=None, z=None):
        """Exit probabilities per edge from the vertex or from ``(edge, z)``."""
        P = self.solve_probabilities()
        if edge is None:
            return {e: float(P[e][self.edges[0]][0]) for e in self.edges}
        return {e: self._interp(P[e], edge, z) for e in self.edges}

    def mean_time(self, edge=None, z=None):
        w = self.solve_time()
        if edge is None:
            return float(w[self.edges[0]][0])
        return self._interp(w, edge, z)


def vertex_exit_distribution(graph, tables, delta, vertex, h_v, n_mesh=400):
    """Exit probabilities from the vertex through ``|z - z_O| = h_v`` per edge."""
    return StarProblem(graph, tables, vertex, h_v, delta, n_mesh).probabilities()


def mean_exit_time(graph, tables, delta, vertex, h_v, y=None, n_mesh=400):
    """Mean exit time from the star; ``y`` is a ``GraphPoint`` or ``None`` for the vertex."""
    star = StarProblem(graph, tables, vertex, h_v, delta, n_mesh)
    if y is None:
        return star.mean_time()
    return float(star.mean_time(y.edge, y.z))


# simulation ---------------------------------------------------------------

@dataclass
class GraphDiffusionConfig:
    delta: float
    T: float
    dt: float
    h_v: float
    start: object
    seed: int = 0
    n_mesh: int = 400

    def problems(self, graph=None, tables=None):
        out = []
        for name in ("delta", "T", "dt", "h_v"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        if graph is not None and self.h_v > 0:
            closed = [e.z_hi - e.z_lo for e in graph.edges if e.upper is not None
                      and e.lower is not None]
            if closed and self.h_v >= 0.5 * min(closed):
                out.append(f"h_v = {self.h_v} is not below half the shortest edge "
                           f"({0.5 * min(closed):.4g})")
        if tables is not None and graph is not None and not out:
            worst = 0.0
            for e in graph.edges:
                t = tables[e.id]
                L = t.z_hi - t.z_lo
                z = t.z_lo + L * np.linspace(0.05, 0.95, 19)
                drift = np.max(np.abs(t.drift(z, self.delta)))
                diff = np.max(np.abs(t.diffusion(z, self.delta)))
                worst = max(worst, self.dt * drift + np.sqrt(self.dt * diff))
            if worst >= self.h_v / 5:
                out.append(f"dt = {self.dt} moves z by {worst:.3g} per step, not below h_v/5")
        return out

    def validate(self, graph=None, tables=None):
        probs = self.problems(graph, tables)
        if probs:
            raise ConfigInvalid(probs)
        return self


@dataclass
class GraphPath:
    t: np.ndarray
    edge: np.ndarray
    z: np.ndarray
    events: list = dc_field(default_factory=list)


class GraphDiffusion:
    """Vectorised simulator of the graph diffusion for one set of coefficients."""

    def __init__(self, graph, tables, delta, h_v, n_mesh=400, grid_points=4097):
        self.graph = graph
        self.tables = tables
        self.delta = float(delta)
        self.h_v = float(h_v)
        self.stars = {v.id: StarProblem(graph, tables, v.id, h_v, delta, n_mesh)
                      for v in graph.interior_vertices()}
        self.grids = {e.id: self._grid(tables[e.id], grid_points) for e in graph.edges}

    def _grid(self, tab, n):
        """Drift and variance on a grid clustered at both ends, for linear interpolation."""
        s = np.linspace(1e-7, 1 - 1e-7, n)
        z = tab.z_lo + (tab.z_hi - tab.z_lo) * (0.5 - 0.5 * np.cos(np.pi * s))
        mu = np.asarray(tab.drift(z, self.delta), dtype=float)
        var = np.maximum(np.asarray(tab.diffusion(z, self.delta), dtype=float), 0.0)
        return z, mu, var

    def _entering(self, edges, z, live):
        """``{path index: vertex id}`` for live paths inside an entry ball (radius h_v/2)."""
        out = {}
        for vid, star in self.stars.items():
            m = live & np.isin(edges, star.edges) & (np.abs(z - star.z_O) < 0.5 * self.h_v)
            for k in np.flatnonzero(m):
                out[int(k)] = vid
        return out

    def run(self, start_edges, start_z, T, dt, seed, offset=0, record_every=0, block=1024,
            stop_band=None):
        """Advance ``n`` independent paths to time ``T``.

        Path ``k`` draws from substream ``offset + k``.  Returns final edges,
        z-values and, if requested, the record ``(t, edge, z)`` of the first
        path with its excursion events.  With ``stop_band = (lo, hi)`` a path
        freezes once ``z`` leaves ``(lo, hi)``; ``self.last_times`` holds the
        freezing (or final) times.
        """
        edges = np.array(start_edges, dtype=np.int64)
        z = np.array(start_z, dtype=float)
        n = edges.size
        t = np.zeros(n)
        gens = [rngmod.generator(seed, "graphdiff", offset + k) for k in range(n)]
        normals = np.empty((n, block))
        used = np.full(n, block)
        rec = [] if record_every else None
        events = []
        step = 0
        stopped = np.zeros(n, dtype=bool)
        while True:
            if stop_band is not None:
                stopped |= (z <= stop_band[0]) | (z >= stop_band[1])
            live = (t < T - 1e-12) & ~stopped
            if not live.any():
                break
            for k, vid in sorted(self._entering(edges, z, live).items()):
                star = self.stars[vid]
                probs = star.probabilities(int(edges[k]), float(z[k]))
                keys = list(probs)
                p = np.clip(np.array([float(probs[e]) for e in keys]), 0.0, None)
                g = gens[k]
                j = int(np.searchsorted(np.cumsum(p / p.sum()), g.random(), side="right"))
                nxt = keys[min(j, len(keys) - 1)]
                mean = float(star.mean_time(int(edges[k]), float(z[k])))
                t[k] += g.exponential(mean) if mean > 0 else 0.0
                edges[k] = nxt
                z[k] = star.z_O + star.sigma[nxt] * self.h_v
                live[k] = False
                if k == 0:
                    events.append((float(t[k]), vid, int(nxt)))
            idx = np.flatnonzero(live)
            for k in idx[used[idx] >= block]:
                normals[k] = gens[k].standard_normal(block)
                used[k] = 0
            xi = normals[idx, used[idx]]
            used[idx] += 1
            for eid in np.unique(edges[idx]):
                pos = edges[idx] == eid
                sel = idx[pos]
                zg, mug, varg = self.grids[int(eid)]
                zz = z[sel]
                mu = np.interp(zz, zg, mug)
                var = np.interp(zz, zg, varg)
                if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
                    raise CoefficientGap(f"coefficients undefined on edge {eid} at z = {zz}")
                h = np.minimum(dt, T - t[sel])
                znew = zz + mu * h + np.sqrt(var * h) * xi[pos]
                e = self.graph.edge(int(eid))
                # exterior ends and the ceiling reflect
                if e.lower is not None and self.graph.vertex(e.lower).exterior:
                    znew = np.where(znew < e.z_lo, 2 * e.z_lo - znew, znew)
                if e.upper is None or self.graph.vertex(e.upper).exterior:
                    znew = np.where(znew > e.z_hi, 2 * e.z_hi - znew, znew)
                if np.any((znew < e.z_lo) | (znew > e.z_hi)):
                    raise CoefficientGap(f"path left edge {eid} without a vertex excursion; "
                                         "reduce dt")
                z[sel] = znew
                t[sel] += h
            step += 1
            if rec is not None and step % record_every == 0:
                rec.append((float(t[0]), int(edges[0]), float(z[0])))
        path = None
        if rec is not None:
            arr = np.array(rec) if rec else np.zeros((0, 3))
            path = GraphPath(arr[:, 0], arr[:, 1].astype(int), arr[:, 2], events)
        self.last_times = t
        return edges, z, path


def simulate_graph_diffusion(config, graph, tables, record_every=1):
    """One path of the graph diffusion from ``config.start``."""
    config.validate(graph, tables)
    sim = GraphDiffusion(graph, tables, config.delta, config.h_v, config.n_mesh)
    _, _, path = sim.run([config.start.edge], [config.start.z], config.T, config.dt,
                         config.seed, record_every=record_every)
    return path
