"""The double-limit process on the graph and its limiting distribution.

Inside an edge ``z`` follows ``dz/dt = b_bar(z)``; at a vertex with two exit
edges the path branches at once with the volume-ratio probabilities and
continues without delay.  Exterior vertices and attracting zeros of
``b_hat`` are approached but never reached.
"""

import json
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import solve_ivp

from . import rng as rngmod
from .coeffs import edge_roots, fit_crossings, flow_direction, next_stop, stable_set
from .errors import EmptyShell, StuckAtZero

VERTEX_TOL = 1e-8
ASYMPTOTIC_TOL = 1e-10


@dataclass
class Segment:
    edge: int
    t: np.ndarray
    z: np.ndarray


@dataclass
class LimitPath:
    segments: list
    branches: list
    status: str  # "converged", "active" or "stopped"
    target: tuple | None = None
    t_end: float = 0.0

    def rows(self):
        out = []
        for seg in self.segments:
            out += [(float(t), seg.edge, float(z)) for t, z in zip(seg.t, seg.z)]
        return out


@dataclass
class LimitDistribution:
    start: object
    targets: list
    T0: float = float("nan")
    transit: dict = dc_field(default_factory=dict)

    def probabilities(self):
        return {t.key(): t.probability for t in self.targets}

    def to_dict(self):
        return {"start": {"edge": self.start.edge, "z": self.start.z}, "T0": self.T0,
                "targets": [dict(t.to_dict(), transit_time=self.transit.get(t.key()))
                            for t in self.targets]}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str)
        if path:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


class LimitFlow:
    """Deterministic flow with branching for fixed tables and classifications."""

    def __init__(self, graph, tables, classifications, rtol=1e-10, atol=1e-13):
        self.graph = graph
        self.tables = tables
        self.cls = classifications
        self.rtol = rtol
        self.atol = atol
        self._roots = {eid: edge_roots(t) for eid, t in tables.items()}
        # unresolved fit crossings only matter as stalls short of an exterior vertex
        self._noise = {eid: sorted(set(fit_crossings(t)) - set(self._roots[eid]))
                       for eid, t in tables.items()}
        self._cache = {}

    def segment(self, eid, z0, t0, T):
        # the flow is deterministic, so paths sharing a branch history share segments
        key = (eid, float(z0), float(t0), float(T))
        if key not in self._cache:
            self._cache[key] = self._segment(eid, z0, t0, T)
        return self._cache[key]

    def _segment(self, eid, z0, t0, T):
        """Integrate along one edge; returns ``(Segment, stop, kind)``.

        ``kind`` is ``"vertex"`` (an interior vertex was hit), ``"target"``
        (converged to an exterior vertex or an attracting zero), or ``"time"``.
        """
        tab = self.tables[eid]
        e = self.graph.edge(eid)
        direction = flow_direction(tab, z0)
        if direction == 0:
            return Segment(eid, np.array([t0]), np.array([z0])), ("level", z0), "target"
        root = next_stop(tab, z0, direction, self._roots[eid])
        if root is not None:
            stop, kind, tol = ("level", root), "target", ASYMPTOTIC_TOL
            z_stop = root
        else:
            vid = e.upper if direction > 0 else e.lower
            if vid is None:
                z_stop, stop, kind, tol = e.z_hi, ("ceiling", None), "target", VERTEX_TOL
            else:
                z_stop = self.graph.vertex(vid).z
                exterior = self.graph.vertex(vid).exterior
                stop = ("vertex", vid)
                kind = "target" if exterior else "vertex"
                tol = ASYMPTOTIC_TOL if exterior else VERTEX_TOL
                if exterior:
                    stall = next_stop(tab, z0, direction, self._noise[eid])
                    if stall is not None:
                        z_stop = stall

        def rhs(t, y):
            return [tab.b_bar(float(y[0]))]

        def hit(t, y):
            return (z_stop - y[0]) * direction - tol
        hit.terminal = True
        sol = solve_ivp(rhs, (t0, T), [z0], events=hit, rtol=self.rtol, atol=self.atol,
                        dense_output=True, method="LSODA")
        t = sol.t
        z = sol.y[0]
        seg = Segment(eid, t, z)
        if sol.status == 1:
            return seg, stop, kind
        if abs(tab.b_bar(float(z[-1]))) < 1e-14 and abs(z[-1] - z_stop) > 1e-6:
            raise StuckAtZero(f"flow stalls at z = {z[-1]} on edge {eid}")
        return seg, stop, "time"

    def run(self, y0, T, draw=None, choices=None, t0=0.0):
        """One path from ``y0`` up to time ``T``.

        Branches use ``choices[vertex]`` when given, else ``draw()`` uniforms.
        """
        eid, z, t = y0.edge, float(y0.z), t0
        segments, branches = [], []
        visited = set()
        while True:
            seg, stop, kind = self.segment(eid, z, t, T)
            segments.append(seg)
            t = float(seg.t[-1])
            z = float(seg.z[-1])
            if kind == "time":
                return LimitPath(segments, branches, "active", None, t)
            if kind == "target":
                return LimitPath(segments, branches, "converged", stop, t)
            vid = stop[1]
            if vid in visited:
                return LimitPath(segments, branches, "stopped", stop, t)
            visited.add(vid)
            cls = self.cls[vid]
            exits = [x for x in cls.exits if x != eid] or list(cls.exits)
            if len(exits) == 1:
                nxt = exits[0]
            elif choices is not None and vid in choices:
                nxt = choices[vid]
            else:
                u = draw()
                acc = 0.0
                nxt = exits[-1]
                for x in exits:
                    acc += cls.probabilities[x]
                    if u < acc:
                        nxt = x
                        break
                branches.append((vid, nxt, u))
            vz = self.graph.vertex(vid).z
            up = self.graph.edge(nxt).lower == vid
            eid = nxt
            z = vz + (VERTEX_TOL if up else -VERTEX_TOL) * 2


def simulate_limit(graph, tables, classifications, y0, T, seed=0, index=0, flow=None):
    """One path of the limit process; branch draws come from the ``limit`` substream."""
    flow = flow or LimitFlow(graph, tables, classifications)
    g = rngmod.generator(seed, "limit", index)
    return flow.run(y0, T, draw=g.random)


def branching_frequencies(graph, tables, classifications, y0, n, seed=0, T=1e6):
    """Empirical target frequencies of ``n`` limit paths."""
    flow = LimitFlow(graph, tables, classifications)
    counts = {}
    for k in range(n):
        p = simulate_limit(graph, tables, classifications, y0, T, seed, k, flow)
        key = _target_key(p.target)
        counts[key] = counts.get(key, 0) + 1
    return counts


def _target_key(stop):
    if stop is None:
        return None
    if stop[0] == "vertex":
        return ("vertex", stop[1])
    return stop


def limit_distribution(graph, tables, classifications, y0, T_transit=1e4, eps_target=1e-3):
    """Exact target probabilities from the stable set, with transit times."""
    ss = stable_set(graph, tables, classifications, y0)
    flow = LimitFlow(graph, tables, classifications)
    transit = {}
    for tgt in ss.targets:
        choices = {v: e for v, e, _ in tgt.branches}
        path = flow.run(y0, T_transit, choices=choices)
        tt = float("nan")
        for seg in path.segments:
            close = np.flatnonzero(np.abs(seg.z - tgt.z) < eps_target)
            if seg.edge == tgt.edge and close.size:
                k = close[0]
                if k > 0:
                    # refine on the dense segment by linear interpolation
                    z0, z1 = seg.z[k - 1] - tgt.z, seg.z[k] - tgt.z
                    s = np.sign(z0) * eps_target
                    frac = (z0 - s) / (z0 - z1) if z0 != z1 else 1.0
                    tt = float(seg.t[k - 1] + frac * (seg.t[k] - seg.t[k - 1]))
                else:
                    tt = float(seg.t[0])
                break
        if not np.isfinite(tt) and path.status == "converged":
            # stalled short of the vertex inside the unresolved noise band
            tt = path.t_end
        transit[tgt.key()] = tt
    finite = [v for v in transit.values() if np.isfinite(v)]
    return LimitDistribution(y0, ss.targets, max(finite) if finite else float("nan"), transit)


def expected_observable(graph, field, distribution, f, mc_samples=200_000, seed=0,
                        shell=1e-3, batch=200_000):
    """Target-weighted average of ``f``; returns ``(value, standard error)``.

    Exterior vertices are point masses at the critical point.  Interior levels
    use uniform samples of the thin shell ``|H - z| < shell`` on the target
    component, which have the invariant ``1/|grad H|`` surface density.
    """
    total = 0.0
    var = 0.0
    for k, tgt in enumerate(distribution.targets):
        if tgt.kind == "vertex":
            vtx = graph.vertex(tgt.vertex)
            if vtx.critical is None:
                raise EmptyShell(f"vertex {tgt.vertex} has no critical point attached")
            val = float(np.asarray(f(np.asarray(vtx.critical.location)[None, :]))[0])
            total += tgt.probability * val
            continue
        vals = []
        drawn = 0
        j = 0
        while drawn < mc_samples:
            g = rngmod.generator(seed, "observable", k * 100_000 + j)
            nb = min(batch, mc_samples - drawn)
            x = field.uniform(g, nb)
            H = field(x)
            x = x[np.abs(H - tgt.z) < shell]
            if x.size:
                _, e = graph.locate(x, field)
                x = x[e == tgt.edge]
                if x.size:
                    vals.append(np.asarray(f(x), dtype=float))
            drawn += nb
            j += 1
        if not vals or sum(v.size for v in vals) == 0:
            raise EmptyShell(f"no samples within {shell} of level {tgt.z} on edge {tgt.edge}")
        v = np.concatenate(vals)
        total += tgt.probability * float(v.mean())
        var += (tgt.probability ** 2) * float(v.var(ddof=1) / v.size) if v.size > 1 else 0.0
    return total, float(np.sqrt(var))
