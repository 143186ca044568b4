"""Averaged coefficients on the Reeb graph.

For every edge ``i`` the region ``G_i(z)`` bounded by the level component
``C_i(z)`` is the preimage of the part of the tree cut off by ``(z, i)``.
Volumes and divergence integrals over ``G_i(z)`` are estimated from one shared
pool of uniform samples in the bounding box; per-edge cumulative sums make
every z-row cheap and keep the estimates exactly additive at vertices.

Each raw column is smoothed by a weighted least-squares fit whose basis has
the known vertex behaviour built in: an envelope ``t^(d/2)`` at exterior
vertices and ``t^(d/2) ln t`` terms at interior ones.  Densities ``v = |V'|``
and ``h'`` are derivatives of these fits.
"""

import csv
import json
import os
from dataclasses import dataclass, field as dc_field

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.optimize import brentq

from . import rng as rngmod
from .errors import (AmbiguousSign, AssumptionA6Violated, AssumptionA8Violated, CycleDetected,
                     DegenerateDiffusion, EmptyDomain, ExtrapolationUnstable)
from .perturbations import IsotropicDiffusion, LinearDrift

QUANTITIES = ("V", "h", "b_hat", "beta_hat")
CSV_COLUMNS = ("edge", "z", "V", "v", "h", "b_hat", "beta_hat", "a2_bar", "b_bar", "beta_bar",
               "V_se", "h_se", "b_hat_se", "beta_hat_se")


# fits ---------------------------------------------------------------------

class SingularFit:
    """Linear model in ``t = (z - z_lo)/L`` with vertex-aware basis functions.

    ``lo_kind``/``hi_kind`` are ``"exterior"``, ``"interior"`` or ``"open"``.
    """

    def __init__(self, z_lo, z_hi, lo_kind, hi_kind, m, degree, coef=None, log=True):
        self.z_lo = float(z_lo)
        self.z_hi = float(z_hi)
        self.L = self.z_hi - self.z_lo
        self.lo_kind = lo_kind
        self.hi_kind = hi_kind
        self.m = float(m)
        self.degree = int(degree)
        self.log = bool(log)
        self.coef = None if coef is None else np.asarray(coef, dtype=float)
        dmat = np.zeros((degree + 1, degree + 1))
        for k in range(degree + 1):
            e = np.zeros(degree + 1)
            e[k] = 1.0
            d = cheb.chebder(e)
            dmat[:d.size, k] = d
        self._dmat = dmat

    def _sing(self, s):
        m = self.m
        ls = np.log(s) if self.log else np.ones_like(s)
        g = np.stack([s ** m * ls, s ** (m + 1) * ls], axis=-1)
        if self.log:
            dg = np.stack([m * s ** (m - 1) * ls + s ** (m - 1),
                           (m + 1) * s ** m * ls + s ** m], axis=-1)
        else:
            dg = np.stack([m * s ** (m - 1), (m + 1) * s ** m], axis=-1)
        return g, dg

    def design(self, z):
        """Basis values and their z-derivatives, each of shape ``(n, p)``."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        t = np.clip((z - self.z_lo) / self.L, 1e-300, 1.0)
        u = np.clip(1.0 - t, 1e-300, 1.0)
        m = self.m
        env = np.ones_like(t)
        denv = np.zeros_like(t)
        if self.lo_kind == "exterior":
            env, denv = t ** m, m * t ** (m - 1)
        if self.hi_kind == "exterior":
            env, denv = env * u ** m, denv * u ** m - env * m * u ** (m - 1)
        x = 2.0 * t - 1.0
        T = cheb.chebvander(x, self.degree)
        dT = 2.0 * T @ self._dmat
        cols = [env[:, None] * T]
        dcols = [denv[:, None] * T + env[:, None] * dT]
        if self.lo_kind == "interior":
            g, dg = self._sing(t)
            cols.append(g)
            dcols.append(dg)
        if self.hi_kind == "interior":
            g, dg = self._sing(u)
            cols.append(g)
            dcols.append(-dg)
        return np.concatenate(cols, axis=1), np.concatenate(dcols, axis=1) / self.L

    def fit(self, zb, dy, var, anchor=None):
        """Weighted least squares on bin increments.

        ``dy[k]`` estimates ``f(zb[k+1]) - f(zb[k])`` with variance ``var[k]``;
        ``anchor = (z, value, variance)`` pins the absolute level.  Increments
        over disjoint bins are independent, unlike cumulative rows.
        """
        B, _ = self.design(zb)
        D = B[1:] - B[:-1]
        rows, rhs, sd = [D], [np.asarray(dy, dtype=float)], [np.sqrt(var)]
        if anchor is not None:
            Ba, _ = self.design(anchor[0])
            rows.append(Ba)
            rhs.append(np.atleast_1d(float(anchor[1])))
            sd.append(np.atleast_1d(np.sqrt(anchor[2])))
        M = np.vstack(rows)
        y = np.concatenate(rhs)
        if not np.any(y):
            self.coef = np.zeros(M.shape[1])
            return self
        w = 1.0 / np.concatenate(sd)
        A = M * w[:, None]
        scale = np.linalg.norm(A, axis=0)
        scale[scale == 0] = 1.0
        c, *_ = np.linalg.lstsq(A / scale, y * w, rcond=None)
        self.coef = c / scale
        return self

    def increments(self, zb):
        B, _ = self.design(zb)
        return (B[1:] - B[:-1]) @ self.coef

    def __call__(self, z):
        B, _ = self.design(z)
        out = B @ self.coef
        return out if np.ndim(z) else float(out[0])

    def deriv(self, z):
        _, dB = self.design(z)
        out = dB @ self.coef
        return out if np.ndim(z) else float(out[0])

    def to_dict(self):
        return {"z_lo": self.z_lo, "z_hi": self.z_hi, "lo_kind": self.lo_kind,
                "hi_kind": self.hi_kind, "m": self.m, "degree": self.degree,
                "log": self.log, "coef": self.coef.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["z_lo"], d["z_hi"], d["lo_kind"], d["hi_kind"], d["m"], d["degree"],
                   d["coef"], d.get("log", True))


class AnalyticCurve:
    """Closed-form stand-in for :class:`SingularFit`."""

    def __init__(self, f, df=None):
        self.f = f
        self.df = df

    def __call__(self, z):
        out = np.asarray(self.f(np.asarray(z, dtype=float)), dtype=float)
        return out if np.ndim(z) else float(out)

    def deriv(self, z):
        if self.df is None:
            zz = np.asarray(z, dtype=float)
            step = 1e-6 * np.maximum(1.0, np.abs(zz))
            out = (self.f(zz + step) - self.f(zz - step)) / (2 * step)
        else:
            out = self.df(np.asarray(z, dtype=float))
        out = np.asarray(out, dtype=float)
        return out if np.ndim(z) else float(out)


# tables -------------------------------------------------------------------

@dataclass
class EdgeCoefficientTable:
    """Averaged coefficients along one edge.

    ``raw`` holds the Monte Carlo columns and their standard errors on the
    grid ``z``; ``fits`` maps each quantity to a smooth curve.  ``h`` is
    signed so that it is positive (it is the flux of ``a2 grad H`` through
    the level surface along the outward normal of ``G_i``); ``b_hat`` and
    ``beta_hat`` are the plain divergence integrals over ``G_i``.
    """

    edge: int
    side: int
    z_lo: float
    z_hi: float
    lo_kind: str
    hi_kind: str
    z: np.ndarray
    raw: dict
    fits: dict
    n_samples: int = 0
    window: dict = dc_field(default_factory=dict)

    def V(self, z):
        return self.fits["V"](z)

    def v(self, z):
        return self.side * self.fits["V"].deriv(z)

    def h(self, z):
        return self.fits["h"](z)

    def dh(self, z):
        return self.fits["h"].deriv(z)

    def b_hat(self, z):
        return self.fits["b_hat"](z)

    def beta_hat(self, z):
        return self.fits["beta_hat"](z)

    def a2_bar(self, z):
        return self.h(z) / self.v(z)

    def b_bar(self, z):
        return self.side * self.b_hat(z) / self.v(z)

    def beta_bar(self, z):
        return self.side * self.beta_hat(z) / self.v(z)

    def drift(self, z, delta):
        """Ito drift of ``z`` on this edge for noise intensity ``delta``."""
        v = self.v(z)
        return (delta * self.dh(z) / (2.0 * v) + self.side * (self.b_hat(z)
                + delta * self.beta_hat(z)) / v)

    def diffusion(self, z, delta):
        """Variance rate ``delta h / v``."""
        return delta * self.h(z) / self.v(z)

    def end_value(self, name, end):
        """Fitted value of ``name`` at the lower (``"lo"``) or upper end."""
        return float(self.fits[name](self.z_lo if end == "lo" else self.z_hi))

    def rows(self):
        z = self.z
        v = self.v(z)
        r = self.raw
        hf, bf, betaf = self.h(z), self.b_hat(z), self.beta_hat(z)
        cols = {
            "edge": np.full(z.size, self.edge), "z": z, "V": r["V"], "v": v, "h": r["h"],
            "b_hat": r["b_hat"], "beta_hat": r["beta_hat"], "a2_bar": hf / v,
            "b_bar": self.side * bf / v, "beta_bar": self.side * betaf / v,
            "V_se": r["V_se"], "h_se": r["h_se"], "b_hat_se": r["b_hat_se"],
            "beta_hat_se": r["beta_hat_se"]}
        return [[cols[c][k] for c in CSV_COLUMNS] for k in range(z.size)]

    def meta(self):
        return {"edge": self.edge, "side": self.side, "z_lo": self.z_lo, "z_hi": self.z_hi,
                "lo_kind": self.lo_kind, "hi_kind": self.hi_kind, "n_samples": self.n_samples,
                "window": {k: list(map(int, v)) for k, v in self.window.items()},
                "fits": {k: f.to_dict() for k, f in self.fits.items()
                         if isinstance(f, SingularFit)}}


def analytic_table(edge, side, z_lo, z_hi, V, h, b_hat, beta_hat=None, dV=None, dh=None,
                   lo_kind="exterior", hi_kind="open", z=None):
    """A table built from closed forms (used for fixtures and exact references)."""
    zero = lambda zz: np.zeros_like(np.asarray(zz, dtype=float))  # noqa: E731
    fits = {"V": AnalyticCurve(V, dV), "h": AnalyticCurve(h, dh), "b_hat": AnalyticCurve(b_hat),
            "beta_hat": AnalyticCurve(beta_hat or zero)}
    z = np.linspace(z_lo, z_hi, 11)[1:-1] if z is None else np.asarray(z, dtype=float)
    raw = {q: fits[q](z) for q in QUANTITIES}
    raw.update({q + "_se": np.zeros_like(z) for q in QUANTITIES})
    n = z.size
    window = {"lo": list(range(min(3, n))), "hi": list(range(max(0, n - 3), n))}
    return EdgeCoefficientTable(edge, side, float(z_lo), float(z_hi), lo_kind, hi_kind, z, raw,
                                fits, 0, window)


def end_kinds(graph, e):
    lo = "exterior" if e.lower is not None and graph.vertex(e.lower).exterior else "interior"
    if e.upper is None:
        hi = "open"
    else:
        hi = "exterior" if graph.vertex(e.upper).exterior else "interior"
    if e.lower is None:
        lo = "open"
    return lo, hi


def z_grid(z_lo, z_hi, n_uniform, refine_lo, refine_hi, ratio=0.7, levels=12):
    """Uniform interior points plus geometric refinement toward the ends."""
    L = z_hi - z_lo
    t = list(np.arange(1, n_uniform + 1) / (n_uniform + 1))
    t1 = 1.0 / (n_uniform + 1)
    lo_idx = ratio ** np.arange(1, levels + 1) * t1
    if refine_lo:
        t += list(lo_idx)
    if refine_hi:
        t += list(1.0 - lo_idx)
    return z_lo + L * np.unique(np.asarray(t))


def _sample_pool(graph, field, a2_model, b_model, beta_model, n_samples, seed, chunk):
    """Uniform box samples below ``z_max`` with their edge labels and weights."""
    Hs, Es, Ws = [], [], []
    n_done = 0
    k = 0
    while n_done < n_samples:
        n = min(chunk, n_samples - n_done)
        g = rngmod.generator(seed, "coeffs", k)
        x = field.uniform(g, n)
        H = field(x)
        keep = H < graph.z_max
        x, H = x[keep], H[keep]
        _, e = graph.locate(x, field)
        w = np.stack([np.ones_like(H), a2_model.flux_divergence(x, field),
                      b_model.divergence(x, field), beta_model.divergence(x, field)], axis=1)
        Hs.append(H)
        Es.append(np.asarray(e, dtype=np.int64))
        Ws.append(w)
        n_done += n
        k += 1
    return np.concatenate(Hs), np.concatenate(Es), np.concatenate(Ws)


def _edge_sums(graph, H, E, W, eid):
    sign, desc = graph.bounded_side(eid)
    in_desc = np.isin(E, np.fromiter(desc, dtype=np.int64, count=len(desc))) if desc else \
        np.zeros(E.size, dtype=bool)
    base = W[in_desc].sum(axis=0)
    base2 = (W[in_desc] ** 2).sum(axis=0)
    on = E == eid
    order = np.argsort(H[on], kind="stable")
    Hs = H[on][order]
    We = W[on][order]
    C = np.vstack([np.zeros(4), np.cumsum(We, axis=0)])
    C2 = np.vstack([np.zeros(4), np.cumsum(We ** 2, axis=0)])

    def sums(z):
        if sign > 0:
            k = np.searchsorted(Hs, z, side="left")
            return base + C[k], base2 + C2[k]
        k = np.searchsorted(Hs, z, side="right")
        return base + (C[-1] - C[k]), base2 + (C2[-1] - C2[k])
    return sign, Hs.size, sums


def tabulate_edges(graph, field, a2_model=None, b_model=None, beta_model=None,
                   z_points_per_edge=40, mc_samples=2_000_000, seed=0, refine_ratio=0.7,
                   refine_levels=12, fit_degree=6, fit_points=200, chunk=250_000, k_shrink=5.0):
    """Tabulate ``V, v, h, b_hat, beta_hat`` and the averaged coefficients per edge.

    All edges share one pool of ``mc_samples`` uniform box samples.  Returns a
    dict ``{edge id: EdgeCoefficientTable}``.
    """
    d = field.dim
    dp = field.separable.dp if field.separable is not None else 0
    a2_model = a2_model or IsotropicDiffusion(1.0)
    b_model = b_model or LinearDrift(dp=dp)
    beta_model = beta_model or LinearDrift(dp=dp)
    H, E, W = _sample_pool(graph, field, a2_model, b_model, beta_model, int(mc_samples), seed,
                           chunk)
    A = field.box_volume()
    N = float(mc_samples)
    m = d / 2.0
    tables = {}
    for e in graph.edges:
        lo_kind, hi_kind = end_kinds(graph, e)
        z_lo = e.z_lo
        z_hi = e.z_hi
        L = z_hi - z_lo
        sign, n_on, sums = _edge_sums(graph, H, E, W, e.id)
        if not np.isfinite(L) or L <= 1e-12 * max(1.0, abs(z_hi)) or n_on < 10:
            raise EmptyDomain(f"edge {e.id}: z-range [{z_lo}, {z_hi}] with {n_on} samples")
        z = z_grid(z_lo, z_hi, z_points_per_edge, lo_kind != "open", hi_kind != "open",
                   refine_ratio, refine_levels)
        zb = np.union1d(z, z_lo + L * np.arange(1, fit_points + 1) / (fit_points + 1))
        zb = np.concatenate([[z_lo], zb, [z_hi]])

        def estimate(zz):
            S, S2 = sums(zz)
            mean = S / N
            var = np.maximum(S2 / N - mean ** 2, 0.0)
            return A * mean, A * np.sqrt(var / N), S, S2
        val, se, _, _ = estimate(z)
        _, _, Sb, S2b = estimate(zb)
        dS = np.diff(Sb, axis=0)
        dS2 = np.abs(np.diff(S2b, axis=0))
        a_idx = 0 if sign > 0 else -1
        a_mean = Sb[a_idx] / N
        a_var = A ** 2 * np.maximum(S2b[a_idx] / N - a_mean ** 2, 0.0) / N
        # per-point second moments on the edge, used to shrink sparse bins
        count = np.abs(dS[:, 0])
        m2 = dS2.sum(axis=0) / max(count.sum(), 1.0)
        floor = (A / N) ** 2 * np.maximum(m2, 1e-300)
        scale = np.array([1.0, sign, 1.0, 1.0])
        raw = {}
        fits = {}
        for j, q in enumerate(QUANTITIES):
            raw[q] = val[:, j] * scale[j]
            raw[q + "_se"] = se[:, j]
        kinds = (z_lo, z_hi, lo_kind, hi_kind, m, fit_degree)
        log = d % 2 == 0
        dv = A * dS / N
        var1 = A ** 2 * np.maximum(dS2 / N - (dS / N) ** 2, 0.0) / N + floor
        anchor_z = z_lo if sign > 0 else z_hi
        vfit = SingularFit(*kinds, log=log).fit(zb, dv[:, 0], var1[:, 0],
                                                (anchor_z, A * a_mean[0], a_var[0] + floor[0]))
        dV = np.abs(vfit.increments(zb))
        for j, q in enumerate(QUANTITIES):
            ew2 = (dS2[:, j] + k_shrink * m2[j]) / (count + k_shrink)
            var2 = A * dV * ew2 / N + 1e-4 * floor[j]
            fits[q] = SingularFit(*kinds, log=log).fit(
                zb, dv[:, j] * scale[j], var2,
                (anchor_z, A * a_mean[j] * scale[j], a_var[j] + 1e-4 * floor[j]))
        bad = raw["h"] < -3.0 * raw["h_se"]
        if bad.any():
            raise DegenerateDiffusion(f"edge {e.id}: h <= 0 at z = {z[bad][:3]}")
        t1 = 1.0 / (z_points_per_edge + 1)
        window = {"lo": np.flatnonzero(z - z_lo <= t1 * L + 1e-15).tolist(),
                  "hi": np.flatnonzero(z_hi - z <= t1 * L + 1e-15).tolist()}
        tables[e.id] = EdgeCoefficientTable(e.id, sign, z_lo, z_hi, lo_kind, hi_kind, z, raw,
                                            fits, int(mc_samples), window)
    return tables


# gluing and additivity ----------------------------------------------------

def _end_rows(table, end, k=3):
    idx = np.asarray(table.window.get(end, []), dtype=int)
    if idx.size == 0:
        idx = np.arange(table.z.size)
    zO = table.z_lo if end == "lo" else table.z_hi
    dist = np.abs(table.z[idx] - zO)
    order = np.argsort(dist)[:k]
    return idx[order], dist[order]


def _extrapolate(dist, y):
    """Nearest, linear and quadratic extrapolations to distance zero."""
    ests = [y[0]]
    if len(y) >= 2:
        ests.append(y[0] - dist[0] * (y[1] - y[0]) / (dist[1] - dist[0]))
    if len(y) >= 3:
        ests.append(np.polyval(np.polyfit(dist[:3], y[:3], 2), 0.0))
    return np.array(ests)


def gluing_weights(tables, graph, max_spread=0.2):
    """``{vertex id: {edge id: gamma}}``; exterior vertices get ``gamma = 0``."""
    out = {}
    for vtx in graph.vertices:
        gam = {}
        for eid in graph.incident_edges(vtx.id):
            if vtx.exterior:
                gam[eid] = 0.0
                continue
            t = tables[eid]
            end = "lo" if graph.edge(eid).lower == vtx.id else "hi"
            idx, dist = _end_rows(t, end)
            ests = _extrapolate(dist, t.raw["h"][idx])
            best = ests[-1]
            spread = (ests.max() - ests.min()) / max(abs(best), 1e-300)
            if spread > max_spread or best <= 0:
                raise ExtrapolationUnstable(
                    f"vertex {vtx.id}, edge {eid}: estimates {ests} (spread {spread:.2f})")
            gam[eid] = float(best)
        out[vtx.id] = gam
    return out


def vertex_limits(tables, graph, vid, name):
    """Raw-row extrapolated ``name`` and its standard error on each edge at ``vid``."""
    res = {}
    for eid in graph.incident_edges(vid):
        t = tables[eid]
        end = "lo" if graph.edge(eid).lower == vid else "hi"
        idx, dist = _end_rows(t, end)
        y = t.raw[name][idx]
        res[eid] = (float(_extrapolate(dist, y)[-1]), float(t.raw[name + "_se"][idx[0]]))
    return res


def additivity(tables, graph, names=("V", "h", "b_hat")):
    """Residuals of the vertex additivity identities.

    For each vertex of order 3 returns ``{name: (residual, combined se)}`` where
    the residual is ``sum over upper edges - sum over lower edges`` of the
    signed contributions (zero when the domains add up).
    """
    out = {}
    for vtx in graph.vertices:
        if vtx.order != 3:
            continue
        rec = {}
        for name in names:
            lim = vertex_limits(tables, graph, vtx.id, name)
            res = 0.0
            var = 0.0
            for eid, (val, se) in lim.items():
                t = tables[eid]
                above = graph.edge(eid).lower == vtx.id
                signed = val if name == "h" else t.side * val
                res += signed if above else -signed
                var += se ** 2
            rec[name] = (res, float(np.sqrt(var)))
        out[vtx.id] = rec
    return out


# classification -----------------------------------------------------------

@dataclass
class VertexClassification:
    vertex: int
    entrance: tuple
    exits: tuple
    essential: bool
    gamma: dict
    probabilities: dict
    b_hat: dict

    def to_dict(self):
        return {"vertex": self.vertex, "entrance": list(self.entrance),
                "exits": list(self.exits), "essential": self.essential,
                "gamma": {str(k): v for k, v in self.gamma.items()},
                "probabilities": {str(k): v for k, v in self.probabilities.items()},
                "b_hat": {str(k): v for k, v in self.b_hat.items()}}


def _edge_sign_at(table, end, interior, vid, eid):
    """Sign of ``b_hat`` next to a vertex from the raw rows of the end window."""
    idx = np.asarray(table.window.get(end, []), dtype=int)
    y = table.raw["b_hat"][idx] if idx.size else np.array([])
    se = table.raw["b_hat_se"][idx] if idx.size else np.array([])
    sig = np.abs(y) > 2.0 * se
    if interior:
        if not sig.any():
            raise AssumptionA6Violated(f"b_hat = 0 within MC error at vertex {vid}, edge {eid}")
        s = np.sign(y[sig])
        if (s > 0).any() and (s < 0).any():
            raise AmbiguousSign(f"b_hat changes sign near vertex {vid} on edge {eid}")
        return float(s[0])
    zO = table.z_lo if end == "lo" else table.z_hi
    L = table.z_hi - table.z_lo
    probe = zO + (1e-3 if end == "lo" else -1e-3) * L
    return float(np.sign(table.b_hat(probe)))


def classify_vertices(graph, tables, gluing=None):
    """Entrance/exit edges, essential flags and branching probabilities."""
    if gluing is None:
        gluing = gluing_weights(tables, graph)
    out = {}
    for vtx in graph.vertices:
        ent, ex = [], []
        bh = {}
        for eid in graph.incident_edges(vtx.id):
            t = tables[eid]
            end = "lo" if graph.edge(eid).lower == vtx.id else "hi"
            sgn = _edge_sign_at(t, end, not vtx.exterior, vtx.id, eid)
            bh[eid] = t.end_value("b_hat", end)
            flow = t.side * sgn
            away = flow > 0 if end == "lo" else flow < 0
            (ex if away else ent).append(eid)
        probs = {}
        if len(ex) == 1:
            probs = {ex[0]: 1.0}
        elif len(ex) >= 2:
            mags = np.array([abs(bh[e]) for e in ex])
            probs = {e: float(mg / mags.sum()) for e, mg in zip(ex, mags)}
        out[vtx.id] = VertexClassification(vtx.id, tuple(ent), tuple(ex), len(ex) == 2,
                                           dict(gluing.get(vtx.id, {})), probs, bh)
    return out


# stable sets --------------------------------------------------------------

@dataclass
class Target:
    kind: str  # "vertex" or "level"
    vertex: int | None
    edge: int | None
    z: float
    probability: float
    essential: tuple
    branches: tuple
    edges: tuple

    def key(self):
        return ("vertex", self.vertex) if self.kind == "vertex" else ("level", self.edge,
                                                                      round(self.z, 12))

    def to_dict(self):
        return {"kind": self.kind, "vertex": self.vertex, "edge": self.edge, "z": self.z,
                "probability": self.probability, "essential": list(self.essential),
                "branches": [list(b) for b in self.branches], "edges": list(self.edges)}


@dataclass
class StableSet:
    start: object
    targets: list

    def probabilities(self):
        return {t.key(): t.probability for t in self.targets}

    def to_dict(self):
        return {"start": {"edge": self.start.edge, "z": self.start.z},
                "targets": [t.to_dict() for t in self.targets]}


def _resolved(table, r, k=2.0):
    """True when the nearest significant raw rows on each side of ``r`` differ in sign."""
    y = table.raw["b_hat"]
    sig = np.abs(y) > k * table.raw["b_hat_se"]
    left = np.flatnonzero(sig & (table.z < r))
    right = np.flatnonzero(sig & (table.z > r))
    if not left.size or not right.size:
        return False
    return np.sign(y[left[-1]]) * np.sign(y[right[0]]) < 0


def fit_crossings(table, n=2000, margin=1e-7):
    """All sign changes of the fitted ``b_hat``, refined by bisection."""
    L = table.z_hi - table.z_lo
    t = margin + (1 - 2 * margin) * (0.5 - 0.5 * np.cos(np.linspace(0, np.pi, n)))
    z = table.z_lo + L * t
    y = np.asarray(table.b_hat(z))
    return [brentq(lambda zz: table.b_hat(zz), z[k], z[k + 1], xtol=1e-14)
            for k in np.flatnonzero(np.sign(y[:-1]) * np.sign(y[1:]) < 0)]


def edge_roots(table, n=2000, margin=1e-7):
    """Zeros of ``b_hat`` inside the edge.

    Crossings of the fit that the raw rows do not resolve (noise next to a
    vertex) are dropped.
    """
    return [r for r in fit_crossings(table, n, margin) if _resolved(table, r)]


def flow_direction(table, z):
    """``+1`` when the averaged flow increases ``z`` at ``z``, ``-1`` otherwise."""
    return float(np.sign(table.side * table.b_hat(z)))


def next_stop(table, z, direction, roots=None):
    """First root of ``b_hat`` strictly ahead of ``z`` in ``direction`` or ``None``."""
    roots = edge_roots(table) if roots is None else roots
    ahead = [r for r in roots if (r - z) * direction > 1e-12]
    if not ahead:
        return None
    return min(ahead, key=lambda r: abs(r - z))


def stable_set(graph, tables, classifications, y, max_depth=None):
    """Targets reachable from ``y`` with their branching probabilities."""
    max_depth = max_depth or 4 * len(graph.edges) + 4
    roots = {eid: edge_roots(t) for eid, t in tables.items()}
    targets = []

    def walk(eid, z, prob, ess, branches, path, seen):
        if len(path) > max_depth:
            raise CycleDetected("flow path longer than the graph allows")
        t = tables[eid]
        direction = flow_direction(t, z)
        if direction == 0:
            targets.append(Target("level", None, eid, float(z), prob, tuple(ess),
                                  tuple(branches), tuple(path)))
            return
        stop = next_stop(t, z, direction, roots[eid])
        if stop is not None:
            targets.append(Target("level", None, eid, float(stop), prob, tuple(ess),
                                  tuple(branches), tuple(path)))
            return
        e = graph.edge(eid)
        vid = e.upper if direction > 0 else e.lower
        if vid is None:
            raise AssumptionA8Violated(f"averaged flow on edge {eid} escapes toward z_max")
        if vid in seen:
            raise CycleDetected(f"vertex {vid} visited twice")
        vtx = graph.vertex(vid)
        if vtx.exterior:
            targets.append(Target("vertex", vid, eid, vtx.z, prob, tuple(ess),
                                  tuple(branches), tuple(path)))
            return
        cls = classifications[vid]
        exits = [x for x in cls.exits if x != eid] or list(cls.exits)
        if len(exits) == 1:
            nxt = exits[0]
            walk(nxt, vtx.z, prob, ess, branches, path + [nxt], seen | {vid})
            return
        for nxt in exits:
            p = cls.probabilities[nxt]
            walk(nxt, vtx.z, prob * p, ess + [vid], branches + [(vid, nxt, p)],
                 path + [nxt], seen | {vid})

    walk(y.edge, float(y.z), 1.0, [], [], [y.edge], frozenset())
    return StableSet(y, targets)


# export -------------------------------------------------------------------

def write_tables(tables, outdir, gluing=None, classifications=None, extra=None):
    """Write ``coeffs_<edge>.csv`` files and the ``gluing.json`` sidecar."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for eid in sorted(tables):
        p = os.path.join(outdir, f"coeffs_{eid}.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in tables[eid].rows():
                w.writerow([repr(int(v)) if k == 0 else f"{float(v):.12g}"
                            for k, v in enumerate(row)])
        paths.append(p)
    side = {"edges": {str(k): t.meta() for k, t in sorted(tables.items())}}
    if gluing is not None:
        side["gamma"] = {str(v): {str(e): g for e, g in d.items()} for v, d in gluing.items()}
    if classifications is not None:
        side["classifications"] = {str(k): c.to_dict() for k, c in classifications.items()}
    if extra:
        side.update(extra)
    p = os.path.join(outdir, "gluing.json")
    with open(p, "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(p)
    return paths


def read_tables(outdir):
    """Inverse of :func:`write_tables` (tables only)."""
    with open(os.path.join(outdir, "gluing.json")) as fh:
        side = json.load(fh)
    tables = {}
    for key, meta in side["edges"].items():
        eid = int(key)
        with open(os.path.join(outdir, f"coeffs_{eid}.csv")) as fh:
            rows = list(csv.DictReader(fh))
        z = np.array([float(r["z"]) for r in rows])
        raw = {q: np.array([float(r[q]) for r in rows]) for q in QUANTITIES}
        raw.update({q + "_se": np.array([float(r[q + "_se"]) for r in rows])
                    for q in QUANTITIES})
        fits = {k: SingularFit.from_dict(f) for k, f in meta["fits"].items()}
        tables[eid] = EdgeCoefficientTable(eid, meta["side"], meta["z_lo"], meta["z_hi"],
                                           meta["lo_kind"], meta["hi_kind"], z, raw, fits,
                                           meta["n_samples"], meta["window"])
    return tables
