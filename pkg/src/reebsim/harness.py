"""Command-line front end.

``reebsim <subcommand> --config <path> [--seed N] [--threads N] [--out DIR]``

Subcommands: ``reeb``, ``coeffs``, ``branch``, ``converge``, ``limit`` and
``verify``.  Every run writes ``report.csv`` (reproducible) and
``timings.csv`` (wall-clock) next to its artifacts.  Exit codes: 0 when all
report rows pass, 1 on a failed row, 2 on an invalid configuration (nothing is
written), 3 on a runtime error.
"""

import argparse
import copy
import csv
import json
import logging
import os
import sys
import time
from importlib import resources

import numpy as np
import yaml

from . import _backend
from . import acceptance as A
from . import coeffs as C
from . import graphdiff as G
from . import limit as L
from . import sde as S
from .errors import ConfigInvalid, ReebSimError
from .morse import CATALOG, make_field
from .perturbations import IsotropicDiffusion, LinearDrift
from .reeb import GraphPoint, build_reeb, validate

log = logging.getLogger("reebsim")

SUBCOMMANDS = ("reeb", "coeffs", "branch", "converge", "limit", "verify")

# key schema: block -> allowed keys; ``None`` marks free-form mappings
SCHEMA = {
    "experiment": None, "seed": None, "threads": None, "out": None,
    "field": {"name", "params"},
    "reeb": {"resolution"},
    "perturbation": {"b", "beta", "sigma2"},
    "coeffs": {"mc_samples", "z_points", "fit_degree", "fit_points"},
    "sde": {"eps", "kappa", "delta", "dt", "T", "step_tol", "level_tol"},
    "branch": {"vertex", "h", "h_start", "n_traj", "record"},
    "converge": {"deltas", "h_v", "epsilons", "n_traj"},
    "graphdiff": {"delta", "h_v", "dt", "T", "n_paths"},
    "limit": {"start", "T", "n_paths", "observable", "mc_samples"},
    "verify": {"profile", "slow", "criteria", "overrides"},
}
DRIFT_KEYS = {"lam_p", "lam_q", "mu", "zstar"}


def default_config():
    text = resources.files("reebsim").joinpath("data/default.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, seed=None, threads=None, out=None):
    """Read a YAML config over the shipped defaults and apply CLI overrides."""
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigInvalid([f"config: cannot read {path}: {exc.strerror}"]) from None
        except yaml.YAMLError as exc:
            raise ConfigInvalid([f"config: YAML parse error: {exc}"]) from None
        if not isinstance(user, dict):
            raise ConfigInvalid(["config: top level must be a mapping"])
    problems = _schema_problems(user)
    if problems:
        raise ConfigInvalid(problems)
    cfg = _merge(default_config(), user)
    if "field" in user and "params" not in user["field"]:
        cfg["field"]["params"] = {}
    for key, val in (("seed", seed), ("threads", threads), ("out", out)):
        if val is not None:
            cfg[key] = val
    return cfg


def _schema_problems(user):
    out = []
    for k, v in user.items():
        if k not in SCHEMA:
            out.append(f"{k}: unknown key")
        elif SCHEMA[k] is not None:
            if not isinstance(v, dict):
                out.append(f"{k}: must be a mapping")
                continue
            for kk in v:
                if kk not in SCHEMA[k]:
                    out.append(f"{k}.{kk}: unknown key")
    if "field" in user and isinstance(user["field"], dict) and "name" not in user["field"]:
        out.append("field.name: missing")
    return out


def _num(cfg, block, key, problems, positive=True, integer=False, optional=False):
    val = cfg.get(block, {}).get(key)
    if val is None:
        if not optional:
            problems.append(f"{block}.{key}: missing")
        return None
    try:
        val = int(val) if integer else float(val)
    except (TypeError, ValueError):
        problems.append(f"{block}.{key}: not a number ({val!r})")
        return None
    if positive and not val > 0:
        problems.append(f"{block}.{key}: must be positive")
    return val


def _drift(spec, key, dp, problems):
    if spec is None:
        return LinearDrift(dp=dp)
    if not isinstance(spec, dict):
        problems.append(f"perturbation.{key}: must be a mapping or null")
        return None
    for k in spec:
        if k not in DRIFT_KEYS:
            problems.append(f"perturbation.{key}.{k}: unknown key")
    try:
        return LinearDrift.from_config(spec, dp)
    except (TypeError, ValueError):
        problems.append(f"perturbation.{key}: values must be numbers")
        return None


class Experiment:
    """A validated configuration with the objects it needs built lazily."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        problems = []
        try:
            self.seed = int(cfg.get("seed", 0))
            self.threads = int(cfg.get("threads", 1))
        except (TypeError, ValueError):
            problems.append("seed/threads: must be integers")
            self.seed, self.threads = 0, 1
        if self.threads < 1:
            problems.append("threads: must be >= 1")
        self.out = str(cfg.get("out") or "reebsim-out")
        fld = cfg.get("field") or {}
        name = fld.get("name")
        self.field = None
        if name is None:
            problems.append("field.name: missing")
        elif name not in CATALOG:
            problems.append(f"field.name: unknown field {name!r} (known: {sorted(CATALOG)})")
        else:
            try:
                self.field = make_field(name, **(fld.get("params") or {}))
            except TypeError as exc:
                problems.append(f"field.params: {exc}")
        dp = 0
        if self.field is not None and self.field.separable is not None:
            dp = self.field.separable.dp
        pert = cfg.get("perturbation") or {}
        self.b = _drift(pert.get("b"), "b", dp, problems)
        self.beta = _drift(pert.get("beta"), "beta", dp, problems)
        self.sigma2 = _num(cfg, "perturbation", "sigma2", problems)
        if command in ("coeffs", "branch", "converge", "limit"):
            for k, integer in (("mc_samples", True), ("z_points", True), ("fit_degree", True),
                               ("fit_points", True)):
                _num(cfg, "coeffs", k, problems, integer=integer)
        if command in ("branch", "converge", "limit"):
            self._sde_problems(problems)
        if command == "branch":
            for k in ("h", "h_start"):
                _num(cfg, "branch", k, problems)
            _num(cfg, "branch", "n_traj", problems, integer=True)
            h, hs = cfg["branch"].get("h"), cfg["branch"].get("h_start")
            if isinstance(h, (int, float)) and isinstance(hs, (int, float)) and hs >= h:
                problems.append("branch.h_start: must be below branch.h")
        if command == "converge":
            cv = cfg.get("converge", {})
            for k in ("deltas", "epsilons"):
                try:
                    # PyYAML reads ``1e-3`` (no dot) as a string, so convert explicitly
                    vals = [float(v) for v in cv.get(k)]
                    ok = bool(vals) and all(v > 0 for v in vals)
                except (TypeError, ValueError):
                    ok = False
                if not ok:
                    problems.append(f"converge.{k}: must be a non-empty list of positive numbers")
            _num(cfg, "converge", "h_v", problems)
            _num(cfg, "converge", "n_traj", problems, integer=True)
        if command == "limit":
            lim = cfg.get("limit", {})
            st = lim.get("start") or {}
            if not isinstance(st, dict) or "z" not in st:
                problems.append("limit.start: needs edge and z")
            elif not (st.get("edge", "open") == "open" or isinstance(st.get("edge"), int)):
                problems.append("limit.start.edge: 'open' or an edge id")
            _num(cfg, "limit", "T", problems)
            _num(cfg, "limit", "n_paths", problems, integer=True)
            _num(cfg, "limit", "mc_samples", problems, integer=True)
            obs = lim.get("observable") or {}
            if obs.get("kind", "indicator") not in ("indicator", "one", "coord", "square"):
                problems.append("limit.observable.kind: one of indicator, one, coord, square")
            if "graphdiff" in cfg and cfg["graphdiff"]:
                for k in ("delta", "h_v", "dt", "T"):
                    _num(cfg, "graphdiff", k, problems)
                _num(cfg, "graphdiff", "n_paths", problems, integer=True)
        if command == "verify":
            v = cfg.get("verify", {})
            if v.get("profile", "full") not in A.PROFILES:
                problems.append(f"verify.profile: one of {sorted(A.PROFILES)}")
            crit = v.get("criteria")
            if crit is not None and (not isinstance(crit, list) or any(
                    str(c) not in A.CRITERIA for c in crit)):
                problems.append(f"verify.criteria: list drawn from {list(A.CRITERIA)}")
            ov = v.get("overrides") or {}
            for k in ov:
                if k not in A.PROFILES["full"]:
                    problems.append(f"verify.overrides.{k}: unknown key")
        if problems:
            raise ConfigInvalid(problems)
        self.rows = []
        self.timings = []
        self._graph = None
        self._tables = None
        self._cls = None

    def _sde_problems(self, problems):
        s = self.cfg.get("sde", {})
        for k in ("eps", "dt", "T"):
            _num(self.cfg, "sde", k, problems)
        for k in ("kappa", "delta"):
            _num(self.cfg, "sde", k, problems, positive=False)
        if not problems:
            conf = self.sde_config()
            problems.extend(f"sde: {p}" for p in conf.problems(self.field))
        return s

    def sde_config(self, **kw):
        s = self.cfg["sde"]
        args = dict(eps=float(s["eps"]), kappa=float(s["kappa"]), delta=float(s["delta"]),
                    T=float(s["T"]), dt=float(s["dt"]), seed=self.seed, drift=self.b,
                    beta=self.beta, sigma2=float(self.sigma2),
                    step_tol=float(s.get("step_tol", 1e-2)),
                    level_tol=float(s.get("level_tol", 1e-3)))
        args.update(kw)
        return S.SdeConfig(**args)

    # lazily built pieces --------------------------------------------------

    def timed(self, name, fn, budget=float("inf")):
        t0 = time.perf_counter()
        out = fn()
        self.timings.append(A.Timing(name, time.perf_counter() - t0, budget))
        return out

    @property
    def graph(self):
        if self._graph is None:
            res = self.cfg.get("reeb", {}).get("resolution")
            self._graph = self.timed("reeb", lambda: build_reeb(self.field, resolution=res))
        return self._graph

    @property
    def tables(self):
        if self._tables is None:
            c = self.cfg["coeffs"]
            self._tables = self.timed("coeffs", lambda: C.tabulate_edges(
                self.graph, self.field, b_model=self.b, beta_model=self.beta,
                a2_model=None if self.sigma2 == 1.0 else IsotropicDiffusion(self.sigma2),
                z_points_per_edge=int(c["z_points"]), mc_samples=int(c["mc_samples"]),
                seed=self.seed, fit_degree=int(c["fit_degree"]), fit_points=int(c["fit_points"])))
        return self._tables

    @property
    def classifications(self):
        if self._cls is None:
            self._cls = C.classify_vertices(self.graph, self.tables)
        return self._cls

    def path(self, name):
        return os.path.join(self.out, name)

    def row(self, *args):
        self.rows.append(A.ReportRow(*args))


# subcommands --------------------------------------------------------------

def cmd_reeb(ex):
    g = ex.graph
    g.to_json(ex.path("reeb.json"))
    rep = validate(g)
    c = rep.type_counts
    ex.row("reeb", "#(1/2)-#(1/0)+1", c["1/2"] - c["1/0"] + 1, 0, "PAPER", "0", "exact", rep.prop2a)
    ex.row("reeb", "#(2/1)-#(0/1)", c["2/1"] - c["0/1"], 0, "PAPER", "0", "exact", rep.prop2b)
    ex.row("reeb", "is_tree", rep.is_tree, 1, "TRIVIAL", "1", "exact", rep.is_tree)
    ex.row("reeb", "one_open_edge", rep.one_open_edge, 1, "TRIVIAL", "1", "exact",
           rep.one_open_edge)
    ex.row("reeb", "index_consistent", rep.index_ok, 1, "TRIVIAL", "1", "exact", rep.index_ok)
    for p in rep.problems:
        log.warning("reeb: %s", p)


def _interior(ex, vid=None):
    if vid is not None:
        return ex.graph.vertex(int(vid))
    inner = ex.graph.interior_vertices()
    if not inner:
        raise ConfigInvalid(["branch.vertex: the graph has no interior vertex"])
    return inner[0]


def cmd_coeffs(ex):
    g = ex.graph
    g.to_json(ex.path("reeb.json"))
    tables = ex.tables
    gl = C.gluing_weights(tables, g)
    cls = C.classify_vertices(g, tables, gl)
    ex._cls = cls
    C.write_tables(tables, ex.out, gl, cls)
    for vid, rec in sorted(C.additivity(tables, g).items()):
        for name, (res, se) in rec.items():
            tol = 4 * se + 1e-12
            ex.row("coeffs", f"additivity {name}@vertex {vid}", res, 0.0, "PAPER",
                   f"{tol:.4g}", "abs", bool(abs(res) <= tol))


def cmd_branch(ex):
    g = ex.graph
    b = ex.cfg["branch"]
    vtx = _interior(ex, b.get("vertex"))
    cls = ex.classifications[vtx.id]
    conf = ex.sde_config()
    st = ex.timed("branch", lambda: S.first_exit_stats(
        conf, ex.field, g, vtx.id, float(b["h"]), int(b["n_traj"]), h_start=float(b["h_start"]),
        threads=ex.threads))
    doc = st.to_dict()
    doc["oracle"] = {str(k): v for k, v in cls.probabilities.items()}
    with open(ex.path("exits.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    # finite delta lets a few paths leave through an entrance edge; the branching
    # law concerns the split among the exit edges
    freqs, _, n_ex = st.conditional(sorted(cls.exits))
    ex.row("branch", "entrance_or_timeout_fraction", 1 - n_ex / int(b["n_traj"]), 0.0,
           "TRIVIAL", "info", "info", True)
    for eid in sorted(cls.exits):
        ref = cls.probabilities[eid]
        tol = 3 * np.sqrt(max(ref * (1 - ref), 1e-12) / max(n_ex, 1))
        ex.row("branch", f"exit_freq(edge {eid})", freqs[eid], ref, "PAPER",
               f"{tol:.4g}", "abs", bool(abs(freqs[eid] - ref) <= tol))
    n_rec = int(b.get("record", 1) or 0)
    if n_rec:
        above = g.upper_edges(vtx.id)[0]
        x0 = S.sample_level(ex.field, g, above, vtx.z + float(b["h_start"]), n_rec, ex.seed)
        for k in range(n_rec):
            conf_k = ex.sde_config(x0=x0[k], T=min(conf.T, 2.0))
            ps = S.simulate_full(conf_k, ex.field, g, threads=ex.threads)
            _write_sde_path(ex.path(f"paths_sde_{k}.csv"), ps)


def _write_sde_path(path, ps):
    d = ps.x.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i}" for i in range(d)] + ["H", "edge"])
        for k in range(ps.t.size):
            e = "" if ps.edges is None else int(ps.edges[k])
            w.writerow([f"{ps.t[k]:.10g}"] + [f"{v:.10g}" for v in ps.x[k]]
                       + [f"{ps.H[k]:.12g}", e])


def cmd_converge(ex):
    g = ex.graph
    cv = ex.cfg["converge"]
    vtx = _interior(ex, ex.cfg.get("branch", {}).get("vertex"))
    cls = ex.classifications[vtx.id]
    target = {e: cls.probabilities.get(e, 0.0) for e in g.incident_edges(vtx.id)}
    deltas = sorted((float(d) for d in cv["deltas"]), reverse=True)
    gaps = []
    doc = {"vertex": vtx.id, "target": {str(k): v for k, v in target.items()}, "delta": [],
           "epsilon": []}
    for d in deltas:
        P = G.vertex_exit_distribution(g, ex.tables, d, vtx.id, float(cv["h_v"]))
        gaps.append(max(abs(P[e] - target[e]) for e in target))
        doc["delta"].append({"delta": d, "probabilities": {str(k): v for k, v in P.items()},
                             "gap": gaps[-1]})
        ex.row("converge", f"star_gap@delta={d:g}", gaps[-1], 0.0, "PAPER", "trend", "info", True)
    mono = A._monotone(gaps)
    ex.row("converge", "star_gap_monotone", mono, 1, "PAPER", "1", "exact", mono)
    ex.row("converge", "star_final_gap", gaps[-1], 0.0, "PAPER", "0.01", "abs",
           bool(gaps[-1] < 0.01))
    b = ex.cfg["branch"]
    n = int(cv["n_traj"])
    errs = []
    for k, eps in enumerate(sorted((float(e) for e in cv["epsilons"]), reverse=True)):
        conf = ex.sde_config(eps=eps, dt=min(float(ex.cfg["sde"]["dt"]), eps / 50))
        st = ex.timed(f"converge eps={eps:g}", lambda: S.first_exit_stats(
            conf, ex.field, g, vtx.id, float(b["h"]), n, h_start=float(b["h_start"]),
            threads=ex.threads, seed_offset=k * n))
        freqs, _, _ = st.conditional(sorted(cls.exits))
        err = max(abs(freqs[e] - target[e]) for e in freqs)
        errs.append(err)
        doc["epsilon"].append({"eps": eps, **st.to_dict(), "max_error": err})
        ex.row("converge", f"sde_max_error@eps={eps:g}", err, 0.0, "PAPER", "trend", "info", True)
    tol = 3 * 0.5 / np.sqrt(n)
    ex.row("converge", "sde_final_error", errs[-1], 0.0, "PAPER", f"{tol:.4g}", "abs",
           bool(errs[-1] <= tol))
    with open(ex.path("converge.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _observable(spec, dim):
    kind = spec.get("kind", "indicator")
    i = int(spec.get("index", 0))
    if kind == "one":
        return lambda x: np.ones(x.shape[0])
    if kind == "coord":
        return lambda x: x[:, i]
    if kind == "square":
        return lambda x: x[:, i] ** 2
    thr = float(spec.get("threshold", 0.0))
    return lambda x: (x[:, i] > thr).astype(float)


def cmd_limit(ex):
    g = ex.graph
    lim = ex.cfg["limit"]
    st = lim["start"]
    edge = g.open_edge if st.get("edge", "open") == "open" else int(st["edge"])
    y0 = GraphPoint(edge, float(st["z"]))
    tables, cls = ex.tables, ex.classifications
    dist = ex.timed("limit_distribution", lambda: L.limit_distribution(g, tables, cls, y0))
    f = _observable(lim.get("observable") or {}, ex.field.dim)
    val, se = L.expected_observable(g, ex.field, dist, f, mc_samples=int(lim["mc_samples"]),
                                    seed=ex.seed)
    doc = dist.to_dict()
    doc["observable"] = {"spec": lim.get("observable"), "value": val, "stderr": se}
    with open(ex.path("limit_dist.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    psum = sum(t.probability for t in dist.targets)
    ex.row("limit", "sum_probabilities", psum, 1.0, "TRIVIAL", "1e-12", "abs",
           bool(abs(psum - 1) < 1e-12))
    n = int(lim["n_paths"])
    counts = ex.timed("limit_paths", lambda: L.branching_frequencies(
        g, tables, cls, y0, n, seed=ex.seed, T=float(lim["T"])))
    for t in dist.targets:
        key = ("vertex", t.vertex) if t.kind == "vertex" else ("level", t.edge, t.z)
        k = sum(v for kk, v in counts.items() if kk is not None and kk[0] == key[0]
                and kk[1] == key[1] and (key[0] == "vertex" or abs(kk[2] - key[2]) < 1e-6))
        sd = np.sqrt(t.probability * (1 - t.probability) / n)
        ex.row("limit", f"branch_freq({t.kind} {t.vertex if t.kind == 'vertex' else t.edge})",
               k / n, t.probability, "DERIVED", f"{3 * sd + 1e-12:.4g}", "abs",
               bool(abs(k / n - t.probability) <= 3 * sd + 1e-12))
    path = L.simulate_limit(g, tables, cls, y0, float(lim["T"]), seed=ex.seed)
    with open(ex.path("paths_limit.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "edge", "z"])
        for t, e, z in path.rows():
            w.writerow([f"{t:.10g}", e, f"{z:.12g}"])
    gd = ex.cfg.get("graphdiff")
    if gd:
        conf = G.GraphDiffusionConfig(float(gd["delta"]), float(gd["T"]), float(gd["dt"]),
                                      float(gd["h_v"]), y0, ex.seed)
        conf.validate(g, tables)
        sim = G.GraphDiffusion(g, tables, conf.delta, conf.h_v)
        m = int(gd["n_paths"])
        edges, z, gp = ex.timed("graphdiff", lambda: sim.run(
            np.full(m, y0.edge), np.full(m, y0.z), conf.T, conf.dt, ex.seed,
            record_every=max(1, int(round(0.01 / conf.dt)))))
        with open(ex.path("paths_graph.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "edge", "z"])
            for t, e, zz in zip(gp.t, gp.edge, gp.z):
                w.writerow([f"{t:.10g}", int(e), f"{zz:.12g}"])
        for t in dist.targets:
            if t.kind != "vertex":
                continue
            freq = float(np.mean(edges == t.edge))
            sd = np.sqrt(t.probability * (1 - t.probability) / m)
            ex.row("limit", f"graphdiff_freq(edge {t.edge})@delta={conf.delta:g}", freq,
                   t.probability, "DERIVED", f"{3 * sd + 0.05:.4g}", "abs",
                   bool(abs(freq - t.probability) <= 3 * sd + 0.05))


def cmd_verify(ex, slow=False):
    v = ex.cfg.get("verify", {})
    ctx = A.Context(ex.seed, ex.threads, v.get("profile", "full"), v.get("overrides"))
    crit = [str(c) for c in v["criteria"]] if v.get("criteria") else None

    def progress(k, rows, sec):
        bad = sum(not r.passed for r in rows)
        log.info("criterion %s: %s (%.1f s)", k, "pass" if not bad else f"{bad} failed", sec)
    rows, timings = A.run_suite(ctx, crit, slow=slow or bool(v.get("slow")), progress=progress)
    ex.rows += rows
    ex.timings += timings


COMMANDS = {"reeb": cmd_reeb, "coeffs": cmd_coeffs, "branch": cmd_branch,
            "converge": cmd_converge, "limit": cmd_limit, "verify": cmd_verify}


def write_report(ex):
    with open(ex.path("report.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(A.REPORT_COLUMNS)
        for r in ex.rows:
            w.writerow(r.cells())
    with open(ex.path("timings.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(A.TIMING_COLUMNS)
        for t in ex.timings:
            w.writerow(t.cells())


def run(command, config=None, seed=None, threads=None, out=None, slow=False):
    """Run one subcommand; returns the exit code."""
    try:
        cfg = load_config(config, seed, threads, out)
        ex = Experiment(cfg, command)
    except ConfigInvalid as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2
    os.makedirs(ex.out, exist_ok=True)
    log.info("%s: field %s, backend %s, out %s", command, ex.field.name, _backend.NAME, ex.out)
    try:
        t0 = time.perf_counter()
        if command == "verify":
            cmd_verify(ex, slow)
        else:
            COMMANDS[command](ex)
        ex.timings.append(A.Timing("total", time.perf_counter() - t0, float("inf")))
    except ConfigInvalid as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 2
    except ReebSimError as exc:
        print(f"{command} failed ({type(exc).__name__}): {exc}", file=sys.stderr)
        write_report(ex)
        return 3
    write_report(ex)
    failed = [r for r in ex.rows if not r.passed]
    for r in failed:
        log.warning("FAIL %s %s: %s vs %s (%s)", r.experiment, r.quantity, A._fmt(r.computed),
                    A._fmt(r.reference), r.tolerance)
    return 1 if failed else 0


def main(argv=None):
    ap = argparse.ArgumentParser(prog="reebsim", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="YAML experiment file (defaults: shipped default.yaml)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out")
    ap.add_argument("--slow", action="store_true", help="include the long SDE bridge check")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return run(args.command, args.config, args.seed, args.threads, args.out, args.slow)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
