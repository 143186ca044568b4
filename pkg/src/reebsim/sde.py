"""Full fast-slow diffusion in phase space.

One step of length ``dt`` (slow time) is a Strang splitting::

    fast half-step  ->  kappa step  ->  slow drift and delta noise  ->  fast half-step

The fast flow ``(1/eps) symplectic_gradient(H)`` uses leapfrog for separable
fields and implicit midpoint otherwise; the kappa step moves tangentially to
the level with noise ``sigma1 = |grad H| (I - n n^T)`` plus the divergence
correction ``(kappa/2 eps) b_tilde``, then is projected back onto its level.
Separable catalog fields run in the compiled kernel; anything else falls
back to a vectorised numpy loop with the same random streams.
"""

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.stats import binomtest

from . import _backend, _fallback
from . import rng as rngmod
from .errors import BoxExit, ConfigInvalid, LevelDrift, StepTooLarge
from .perturbations import LinearDrift

OBSERVABLES = {"none": _fallback.OBS_NONE, "coord": _fallback.OBS_COORD,
               "square": _fallback.OBS_SQUARE, "positive": _fallback.OBS_POSITIVE}


@dataclass
class SdeConfig:
    """Parameters of the full diffusion.

    ``sigma2`` is the scalar ``s`` of ``sigma2 = s I``; ``drift`` and ``beta``
    are :class:`LinearDrift` models (``None`` means zero).
    """

    eps: float
    kappa: float
    delta: float
    T: float
    dt: float
    seed: int = 0
    x0: object = None
    drift: LinearDrift = None
    beta: LinearDrift = None
    sigma2: float = 1.0
    step_tol: float = 1e-2
    level_tol: float = 1e-3

    def problems(self, field=None, assumptions=None):
        out = []
        for name in ("eps", "T", "dt"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        if self.kappa < 0:
            out.append("kappa must be non-negative")
        if self.delta < 0:
            out.append("delta must be non-negative")
        if self.sigma2 <= 0:
            out.append("sigma2 must be positive (a2 positive definite)")
        if self.eps > 0 and self.dt > self.eps / 50 * (1 + 1e-12):
            out.append(f"dt = {self.dt} exceeds eps/50 = {self.eps / 50}")
        if field is not None:
            if field.dim % 2:
                out.append("the full diffusion needs an even dimension")
            if self.x0 is not None:
                x0 = np.asarray(self.x0, dtype=float)
                if x0.shape[-1] != field.dim:
                    out.append(f"x0 has dimension {x0.shape[-1]}, field has {field.dim}")
                elif not np.all(field.inside(x0)):
                    out.append("x0 lies outside the bounding box")
        if assumptions is not None and not assumptions.kappa_admissible(self.kappa):
            warnings.warn(f"kappa = {self.kappa} exceeds the admissible bound "
                          f"{assumptions.kappa_bound:.4g}", RuntimeWarning, stacklevel=2)
        return out

    def validate(self, field=None, assumptions=None):
        probs = self.problems(field, assumptions)
        if probs:
            raise ConfigInvalid(probs)
        return self

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))


@dataclass
class PathSample:
    t: np.ndarray
    x: np.ndarray
    H: np.ndarray
    edges: np.ndarray = None
    events: list = dc_field(default_factory=list)
    status: int = 0
    max_deviation: float = 0.0


@dataclass
class ExitRecord:
    vertex: int
    start_edge: int
    exit_edge: int | None
    time: float
    z: float
    status: int


@dataclass
class ExitStats:
    vertex: int
    h: float
    counts: dict
    frequencies: dict
    intervals: dict
    mean_times: dict
    timeouts: int
    records: list

    @property
    def n(self):
        return sum(self.counts.values())

    def conditional(self, edges, level=0.99):
        """Frequencies and Wilson intervals among exits through ``edges`` only."""
        n = sum(self.counts[e] for e in edges)
        freqs = {e: (self.counts[e] / n if n else 0.0) for e in edges}
        return freqs, {e: wilson(self.counts[e], n, level) for e in edges}, n

    def to_dict(self):
        return {"vertex": self.vertex, "h": self.h, "n": self.n, "timeouts": self.timeouts,
                "counts": {str(k): v for k, v in self.counts.items()},
                "frequencies": {str(k): v for k, v in self.frequencies.items()},
                "wilson99": {str(k): list(v) for k, v in self.intervals.items()},
                "mean_times": {str(k): v for k, v in self.mean_times.items()}}


# noise geometry -----------------------------------------------------------

def make_sigma1(field, x):
    """``|grad H| (I - n n^T)``: tangential noise that preserves ``H``."""
    x = np.asarray(x, dtype=float)
    g = field.gradient(x)
    gn = np.linalg.norm(g, axis=-1)
    d = x.shape[-1]
    eye = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d))
    safe = np.where(gn > 0, gn, 1.0)
    n = g / safe[..., None]
    out = gn[..., None, None] * (eye - n[..., :, None] * n[..., None, :])
    return np.where((gn > 0)[..., None, None], out, 0.0)


# kernels ------------------------------------------------------------------

def kernel_supported(field):
    return (field.separable is not None and field.kernel is not None
            and field.dim <= 8)


def _models(config, field):
    dp = field.separable.dp if field.separable is not None else field.dim // 2
    drift = config.drift if config.drift is not None else LinearDrift(dp=dp)
    beta = config.beta if config.beta is not None else LinearDrift(dp=dp)
    return drift, beta


def _generic_run(field, x, states, n_steps, dt, eps, kappa, delta, drift, beta, sig2, z_max,
                 stop_lo, stop_hi, obs_kind, obs_index, record_every, step_tol, active=None,
                 midpoint_iters=8):
    """numpy version of the step for non-separable Hamiltonians (implicit midpoint)."""
    n, d = x.shape
    dp = d // 2
    m = d + (d % 2)
    tau = 0.5 * dt / eps
    sk = np.sqrt(kappa * dt / eps)
    sd = np.sqrt(delta * dt) * sig2

    def sgrad(y):
        g = field.gradient(y)
        return np.concatenate([-g[:, dp:], g[:, :dp]], axis=1)

    def fast(y):
        y1 = y + tau * sgrad(y)
        for _ in range(midpoint_iters):
            y1 = y + tau * sgrad(0.5 * (y + y1))
        return y1

    def project(y, target):
        for _ in range(3):
            H = field(y)
            g = field.gradient(y)
            g2 = np.sum(g * g, axis=1)
            ok = (g2 > 1e-24) & (np.abs(H - target) > 1e-14 * (1.0 + np.abs(target)))
            corr = np.where(ok, (H - target) / np.where(ok, g2, 1.0), 0.0)
            y = y - corr[:, None] * g
        return y

    n_rec = 0 if record_every <= 0 else n_steps // record_every + 1
    rec = np.zeros((n, n_rec, d))
    rec_h = np.zeros((n, n_rec))
    status = np.zeros(n, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    dev = np.zeros(n)
    obs = np.zeros(n)
    H0 = field(x)
    box = field.box
    live = np.ones(n, dtype=bool) if active is None else np.asarray(active, bool).copy()
    if n_rec:
        rec[:, 0] = x
        rec_h[:, 0] = H0
    for k in range(n_steps):
        idx = np.flatnonzero(live)
        if idx.size == 0:
            break
        xs = x[idx]
        st = states[idx]
        z0 = field(xs)
        xs = fast(xs)
        bad = np.abs(field(xs) - z0) > step_tol * np.maximum(1.0, np.abs(z0))
        xs = project(xs, z0)
        xi = _fallback.normals(st, 2 * m)
        g = field.gradient(xs)
        hess = field.hessian(xs)
        gn = np.sqrt(np.sum(g * g, axis=1))
        w1 = xi[:, :d]
        gw = np.sum(g * w1, axis=1)
        safe = np.where(gn > 0, gn, 1.0)
        noise1 = np.where((gn > 0)[:, None], gn[:, None] * w1 - (gw / safe)[:, None] * g, 0.0)
        lap = np.trace(hess, axis1=1, axis2=2)
        btil = np.einsum("nij,nj->ni", hess, g) - lap[:, None] * g
        xs = xs + (0.5 * kappa / eps) * btil * dt + sk * noise1
        xs = project(xs, z0)
        xs = xs + (drift.value(xs, field) + delta * beta.value(xs, field)) * dt \
            + sd * xi[:, m:m + d]
        z1 = field(xs)
        over = z1 > z_max
        if over.any():
            tgt = np.where(over, 2 * z_max - z1, z1)
            xs = project(xs, tgt)
            z1 = np.where(over, tgt, z1)
        xs = fast(xs)
        bad |= np.abs(field(xs) - z1) > step_tol * np.maximum(1.0, np.abs(z1))
        xs = project(xs, z1)
        z1 = field(xs)
        x[idx] = xs
        states[idx] = st
        steps[idx] += 1
        dev[idx] = np.maximum(dev[idx], np.abs(z1 - H0[idx]))
        if obs_kind == _fallback.OBS_COORD:
            obs[idx] += xs[:, obs_index]
        elif obs_kind == _fallback.OBS_SQUARE:
            obs[idx] += xs[:, obs_index] ** 2
        elif obs_kind == _fallback.OBS_POSITIVE:
            obs[idx] += xs[:, obs_index] > 0
        if n_rec and (k + 1) % record_every == 0:
            j = (k + 1) // record_every
            rec[idx, j] = xs
            rec_h[idx, j] = z1
        outside = ~field.inside(xs)
        code = np.zeros(idx.size, dtype=np.int64)
        code[z1 <= stop_lo] = _fallback.EXIT_LOW
        code[z1 >= stop_hi] = _fallback.EXIT_HIGH
        code[outside] = _fallback.BOX_EXIT
        code[bad] = _fallback.STEP_TOO_LARGE
        status[idx] = code
        live[idx[code != _fallback.RUNNING]] = False
    return {"steps": steps, "status": status, "dev": dev, "obs": obs, "rec": rec,
            "rec_h": rec_h}


def run_batch(field, config, x0, n_steps=None, stop_lo=-np.inf, stop_hi=np.inf,
              observable=("none", 0), record_every=0, threads=1, offset=0, backend=None):
    """Integrate ``len(x0)`` trajectories; trajectory ``k`` uses substream ``offset + k``.

    Returns ``(x_final, result dict)``.  ``backend`` may force ``"python"``.
    """
    x = np.array(np.atleast_2d(x0), dtype=float, order="C")
    n = x.shape[0]
    states = rngmod.xoshiro_states(config.seed, "sde", n, offset)
    n_steps = config.n_steps if n_steps is None else int(n_steps)
    drift, beta = _models(config, field)
    obs_kind = OBSERVABLES[observable[0]]
    z_max = field.z_max if field.z_max is not None else np.inf
    args = (n_steps, config.dt, config.eps, config.kappa, config.delta)
    tail = dict(z_max=z_max, stop_lo=float(stop_lo), stop_hi=float(stop_hi), obs_kind=obs_kind,
                obs_index=int(observable[1]), record_every=int(record_every),
                step_tol=config.step_tol)
    if kernel_supported(field):
        pot, prm = field.kernel
        kw = dict(pot=int(pot), c=float(prm[0]), dp=int(field.separable.dp),
                  drift=drift.kernel_params(), beta=beta.kernel_params(),
                  sig2=float(config.sigma2), box=np.ascontiguousarray(field.box), **tail)
        if backend == "python":
            res = _fallback.sde_run(x, states, *args, **kw)
        else:
            res = _backend.sde_run(x, states, *args, num_threads=threads, **kw)
    else:
        res = _generic_run(field, x, states, *args, drift, beta, config.sigma2, **tail)
    return x, res


def _check_status(res, allow=()):
    st = res["status"]
    if np.any(st == _fallback.STEP_TOO_LARGE) and _fallback.STEP_TOO_LARGE not in allow:
        raise StepTooLarge("fast sub-flow energy drift exceeded step_tol; reduce dt")
    if np.any(st == _fallback.BOX_EXIT) and _fallback.BOX_EXIT not in allow:
        raise BoxExit("trajectory left the bounding box")


# operations ---------------------------------------------------------------

def simulate_full(config, field, graph=None, record_every=None, threads=1, backend=None):
    """One trajectory from ``config.x0`` with a subsampled record."""
    config.validate(field)
    if config.x0 is None:
        raise ConfigInvalid(["x0 is required"])
    n_steps = config.n_steps
    record_every = record_every or max(1, n_steps // 1000)
    x, res = run_batch(field, config, config.x0, n_steps, record_every=record_every,
                       threads=threads, backend=backend)
    _check_status(res)
    k = int(res["steps"][0]) // record_every + 1
    t = np.arange(k) * record_every * config.dt
    xs = res["rec"][0, :k]
    H = field(xs)
    edges = None
    events = []
    if graph is not None:
        _, edges = graph.locate(xs, field)
        for vtx in graph.vertices:
            s = np.sign(H - vtx.z)
            for j in np.flatnonzero(s[:-1] * s[1:] < 0):
                # linear interpolation of the crossing time between records
                frac = (vtx.z - H[j]) / (H[j + 1] - H[j])
                events.append((float(t[j] + frac * (t[j + 1] - t[j])), vtx.id))
        events.sort()
    return PathSample(t, xs, H, edges, events, int(res["status"][0]), float(res["dev"][0]))


def ergodic_average(config, field, observable, T=None, n_traj=1, threads=1):
    """Time average of a coordinate observable along the kappa-process.

    ``observable`` is ``("coord"|"square"|"positive", index)`` or ``"one"``.
    """
    cfg = SdeConfig(**{**config.__dict__, "delta": 0.0, "drift": None, "beta": None})
    if T is not None:
        cfg.T = T
    cfg.validate(field)
    if observable == "one":
        return 1.0
    x0 = np.atleast_2d(np.asarray(cfg.x0, dtype=float))
    x0 = np.repeat(x0, n_traj, axis=0) if x0.shape[0] == 1 else x0
    z0 = field(x0)
    x, res = run_batch(field, cfg, x0, observable=observable, threads=threads)
    _check_status(res)
    tol = cfg.level_tol * np.maximum(1.0, np.abs(z0))
    if np.any(res["dev"] > tol):
        raise LevelDrift(f"level deviation {res['dev'].max():.3g} exceeds {tol.max():.3g}")
    return float(np.mean(res["obs"] / res["steps"]))


def sample_level(field, graph, edge, z, n, seed, tag="start", shell=None, batch=200_000,
                 max_batches=200):
    """Points on the level component ``(z, edge)`` with the invariant density.

    Uniform points of a thin shell ``|H - z| < shell`` have density
    proportional to ``1/|grad H|`` on the level by the coarea formula; they
    are projected onto the level by Newton steps along the gradient.
    """
    shell = shell or 1e-2 * max(1.0, abs(z))
    out = []
    got = 0
    for k in range(max_batches):
        g = rngmod.generator(seed, tag, k)
        x = field.uniform(g, batch)
        H = field(x)
        x = x[np.abs(H - z) < shell]
        if x.size:
            _, e = graph.locate(x, field)
            x = x[e == edge]
            out.append(x)
            got += x.shape[0]
        if got >= n:
            break
    if got < n:
        raise ConfigInvalid([f"could not sample {n} start points on edge {edge} at z = {z}"])
    x = np.concatenate(out)[:n]
    for _ in range(6):
        gr = field.gradient(x)
        x = x - ((field(x) - z) / np.sum(gr * gr, axis=1))[:, None] * gr
    return x


def wilson(k, n, level=0.99):
    if n == 0:
        return (0.0, 1.0)
    ci = binomtest(int(k), int(n)).proportion_ci(level, method="wilson")
    return (float(ci.low), float(ci.high))


def first_exit_stats(config, field, graph, vertex, h, n_traj, h_start=None, entrance=None,
                     threads=1, chunk=256, seed_offset=0):
    """Exit edges and times from the neighbourhood ``|z - z_O| < h`` of a vertex.

    Trajectories start on the entrance edge ``entrance`` (default: the upper
    edge) at distance ``h_start`` from the vertex level.
    """
    config.validate(field)
    vtx = graph.vertex(vertex)
    h_start = h_start or h / 10.0
    if entrance is None:
        ups = graph.upper_edges(vertex)
        entrance = ups[0] if ups else graph.lower_edges(vertex)[0]
    above = graph.edge(entrance).lower == vertex
    z_start = vtx.z + (h_start if above else -h_start)
    x0 = sample_level(field, graph, entrance, z_start, n_traj, config.seed + seed_offset)
    records = []
    for lo in range(0, n_traj, chunk):
        xs = x0[lo:lo + chunk]
        x, res = run_batch(field, config, xs, stop_lo=vtx.z - h, stop_hi=vtx.z + h,
                           threads=threads, offset=seed_offset + lo)
        _check_status(res)
        done = res["status"] != _fallback.RUNNING
        eids = np.full(x.shape[0], -1)
        if done.any():
            _, e = graph.locate(x[done], field)
            eids[done] = e
        for k in range(x.shape[0]):
            t = res["steps"][k] * config.dt
            records.append(ExitRecord(vertex, entrance, int(eids[k]) if done[k] else None,
                                      float(t), float(field(x[k:k + 1])[0]),
                                      int(res["status"][k])))
    exited = [r for r in records if r.exit_edge is not None]
    n = len(exited)
    counts = {eid: sum(r.exit_edge == eid for r in exited) for eid in graph.incident_edges(vertex)}
    freqs = {e: (c / n if n else 0.0) for e, c in counts.items()}
    cis = {e: wilson(c, n) for e, c in counts.items()}
    means = {e: float(np.mean([r.time for r in exited if r.exit_edge == e]))
             if counts[e] else float("nan") for e in counts}
    return ExitStats(vertex, h, counts, freqs, cis, means, len(records) - n, records)
