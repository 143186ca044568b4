"""Analytic Morse fields, critical points and standing assumptions.

A :class:`ScalarFieldModel` is a vectorised analytic function ``H(x)`` with its
gradient and Hessian on a bounding box.  In Hamiltonian mode the coordinates
are ordered ``x = (p, q)``.  Separable Hamiltonians ``|p|^2/2 + F(q)`` carry
the potential ``F`` so the Reeb graph can be lifted from the join tree of
``F`` and the compiled kernels can use a closed-form force.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DegenerateCritical, OddDimension

# Potential identifiers shared with the compiled kernels.
POT_QUADRATIC = 0
POT_DW1 = 1
POT_DW2 = 2
POT_HAT = 3


@dataclass(frozen=True)
class SeparableTag:
    """Marks ``H(p, q) = |p|^2/2 + F(q)``."""

    dp: int
    potential: "ScalarFieldModel"


class ScalarFieldModel:
    """An analytic scalar field with exact derivatives.

    Args:
        name: catalog name (informational).
        dim: ambient dimension ``d``.
        func, grad, hess: vectorised callables taking ``(..., d)`` arrays.
        box: ``(d, 2)`` per-axis intervals.
        z_max: numerical H-ceiling, must lie below ``min H`` on the box boundary.
        separable: optional :class:`SeparableTag`.
        laplacian: optional callable, defaults to the Hessian trace.
        kernel: ``(potential id, params)`` understood by the compiled kernels.
    """

    def __init__(self, name, dim, func, grad, hess, box, z_max=None,
                 separable=None, laplacian=None, kernel=None, params=None):
        self.name = name
        self.dim = int(dim)
        self._func = func
        self._grad = grad
        self._hess = hess
        self._lap = laplacian
        self.box = np.asarray(box, dtype=float).reshape(self.dim, 2)
        self.z_max = None if z_max is None else float(z_max)
        self.separable = separable
        self.kernel = kernel
        self.params = dict(params or {})

    def __repr__(self):
        return f"ScalarFieldModel({self.name!r}, d={self.dim}, params={self.params})"

    def __call__(self, x):
        return self._func(np.asarray(x, dtype=float))

    def gradient(self, x):
        return self._grad(np.asarray(x, dtype=float))

    def hessian(self, x):
        return self._hess(np.asarray(x, dtype=float))

    def laplacian(self, x):
        x = np.asarray(x, dtype=float)
        if self._lap is not None:
            return self._lap(x)
        return np.trace(self._hess(x), axis1=-2, axis2=-1)

    @property
    def hamiltonian(self):
        return self.dim % 2 == 0

    def inside(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.box[:, 0]) & (x <= self.box[:, 1]), axis=-1)

    def uniform(self, rng, n):
        lo, hi = self.box[:, 0], self.box[:, 1]
        return lo + (hi - lo) * rng.random((n, self.dim))

    def box_volume(self):
        return float(np.prod(self.box[:, 1] - self.box[:, 0]))

    def boundary_probes(self, rng, n_per_face=200):
        """Random points on the interiors of the box faces."""
        pts = []
        for axis in range(self.dim):
            for side in (0, 1):
                x = self.uniform(rng, n_per_face)
                x[:, axis] = self.box[axis, side]
                pts.append(x)
        return np.concatenate(pts)

    def check_invariants(self, rng=None, n_probes=64, criticals=None, margin=0.1):
        """Return a list of violated field invariants (empty when valid)."""
        rng = np.random.default_rng(0) if rng is None else rng
        problems = []
        x = self.uniform(rng, n_probes)
        g = self.gradient(x)
        step = 1e-5 * np.maximum(1.0, np.abs(x))
        fd = np.empty_like(g)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            fd[:, k] = (self(x + step[:, k:k + 1] * e) - self(x - step[:, k:k + 1] * e)) / (2 * step[:, k])
        scale = np.maximum(1.0, np.abs(g)).max(axis=1)
        err = np.abs(fd - g).max(axis=1) / scale
        if err.max() > 1e-5:
            problems.append(f"gradient mismatch {err.max():.2e}")
        h = self.hessian(x)
        if np.abs(h - np.swapaxes(h, -1, -2)).max() > 1e-12 * max(1.0, np.abs(h).max()):
            problems.append("Hessian not symmetric")
        if criticals:
            ceiling = max(c.value for c in criticals) + margin
            if self(self.boundary_probes(rng)).min() <= ceiling:
                problems.append("box boundary dips below the critical ceiling")
        if self.z_max is not None and self(self.boundary_probes(rng)).min() <= self.z_max:
            problems.append("z_max is not below the boundary minimum")
        return problems


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    value: float
    index: int
    eigenvalues: np.ndarray

    def as_dict(self):
        return {
            "location": [float(v) for v in self.location],
            "value": float(self.value),
            "index": int(self.index),
            "eigenvalues": [float(v) for v in self.eigenvalues],
        }


@dataclass
class AssumptionReport:
    value_pairs: list
    values_separated: bool
    c1: float
    c2: float
    c3: float
    growth_ok: bool
    lambda_star: float
    K: float
    kappa_bound: float
    notes: list = dc_field(default_factory=list)

    def kappa_admissible(self, kappa):
        return kappa < self.kappa_bound


def symplectic_gradient(field, x):
    """``(-grad_q H, grad_p H)`` for ``x = (p, q)``."""
    if field.dim % 2:
        raise OddDimension(f"symplectic gradient needs even d, got {field.dim}")
    g = field.gradient(x)
    n = field.dim // 2
    return np.concatenate([-g[..., n:], g[..., :n]], axis=-1)


def find_critical_points(field, seeds_per_axis=12, newton_tol=1e-10, degenerate_tol=1e-6,
                         max_iter=200, polish=6, return_failures=False):
    """Newton refinement from a regular grid of seeds.

    Seeds that leave the box or fail to converge are dropped; the latter are
    reported through ``return_failures`` (NoConvergence is non-fatal when
    another seed covers the basin).
    """
    if seeds_per_axis < 8:
        raise ValueError("seeds_per_axis must be >= 8")
    d = field.dim
    # cell centres plus lattice nodes, so symmetry lines are always seeded
    centres = [lo + (hi - lo) * (np.arange(seeds_per_axis) + 0.5) / seeds_per_axis
               for lo, hi in field.box]
    nodes = [np.linspace(lo, hi, seeds_per_axis + 1) for lo, hi in field.box]
    x = np.concatenate([
        np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        for axes in (centres, nodes)])
    seeds = x.copy()
    width = (field.box[:, 1] - field.box[:, 0]).min()
    active = np.ones(len(x), dtype=bool)
    converged = np.zeros(len(x), dtype=bool)
    extra = np.zeros(len(x), dtype=int)
    for _ in range(max_iter + polish):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        g = field.gradient(x[idx])
        h = field.hessian(x[idx])
        gnorm = np.linalg.norm(g, axis=1)
        newly = gnorm <= newton_tol
        converged[idx[newly]] = True
        extra[idx[converged[idx]]] += 1
        done = converged[idx] & ((extra[idx] > polish) | (gnorm == 0.0))
        active[idx[done]] = False
        keep = ~done
        idx, g, h = idx[keep], g[keep], h[keep]
        if idx.size == 0:
            break
        try:
            step = np.linalg.solve(h, g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.empty_like(g)
            for k in range(len(idx)):
                step[k] = np.linalg.lstsq(h[k], g[k], rcond=None)[0]
        norm = np.linalg.norm(step, axis=1)
        limit = 0.25 * width
        step *= np.minimum(1.0, limit / np.maximum(norm, 1e-300))[:, None]
        x[idx] -= step
        out = ~field.inside(x[idx])
        active[idx[out]] = False
        converged[idx[out]] = False
    ok = converged & field.inside(x)
    failures = [seeds[k] for k in np.flatnonzero(~ok & active)]
    pts = []
    for cand in x[ok]:
        if all(np.linalg.norm(cand - p) > 1e-6 for p in pts):
            pts.append(cand)
    out = []
    for loc in pts:
        ev = np.linalg.eigvalsh(field.hessian(loc))
        if np.abs(ev).min() < degenerate_tol:
            raise DegenerateCritical(
                f"critical point at {loc} has eigenvalue {ev[np.argmin(np.abs(ev))]:.3e}")
        out.append(CriticalPoint(location=loc, value=float(field(loc)),
                                 index=int((ev < 0).sum()), eigenvalues=ev))
    out.sort(key=lambda c: (c.value, tuple(c.location)))
    if return_failures:
        return out, failures
    return out


def check_assumptions(field, criticals, level_sep_tol=1e-6, a5_radius=0.1,
                      n_probes=2000, seed=0):
    """Numerical proxies for the growth, separation and kappa conditions.

    ``K`` is the maximum of ``|grad H|^2`` (the largest eigenvalue of the
    energy-preserving noise) over balls of radius ``a5_radius`` around the
    critical points.
    """
    if not criticals:
        raise ValueError("criticals must be non-empty")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(len(criticals)):
        for j in range(i + 1, len(criticals)):
            sep = abs(criticals[i].value - criticals[j].value) > level_sep_tol
            pairs.append((i, j, bool(sep)))
    xb = field.boundary_probes(rng, max(1, n_probes // (2 * field.dim)))
    r2 = np.einsum("ij,ij->i", xb, xb)
    c1 = float(np.min(field(xb) / r2))
    c2 = float(np.min(np.linalg.norm(field.gradient(xb), axis=1) / np.sqrt(r2)))
    c3 = float(np.min(np.abs(field.laplacian(xb))))
    lam_star = max(float(c.eigenvalues.max()) for c in criticals)
    K = 0.0
    for c in criticals:
        u = rng.normal(size=(n_probes, field.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rad = a5_radius * rng.random(n_probes) ** (1.0 / field.dim)
        g = field.gradient(c.location + rad[:, None] * u)
        K = max(K, float(np.einsum("ij,ij->i", g, g).max()))
    K = max(K, 1e-300)
    return AssumptionReport(
        value_pairs=pairs,
        values_separated=all(p[2] for p in pairs),
        c1=c1, c2=c2, c3=c3,
        growth_ok=c1 > 0 and c2 > 0 and c3 > 0,
        lambda_star=lam_star,
        K=K,
        kappa_bound=1.0 / (K * lam_star),
    )


# ---------------------------------------------------------------------------
# catalog

def _potential(name, dim, func, grad, hess, box, kernel, params):
    return ScalarFieldModel(name, dim, func, grad, hess, box, kernel=kernel, params=params)


def quadratic1d(box=(-3.0, 3.0)):
    return _potential(
        "quadratic1d", 1,
        lambda q: 0.5 * q[..., 0] ** 2,
        lambda q: q.copy(),
        lambda q: np.ones(q.shape[:-1] + (1, 1)),
        [box], (POT_QUADRATIC, (0.0,)), {})


def doublewell1d_tilted(c=0.0, box=(-2.2, 2.2)):
    c = float(c)

    def func(q):
        s = q[..., 0]
        return 0.25 * s ** 4 - 0.5 * s ** 2 + c * s

    def grad(q):
        s = q[..., 0]
        return (s ** 3 - s + c)[..., None]

    def hess(q):
        s = q[..., 0]
        return (3 * s ** 2 - 1)[..., None, None]

    return _potential("doublewell1d_tilted", 1, func, grad, hess, [box],
                      (POT_DW1, (c,)), {"c": c})


def doublewell1d(box=(-2.2, 2.2)):
    f = doublewell1d_tilted(0.0, box)
    f.name = "doublewell1d"
    f.params = {}
    return f


def doublewell2d(c=0.0, box=((-1.8, 1.8), (-0.8, 0.8))):
    """``(q1^2 - 1)^2 + 5 q2^2 + c q1``."""
    c = float(c)

    def func(q):
        a, b = q[..., 0], q[..., 1]
        return (a * a - 1) ** 2 + 5 * b * b + c * a

    def grad(q):
        a, b = q[..., 0], q[..., 1]
        return np.stack([4 * a * (a * a - 1) + c, 10 * b], axis=-1)

    def hess(q):
        a = q[..., 0]
        out = np.zeros(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = 12 * a * a - 4
        out[..., 1, 1] = 10.0
        return out

    return _potential("doublewell2d", 2, func, grad, hess, box, (POT_DW2, (c,)), {"c": c})


def mexican_hat(c=0.1, box=((-1.8, 1.8), (-1.8, 1.8))):
    """``(|q|^2 - 1)^2 + c q1``: one minimum, one saddle, one maximum."""
    c = float(c)

    def func(q):
        r2 = np.sum(q * q, axis=-1)
        return (r2 - 1) ** 2 + c * q[..., 0]

    def grad(q):
        r2 = np.sum(q * q, axis=-1)
        g = 4 * (r2 - 1)[..., None] * q
        g[..., 0] += c
        return g

    def hess(q):
        r2 = np.sum(q * q, axis=-1)
        eye = np.eye(2)
        return 4 * (r2 - 1)[..., None, None] * eye + 8 * q[..., :, None] * q[..., None, :]

    return _potential("mexican_hat", 2, func, grad, hess, box, (POT_HAT, (c,)), {"c": c})


def separable_lift(potential, dp, p_half_width, name=None, z_max=None, params=None):
    """``H(p, q) = |p|^2/2 + F(q)`` with ``p`` in ``[-w, w]^dp``."""
    dq = potential.dim
    d = dp + dq

    def func(x):
        p = x[..., :dp]
        return 0.5 * np.sum(p * p, axis=-1) + potential(x[..., dp:])

    def grad(x):
        return np.concatenate([x[..., :dp], potential.gradient(x[..., dp:])], axis=-1)

    def hess(x):
        out = np.zeros(x.shape[:-1] + (d, d))
        idx = np.arange(dp)
        out[..., idx, idx] = 1.0
        out[..., dp:, dp:] = potential.hessian(x[..., dp:])
        return out

    def lap(x):
        return dp + potential.laplacian(x[..., dp:])

    box = [(-p_half_width, p_half_width)] * dp + [tuple(b) for b in potential.box]
    return ScalarFieldModel(
        name or f"lift({potential.name})", d, func, grad, hess, box, z_max=z_max,
        separable=SeparableTag(dp, potential), laplacian=lap, kernel=potential.kernel,
        params=params if params is not None else dict(potential.params))


def harmonic():
    """``(p^2 + q^2)/2`` in the plane."""
    f = separable_lift(quadratic1d(), 1, 3.0, name="harmonic", z_max=4.0, params={})
    return f


def h2(c=0.0):
    """``p^2/2 + q^4/4 - q^2/2 + c q``."""
    return separable_lift(doublewell1d_tilted(c), 1, 2.0, name="h2", z_max=1.0,
                          params={"c": float(c)})


def sep4d(c=0.0):
    """``|p|^2/2 + doublewell2d(c)`` with ``p`` in the plane."""
    return separable_lift(doublewell2d(c), 2, 2.2, name="sep4d", z_max=2.0,
                          params={"c": float(c)})


def sep4d_hat(c=0.1):
    """``|p|^2/2 + mexican_hat(c)``; the potential maximum lifts to a 1/1 vertex."""
    return separable_lift(mexican_hat(c), 2, 2.2, name="sep4d_hat", z_max=1.5,
                          params={"c": float(c)})


def _with_zmax(f, z_max):
    f.z_max = z_max
    return f


CATALOG = {
    "harmonic": lambda: harmonic(),
    "doublewell1d": lambda: _with_zmax(doublewell1d(), 1.0),
    "doublewell1d_tilted": lambda c=0.0: _with_zmax(doublewell1d_tilted(c), 1.0),
    "doublewell2d": lambda c=0.0: _with_zmax(doublewell2d(c), 2.0),
    "sep4d": lambda c=0.0: sep4d(c),
    "h2": lambda c=0.0: h2(c),
    "mexican_hat": lambda c=0.1: _with_zmax(mexican_hat(c), 1.5),
    "sep4d_hat": lambda c=0.1: sep4d_hat(c),
}


def make_field(name, **params):
    """Build a catalog field by name."""
    try:
        factory = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown field {name!r}; known: {sorted(CATALOG)}") from None
    return factory(**params)
