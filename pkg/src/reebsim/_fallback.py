"""Pure Python/numpy implementations of the hot kernels.

These define the reference semantics; ``_kernels.pyx`` mirrors them.
"""

import numpy as np

# trajectory status codes
RUNNING = 0
EXIT_LOW = 1
EXIT_HIGH = 2
BOX_EXIT = 3
STEP_TOO_LARGE = 4

# observable codes
OBS_NONE = 0
OBS_COORD = 1
OBS_SQUARE = 2
OBS_POSITIVE = 3

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


# ---------------------------------------------------------------------------
# grid merge trees

def freudenthal_offsets(d):
    """Difference vectors of the Freudenthal triangulation (all-nonneg or all-nonpos)."""
    out = []
    for m in range(1, 2 ** d):
        v = np.array([(m >> k) & 1 for k in range(d)], dtype=np.int64)
        out.append(v)
        out.append(-v)
    return np.array(out, dtype=np.int64)


def boundary_mask(shape):
    """Flat boolean mask of grid vertices on the box boundary."""
    shape = tuple(int(s) for s in shape)
    mask = np.zeros(shape, dtype=bool)
    for a in range(len(shape)):
        idx = [slice(None)] * len(shape)
        idx[a] = 0
        mask[tuple(idx)] = True
        idx[a] = -1
        mask[tuple(idx)] = True
    return mask.ravel()


def neighbor_table(shape):
    """``(n, m + 1)`` neighbour indices; ``-1`` invalid, ``n`` is the virtual top.

    The last column links boundary vertices to the top vertex that stands in
    for the region outside the box.
    """
    shape = tuple(int(s) for s in shape)
    n = int(np.prod(shape))
    d = len(shape)
    coords = np.stack(np.unravel_index(np.arange(n), shape), axis=1)
    offs = freudenthal_offsets(d)
    table = np.full((n, len(offs) + 1), -1, dtype=np.int64)
    dims = np.array(shape)
    for k, off in enumerate(offs):
        c = coords + off
        ok = np.all((c >= 0) & (c < dims), axis=1)
        table[ok, k] = np.ravel_multi_index(tuple(c[ok].T), shape)
    boundary = np.any((coords == 0) | (coords == dims - 1), axis=1)
    table[boundary, -1] = n
    return table


def _sweep(order, nbrs_of, n_total):
    """Union-find sweep in the given order.

    Returns ``arc`` (lower/first critical node of the arc each vertex lies on),
    ``parent`` (next critical node along the tree for critical nodes) and
    ``crit`` flags.
    """
    rank = np.empty(n_total, dtype=np.int64)
    rank[order] = np.arange(n_total)
    uf = list(range(n_total))
    last = [-1] * n_total
    arc = [-1] * n_total
    parent = [-1] * n_total
    crit = [False] * n_total
    rank_l = rank.tolist()

    def find(a):
        while uf[a] != a:
            uf[a] = uf[uf[a]]
            a = uf[a]
        return a

    for v in order.tolist():
        rv = rank_l[v]
        roots = []
        for u in nbrs_of(v):
            if rank_l[u] < rv:
                r = find(u)
                if r not in roots:
                    roots.append(r)
        if not roots:
            crit[v] = True
            last[v] = v
            arc[v] = v
        elif len(roots) == 1:
            r = roots[0]
            uf[v] = r
            arc[v] = last[r]
        else:
            crit[v] = True
            for r in roots:
                parent[last[r]] = v
                uf[r] = v
            last[v] = v
            arc[v] = v
    return (np.array(arc, dtype=np.int64), np.array(parent, dtype=np.int64),
            np.array(crit, dtype=bool))


def merge_trees(values, shape):
    """Join and split trees of a grid function plus a virtual top vertex.

    Ties are broken by flat index (simulation of simplicity).
    """
    values = np.ascontiguousarray(values, dtype=float).ravel()
    n = values.size
    table = neighbor_table(shape)
    boundary = np.flatnonzero(table[:, -1] == n)
    top_nbrs = boundary.tolist()
    rows = [[u for u in row if u >= 0] for row in table.tolist()]

    def nbrs_of(v):
        return top_nbrs if v == n else rows[v]

    ext = np.append(values, np.inf)
    order = np.lexsort((np.arange(n + 1), ext))
    jt = _sweep(order, nbrs_of, n + 1)
    st = _sweep(order[::-1].copy(), nbrs_of, n + 1)
    return {"jt_arc": jt[0], "jt_parent": jt[1], "jt_crit": jt[2],
            "st_arc": st[0], "st_parent": st[1], "st_crit": st[2]}


# ---------------------------------------------------------------------------
# random numbers

def _rotl(x, k):
    return ((x << np.uint64(k)) | (x >> np.uint64(64 - k))) & _MASK


def xoshiro_next(s):
    """Advance ``(n, 4)`` xoshiro256** states in place; returns ``n`` outputs."""
    s0, s1, s2, s3 = s[:, 0].copy(), s[:, 1].copy(), s[:, 2].copy(), s[:, 3].copy()
    with np.errstate(over="ignore"):
        result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    s[:, 0], s[:, 1], s[:, 2], s[:, 3] = s0, s1, s2, s3
    return result


def normals(s, m):
    """``(n, m)`` standard normals by Box-Muller, ``m`` even."""
    out = np.empty((s.shape[0], m))
    for k in range(0, m, 2):
        r1 = xoshiro_next(s)
        r2 = xoshiro_next(s)
        u1 = ((r1 >> np.uint64(11)).astype(float) + 1.0) * 2.0 ** -53
        u2 = (r2 >> np.uint64(11)).astype(float) * 2.0 ** -53
        rad = np.sqrt(-2.0 * np.log(u1))
        out[:, k] = rad * np.cos(2.0 * np.pi * u2)
        out[:, k + 1] = rad * np.sin(2.0 * np.pi * u2)
    return out


# ---------------------------------------------------------------------------
# separable potentials (mirrors the C implementations)

def potential(pot, c, q):
    """Value, gradient, Hessian and Laplacian of a catalog potential at ``(n, dq)``."""
    n, dq = q.shape
    hess = np.zeros((n, dq, dq))
    if pot == 0:
        val = 0.5 * np.sum(q * q, axis=1)
        grad = q.copy()
        hess[:, np.arange(dq), np.arange(dq)] = 1.0
    elif pot == 1:
        s = q[:, 0]
        val = 0.25 * s ** 4 - 0.5 * s ** 2 + c * s
        grad = (s ** 3 - s + c)[:, None]
        hess[:, 0, 0] = 3 * s * s - 1
    elif pot == 2:
        a, b = q[:, 0], q[:, 1]
        val = (a * a - 1) ** 2 + 5 * b * b + c * a
        grad = np.stack([4 * a * (a * a - 1) + c, 10 * b], axis=1)
        hess[:, 0, 0] = 12 * a * a - 4
        hess[:, 1, 1] = 10.0
    elif pot == 3:
        r2 = np.sum(q * q, axis=1)
        val = (r2 - 1) ** 2 + c * q[:, 0]
        grad = 4 * (r2 - 1)[:, None] * q
        grad[:, 0] += c
        hess = 4 * (r2 - 1)[:, None, None] * np.eye(2) + 8 * q[:, :, None] * q[:, None, :]
    else:
        raise ValueError(f"unknown potential {pot}")
    return val, grad, hess


class SeparableSystem:
    """``H = |p|^2/2 + F(q)`` evaluated in closed form."""

    def __init__(self, pot, c, dp):
        self.pot, self.c, self.dp = int(pot), float(c), int(dp)

    def energy(self, x):
        p = x[:, :self.dp]
        return 0.5 * np.sum(p * p, axis=1) + potential(self.pot, self.c, x[:, self.dp:])[0]

    def derivs(self, x):
        dp = self.dp
        d = x.shape[1]
        val, gq, hq = potential(self.pot, self.c, x[:, dp:])
        p = x[:, :dp]
        H = 0.5 * np.sum(p * p, axis=1) + val
        g = np.concatenate([p, gq], axis=1)
        hess = np.zeros((x.shape[0], d, d))
        hess[:, np.arange(dp), np.arange(dp)] = 1.0
        hess[:, dp:, dp:] = hq
        return H, g, hess

    def force(self, q):
        return potential(self.pot, self.c, q)[1]

    def fast_half(self, x, tau):
        """Leapfrog over fast time ``tau`` (kick-drift-kick)."""
        dp = self.dp
        p, q = x[:, :dp], x[:, dp:]
        p = p - 0.5 * tau * self.force(q)
        q = q + tau * p
        p = p - 0.5 * tau * self.force(q)
        return np.concatenate([p, q], axis=1)


def _linear_field(params, x, H):
    lam_p, lam_q, mu, zstar, dp = params
    out = np.empty_like(x)
    out[:, :dp] = -lam_p * x[:, :dp]
    out[:, dp:] = -lam_q * x[:, dp:]
    if mu != 0.0:
        out += (mu * (zstar - H))[:, None] * x
    return out


def project_level(system, x, target, iters=3):
    """Newton steps along the gradient onto ``H = target``."""
    for _ in range(iters):
        H, g, _ = system.derivs(x)
        g2 = np.sum(g * g, axis=1)
        ok = (g2 > 1e-24) & (np.abs(H - target) > 1e-14 * (1.0 + np.abs(target)))
        corr = np.where(ok, (H - target) / np.where(ok, g2, 1.0), 0.0)
        x = x - corr[:, None] * g
    return x


def sde_run(x, states, n_steps, dt, eps, kappa, delta, pot, c, dp, drift, beta, sig2,
            z_max, box, stop_lo, stop_hi, obs_kind, obs_index, record_every,
            step_tol, active=None):
    """Integrate a batch of trajectories of the fast-slow SDE.

    ``drift`` and ``beta`` are ``(lam_p, lam_q, mu, zstar)`` tuples of the
    linear drift family.  Arrays ``x`` and ``states`` are updated in place.
    Returns a dict with per-trajectory step counts, status, max level
    deviation, observable sums and recorded paths.
    """
    n, d = x.shape
    system = SeparableSystem(pot, c, dp)
    drift = tuple(drift) + (dp,)
    beta = tuple(beta) + (dp,)
    m = d + (d % 2)
    tau = 0.5 * dt / eps
    sk = np.sqrt(kappa * dt / eps)
    sd = np.sqrt(delta * dt) * sig2
    n_rec = 0 if record_every <= 0 else n_steps // record_every + 1
    rec = np.zeros((n, n_rec, d))
    rec_h = np.zeros((n, n_rec))
    status = np.zeros(n, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    dev = np.zeros(n)
    obs = np.zeros(n)
    H0 = system.energy(x)
    lo, hi = box[:, 0], box[:, 1]
    live = np.ones(n, dtype=bool) if active is None else active.copy()
    if n_rec:
        rec[:, 0] = x
        rec_h[:, 0] = H0

    def observable(xx):
        if obs_kind == OBS_COORD:
            return xx[:, obs_index]
        if obs_kind == OBS_SQUARE:
            return xx[:, obs_index] ** 2
        if obs_kind == OBS_POSITIVE:
            return (xx[:, obs_index] > 0).astype(float)
        return np.zeros(xx.shape[0])

    for k in range(n_steps):
        idx = np.flatnonzero(live)
        if idx.size == 0:
            break
        xs = x[idx]
        st = states[idx]
        z0 = system.energy(xs)
        xs = system.fast_half(xs, tau)
        raw = np.abs(system.energy(xs) - z0)
        bad = raw > step_tol * np.maximum(1.0, np.abs(z0))
        xs = project_level(system, xs, z0)
        # energy-preserving noise, projected back to its level
        xi = normals(st, 2 * m)
        H, g, hess = system.derivs(xs)
        gn = np.sqrt(np.sum(g * g, axis=1))
        w1 = xi[:, :d]
        gw = np.sum(g * w1, axis=1)
        safe = np.where(gn > 0, gn, 1.0)
        noise1 = gn[:, None] * w1 - (gw / safe)[:, None] * g
        lap = np.trace(hess, axis1=1, axis2=2)
        btil = np.einsum("nij,nj->ni", hess, g) - lap[:, None] * g
        xs = xs + (0.5 * kappa / eps) * btil * dt + sk * noise1
        xs = project_level(system, xs, z0)
        # slow drift and energy-changing noise
        H = system.energy(xs)
        xs = xs + (_linear_field(drift, xs, H) + delta * _linear_field(beta, xs, H)) * dt \
            + sd * xi[:, m:m + d]
        z1 = system.energy(xs)
        over = z1 > z_max
        if over.any():
            tgt = np.where(over, 2 * z_max - z1, z1)
            xs = project_level(system, xs, tgt)
            z1 = np.where(over, tgt, z1)
        xs = system.fast_half(xs, tau)
        raw2 = np.abs(system.energy(xs) - z1)
        bad |= raw2 > step_tol * np.maximum(1.0, np.abs(z1))
        xs = project_level(system, xs, z1)
        z1 = system.energy(xs)
        x[idx] = xs
        states[idx] = st
        steps[idx] += 1
        dev[idx] = np.maximum(dev[idx], np.abs(z1 - H0[idx]))
        obs[idx] += observable(xs)
        if n_rec and (k + 1) % record_every == 0:
            j = (k + 1) // record_every
            rec[idx, j] = xs
            rec_h[idx, j] = z1
        outside = ~np.all((xs >= lo) & (xs <= hi), axis=1)
        code = np.zeros(idx.size, dtype=np.int64)
        code[z1 <= stop_lo] = EXIT_LOW
        code[z1 >= stop_hi] = EXIT_HIGH
        code[outside] = BOX_EXIT
        code[bad] = STEP_TOO_LARGE
        status[idx] = code
        live[idx[code != RUNNING]] = False
    return {"steps": steps, "status": status, "dev": dev, "obs": obs,
            "rec": rec, "rec_h": rec_h}
