# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: grid merge-tree sweeps and batched SDE integration.

Semantics follow ``reebsim._fallback`` exactly; only libm rounding may differ.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, log, cos, sin, fabs, M_PI, INFINITY
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

DEF MAXD = 8
DEF MAXN = 64


# ---------------------------------------------------------------------------
# merge trees

cdef inline int64_t _find(int64_t[::1] uf, int64_t a) noexcept nogil:
    while uf[a] != a:
        uf[a] = uf[uf[a]]
        a = uf[a]
    return a


cdef inline int64_t _nbr(int64_t v, int k, int d, int64_t* shape, int64_t* strides,
                         int64_t[:, ::1] offs) noexcept nogil:
    """k-th Freudenthal neighbour of v, or -1 outside the grid."""
    cdef int a
    cdef int64_t c, rem = v, out = 0
    for a in range(d):
        c = rem // strides[a]
        rem = rem - c * strides[a]
        c = c + offs[k, a]
        if c < 0 or c >= shape[a]:
            return -1
        out += c * strides[a]
    return out


cdef void _sweep(int64_t[::1] order, int64_t[::1] rank, int64_t[:, ::1] offs,
                 int64_t* shape, int64_t* strides, int d, cnp.uint8_t[::1] bnd,
                 int64_t[::1] top_nbrs, int64_t n, int64_t[::1] arc,
                 int64_t[::1] parent, cnp.uint8_t[::1] crit, int64_t[::1] uf,
                 int64_t[::1] last) noexcept nogil:
    cdef int64_t i, j, k, v, u, r, rv, nroots, m, cnt
    cdef int64_t roots[MAXN]
    cdef bint seen
    m = offs.shape[0]
    for i in range(n + 1):
        uf[i] = i
        last[i] = -1
        arc[i] = -1
        parent[i] = -1
        crit[i] = 0
    for i in range(n + 1):
        v = order[i]
        rv = rank[v]
        nroots = 0
        if v == n:
            cnt = top_nbrs.shape[0]
        else:
            cnt = m + 1
        for k in range(cnt):
            if v == n:
                u = top_nbrs[k]
            elif k == m:
                u = n if bnd[v] else -1
            else:
                u = _nbr(v, k, d, shape, strides, offs)
            if u < 0 or rank[u] >= rv:
                continue
            r = _find(uf, u)
            seen = False
            for j in range(nroots):
                if roots[j] == r:
                    seen = True
                    break
            if not seen:
                roots[nroots] = r
                nroots += 1
        if nroots == 0:
            crit[v] = 1
            last[v] = v
            arc[v] = v
        elif nroots == 1:
            uf[v] = roots[0]
            arc[v] = last[roots[0]]
        else:
            crit[v] = 1
            for j in range(nroots):
                parent[last[roots[j]]] = v
                uf[roots[j]] = v
            last[v] = v
            arc[v] = v


def merge_trees(values, shape):
    """Join and split trees of a grid function plus a virtual top vertex."""
    from ._fallback import freudenthal_offsets, boundary_mask
    vals = np.ascontiguousarray(values, dtype=np.float64).ravel()
    cdef int64_t n = vals.size
    cdef int d = len(shape)
    if d > MAXD:
        raise ValueError("grid dimension too large")
    cdef int64_t[:, ::1] offs = np.ascontiguousarray(freudenthal_offsets(d))
    cdef int64_t shp[MAXD]
    cdef int64_t strd[MAXD]
    cdef int a
    stride = 1
    for a in range(d - 1, -1, -1):
        shp[a] = shape[a]
        strd[a] = stride
        stride *= shape[a]
    bmask = np.ascontiguousarray(boundary_mask(shape), dtype=np.uint8)
    top = np.ascontiguousarray(np.flatnonzero(bmask), dtype=np.int64)
    ext = np.append(vals, np.inf)
    order = np.ascontiguousarray(np.lexsort((np.arange(n + 1), ext)), dtype=np.int64)
    rank = np.empty(n + 1, dtype=np.int64)
    rank[order] = np.arange(n + 1)
    out = {}
    uf = np.empty(n + 1, dtype=np.int64)
    last = np.empty(n + 1, dtype=np.int64)
    for name, ordr, rk in (("jt", order, rank),
                           ("st", np.ascontiguousarray(order[::-1]), (n - rank).astype(np.int64))):
        arc = np.empty(n + 1, dtype=np.int64)
        parent = np.empty(n + 1, dtype=np.int64)
        crit = np.empty(n + 1, dtype=np.uint8)
        _sweep(ordr, rk, offs, shp, strd, d, bmask, top, n, arc, parent, crit, uf, last)
        out[name + "_arc"] = arc
        out[name + "_parent"] = parent
        out[name + "_crit"] = crit.astype(bool)
    return out


# ---------------------------------------------------------------------------
# random numbers

cdef inline uint64_t _rotl(uint64_t x, int k) noexcept nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t _next(uint64_t* s) noexcept nogil:
    cdef uint64_t result = _rotl(s[1] * 5, 7) * 9
    cdef uint64_t t = s[1] << 17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


cdef inline void _normals(uint64_t* s, double* out, int m) noexcept nogil:
    cdef int k
    cdef double u1, u2, rad
    for k in range(0, m, 2):
        u1 = (<double>(_next(s) >> 11) + 1.0) * 1.1102230246251565e-16
        u2 = <double>(_next(s) >> 11) * 1.1102230246251565e-16
        rad = sqrt(-2.0 * log(u1))
        out[k] = rad * cos(2.0 * M_PI * u2)
        out[k + 1] = rad * sin(2.0 * M_PI * u2)


def xoshiro_next(cnp.uint64_t[:, ::1] s):
    cdef Py_ssize_t i, n = s.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef cnp.uint64_t[::1] o = out
    for i in range(n):
        o[i] = _next(&s[i, 0])
    return out


def normals(cnp.uint64_t[:, ::1] s, int m):
    cdef Py_ssize_t i, n = s.shape[0]
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    for i in range(n):
        _normals(&s[i, 0], &o[i, 0], m)
    return out


# ---------------------------------------------------------------------------
# separable systems

cdef struct Sys:
    int pot
    double c
    int dp
    int d


cdef inline double _energy(Sys* S, double* x) noexcept nogil:
    cdef int k, dp = S.dp
    cdef double e = 0.0, a, b, r2
    for k in range(dp):
        e += 0.5 * x[k] * x[k]
    if S.pot == 0:
        for k in range(dp, S.d):
            e += 0.5 * x[k] * x[k]
    elif S.pot == 1:
        a = x[dp]
        e += 0.25 * a * a * a * a - 0.5 * a * a + S.c * a
    elif S.pot == 2:
        a = x[dp]
        b = x[dp + 1]
        e += (a * a - 1.0) * (a * a - 1.0) + 5.0 * b * b + S.c * a
    else:
        a = x[dp]
        b = x[dp + 1]
        r2 = a * a + b * b
        e += (r2 - 1.0) * (r2 - 1.0) + S.c * a
    return e


cdef inline void _force(Sys* S, double* x, double* f) noexcept nogil:
    """Gradient of F at the q-part of x, written to f[0:dq]."""
    cdef int k, dp = S.dp
    cdef double a, b, r2
    if S.pot == 0:
        for k in range(dp, S.d):
            f[k - dp] = x[k]
    elif S.pot == 1:
        a = x[dp]
        f[0] = a * a * a - a + S.c
    elif S.pot == 2:
        a = x[dp]
        b = x[dp + 1]
        f[0] = 4.0 * a * (a * a - 1.0) + S.c
        f[1] = 10.0 * b
    else:
        a = x[dp]
        b = x[dp + 1]
        r2 = a * a + b * b
        f[0] = 4.0 * (r2 - 1.0) * a + S.c
        f[1] = 4.0 * (r2 - 1.0) * b


cdef inline void _derivs(Sys* S, double* x, double* g, double* hs) noexcept nogil:
    """Gradient and Hessian (row-major d*d)."""
    cdef int i, j, d = S.d, dp = S.dp
    cdef double a, b, r2
    for i in range(d * d):
        hs[i] = 0.0
    for i in range(dp):
        g[i] = x[i]
        hs[i * d + i] = 1.0
    _force(S, x, g + dp)
    if S.pot == 0:
        for i in range(dp, d):
            hs[i * d + i] = 1.0
    elif S.pot == 1:
        a = x[dp]
        hs[dp * d + dp] = 3.0 * a * a - 1.0
    elif S.pot == 2:
        a = x[dp]
        hs[dp * d + dp] = 12.0 * a * a - 4.0
        hs[(dp + 1) * d + dp + 1] = 10.0
    else:
        a = x[dp]
        b = x[dp + 1]
        r2 = a * a + b * b
        hs[dp * d + dp] = 4.0 * (r2 - 1.0) + 8.0 * a * a
        hs[dp * d + dp + 1] = 8.0 * a * b
        hs[(dp + 1) * d + dp] = 8.0 * a * b
        hs[(dp + 1) * d + dp + 1] = 4.0 * (r2 - 1.0) + 8.0 * b * b


cdef inline void _fast_half(Sys* S, double* x, double tau, double* f) noexcept nogil:
    cdef int k, dp = S.dp, dq = S.d - S.dp
    _force(S, x, f)
    for k in range(dp):
        x[k] -= 0.5 * tau * f[k]
    for k in range(dq):
        x[dp + k] += tau * x[k]
    _force(S, x, f)
    for k in range(dp):
        x[k] -= 0.5 * tau * f[k]


cdef inline void _grad(Sys* S, double* x, double* g) noexcept nogil:
    cdef int i
    for i in range(S.dp):
        g[i] = x[i]
    _force(S, x, g + S.dp)


cdef inline void _project(Sys* S, double* x, double target, double* g, double* hs) noexcept nogil:
    cdef int it, k
    cdef double H, g2, corr
    for it in range(3):
        H = _energy(S, x)
        if fabs(H - target) <= 1e-14 * (1.0 + fabs(target)):
            break
        _grad(S, x, g)
        g2 = 0.0
        for k in range(S.d):
            g2 += g[k] * g[k]
        if g2 > 1e-24:
            corr = (H - target) / g2
        else:
            corr = 0.0
        for k in range(S.d):
            x[k] -= corr * g[k]


cdef inline void _linear_field(double* prm, int dp, int d, double* x, double H,
                               double* out) noexcept nogil:
    cdef int k
    for k in range(dp):
        out[k] = -prm[0] * x[k]
    for k in range(dp, d):
        out[k] = -prm[1] * x[k]
    if prm[2] != 0.0:
        for k in range(d):
            out[k] += prm[2] * (prm[3] - H) * x[k]


def sde_run(double[:, ::1] x, cnp.uint64_t[:, ::1] states, long n_steps, double dt,
            double eps, double kappa, double delta, int pot, double c, int dp,
            drift, beta, double sig2, double z_max, double[:, ::1] box,
            double stop_lo, double stop_hi, int obs_kind, int obs_index,
            long record_every, double step_tol, active=None, int num_threads=1):
    """Integrate a batch of trajectories; see ``_fallback.sde_run``."""
    cdef Py_ssize_t n = x.shape[0]
    cdef int d = x.shape[1]
    if d > MAXD:
        raise ValueError("dimension too large for the compiled kernel")
    cdef int m = d + (d % 2)
    cdef double tau = 0.5 * dt / eps
    cdef double sk = sqrt(kappa * dt / eps)
    cdef double sd = sqrt(delta * dt) * sig2
    cdef double[4] bprm
    cdef double[4] eprm
    for k in range(4):
        bprm[k] = drift[k]
        eprm[k] = beta[k]
    cdef long n_rec = 0 if record_every <= 0 else n_steps // record_every + 1
    rec_a = np.zeros((n, n_rec, d))
    rech_a = np.zeros((n, n_rec))
    status_a = np.zeros(n, dtype=np.int64)
    steps_a = np.zeros(n, dtype=np.int64)
    dev_a = np.zeros(n)
    obs_a = np.zeros(n)
    live_a = np.ones(n, dtype=np.uint8) if active is None else np.asarray(active, dtype=np.uint8).copy()
    cdef double[:, :, ::1] rec = rec_a
    cdef double[:, ::1] rech = rech_a
    cdef int64_t[::1] status = status_a
    cdef int64_t[::1] steps = steps_a
    cdef double[::1] dev = dev_a
    cdef double[::1] obs = obs_a
    cdef cnp.uint8_t[::1] live = live_a
    cdef Sys S
    S.pot = pot
    S.c = c
    S.dp = dp
    S.d = d
    cdef Py_ssize_t i
    for i in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
        if live[i]:
            _run_one(&S, &x[i, 0], &states[i, 0], n_steps, tau, dt, eps, kappa, delta,
                     sk, sd, bprm, eprm, z_max, &box[0, 0], stop_lo, stop_hi, obs_kind,
                     obs_index, record_every, n_rec, step_tol, rec, rech, i,
                     &status[i], &steps[i], &dev[i], &obs[i])
    return {"steps": steps_a, "status": status_a, "dev": dev_a, "obs": obs_a,
            "rec": rec_a, "rec_h": rech_a}


cdef void _run_one(Sys* S, double* x, uint64_t* st, long n_steps, double tau, double dt,
                   double eps, double kappa, double delta, double sk, double sd,
                   double* bprm, double* eprm, double z_max, double* box,
                   double stop_lo, double stop_hi, int obs_kind, int obs_index,
                   long record_every, long n_rec, double step_tol,
                   double[:, :, ::1] rec, double[:, ::1] rech, Py_ssize_t row,
                   int64_t* status, int64_t* steps, double* dev, double* obs) noexcept nogil:
    cdef int d = S.d, dp = S.dp, m = S.d + (S.d % 2)
    cdef double g[MAXD]
    cdef double f[MAXD]
    cdef double hs[MAXD * MAXD]
    cdef double xi[2 * MAXD]
    cdef double n1[MAXD]
    cdef double bt[MAXD]
    cdef double df[MAXD]
    cdef double bf[MAXD]
    cdef double H0, z0, z1, H, gn, gw, lap, raw, tgt, hg
    cdef long k
    cdef int a, b
    cdef bint bad, outside
    H0 = _energy(S, x)
    if n_rec > 0:
        for a in range(d):
            rec[row, 0, a] = x[a]
        rech[row, 0] = H0
    for k in range(n_steps):
        z0 = _energy(S, x)
        _fast_half(S, x, tau, f)
        raw = fabs(_energy(S, x) - z0)
        bad = raw > step_tol * (fabs(z0) if fabs(z0) > 1.0 else 1.0)
        _project(S, x, z0, g, hs)
        _normals(st, xi, 2 * m)
        _derivs(S, x, g, hs)
        gn = 0.0
        gw = 0.0
        lap = 0.0
        for a in range(d):
            gn += g[a] * g[a]
            gw += g[a] * xi[a]
            lap += hs[a * d + a]
        gn = sqrt(gn)
        for a in range(d):
            if gn > 0:
                n1[a] = gn * xi[a] - (gw / gn) * g[a]
            else:
                n1[a] = 0.0
            hg = 0.0
            for b in range(d):
                hg += hs[a * d + b] * g[b]
            bt[a] = hg - lap * g[a]
        for a in range(d):
            x[a] += (0.5 * kappa / eps) * bt[a] * dt + sk * n1[a]
        _project(S, x, z0, g, hs)
        H = _energy(S, x)
        _linear_field(bprm, dp, d, x, H, df)
        _linear_field(eprm, dp, d, x, H, bf)
        for a in range(d):
            x[a] += (df[a] + delta * bf[a]) * dt + sd * xi[m + a]
        z1 = _energy(S, x)
        if z1 > z_max:
            tgt = 2.0 * z_max - z1
            _project(S, x, tgt, g, hs)
            z1 = tgt
        _fast_half(S, x, tau, f)
        raw = fabs(_energy(S, x) - z1)
        if raw > step_tol * (fabs(z1) if fabs(z1) > 1.0 else 1.0):
            bad = True
        _project(S, x, z1, g, hs)
        z1 = _energy(S, x)
        steps[0] += 1
        if fabs(z1 - H0) > dev[0]:
            dev[0] = fabs(z1 - H0)
        if obs_kind == 1:
            obs[0] += x[obs_index]
        elif obs_kind == 2:
            obs[0] += x[obs_index] * x[obs_index]
        elif obs_kind == 3:
            if x[obs_index] > 0:
                obs[0] += 1.0
        if n_rec > 0 and (k + 1) % record_every == 0:
            for a in range(d):
                rec[row, (k + 1) // record_every, a] = x[a]
            rech[row, (k + 1) // record_every] = z1
        outside = False
        for a in range(d):
            if x[a] < box[2 * a] or x[a] > box[2 * a + 1]:
                outside = True
        if z1 <= stop_lo:
            status[0] = 1
        if z1 >= stop_hi:
            status[0] = 2
        if outside:
            status[0] = 3
        if bad:
            status[0] = 4
        if status[0] != 0:
            return
