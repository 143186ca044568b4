"""Compiled kernels against the pure-Python fallback.

Times the SDE step kernel (ns per step per trajectory) and the join/split
tree sweep on a 2D grid, checks that both backends agree, and prints a table.

    python3 benchmarks/bench_kernels.py [--traj 64] [--steps 2000] [--grid 256]
"""

import argparse
import time

import numpy as np

from reebsim import _backend, _fallback
from reebsim import rng as rngmod
from reebsim.morse import make_field
from reebsim.perturbations import LinearDrift
from reebsim.sde import SdeConfig, run_batch


def bench_sde(name, n_traj, n_steps, **params):
    f = make_field(name, **params)
    x0 = f.uniform(rngmod.generator(0, "start", 0), 50 * n_traj)
    x0 = x0[f(x0) < 0.5 * f.z_max][:n_traj]
    cfg = SdeConfig(eps=1e-3, kappa=0.05, delta=1e-2, T=n_steps * 2e-5, dt=2e-5,
                    drift=LinearDrift(0.5, 0.0, dp=f.separable.dp))
    out = {}
    for backend in ("python", "cython"):
        if backend == "cython" and not _backend.COMPILED:
            continue
        t0 = time.perf_counter()
        x, _ = run_batch(f, cfg, x0, backend=backend)
        sec = time.perf_counter() - t0
        out[backend] = (sec * 1e9 / (n_traj * n_steps), x)
    return out


def bench_trees(n):
    g = np.linspace(-1.5, 1.5, n)
    Q1, Q2 = np.meshgrid(g, g, indexing="ij")
    vals = (Q1 ** 2 - 1) ** 2 + Q2 ** 2 + 0.1 * Q1
    out = {}
    t0 = time.perf_counter()
    ref = _fallback.merge_trees(vals, vals.shape)
    out["python"] = (time.perf_counter() - t0, ref)
    if _backend.COMPILED:
        kern = _backend.get("cython")
        t0 = time.perf_counter()
        res = kern.merge_trees(vals, vals.shape)
        out["cython"] = (time.perf_counter() - t0, res)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--traj", type=int, default=64)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--grid", type=int, default=256)
    args = ap.parse_args()
    print(f"compiled backend available: {_backend.COMPILED}")
    print(f"{'kernel':<28}{'python':>14}{'cython':>14}{'speedup':>10}")
    for name, params in (("h2", {}), ("sep4d", {"c": 0.1})):
        r = bench_sde(name, args.traj, args.steps, **params)
        py = r["python"][0]
        cy = r.get("cython", (float("nan"), None))[0]
        agree = ""
        if "cython" in r:
            agree = f"  max|dx| = {np.max(np.abs(r['python'][1] - r['cython'][1])):.1e}"
        print(f"{'sde ' + name + ' (ns/step/traj)':<28}{py:>14.0f}{cy:>14.0f}{py / cy:>10.1f}"
              + agree)
    r = bench_trees(args.grid)
    py = r["python"][0]
    cy = r.get("cython", (float("nan"), None))[0]
    same = ""
    if "cython" in r:
        a, b = r["python"][1], r["cython"][1]
        same = "  identical" if all(np.array_equal(u, v) for u, v in zip(a, b)) else "  DIFFER"
    print(f"{f'merge trees {args.grid}^2 (s)':<28}{py:>14.3f}{cy:>14.3f}{py / cy:>10.1f}" + same)


if __name__ == "__main__":
    main()
