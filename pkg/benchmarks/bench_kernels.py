#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs every hot kernel on pipeline-realistic shapes and prints a table of
per-call times plus the speedup. Both implementations are called directly,
so the result does not depend on SPECCAL_BACKEND.

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

import speccal.kernels as K


def timeit(fn, *args, repeats=30):
    fn(*args)  # warm-up / JIT
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / repeats)
    return best


def cases(rng):
    x1 = rng.normal(size=(64, 1, 32, 32))
    w1 = rng.normal(size=(8, 1, 3, 3))
    b1 = rng.normal(size=8)
    y1 = K.conv2d_fwd(x1, w1, b1)
    g1 = rng.normal(size=y1.shape)
    x2 = rng.normal(size=(64, 8, 16, 16))
    w2 = rng.normal(size=(16, 8, 3, 3))
    b2 = rng.normal(size=16)
    y2 = K.conv2d_fwd(x2, w2, b2)
    g2 = rng.normal(size=y2.shape)
    pool_in = np.maximum(y2, 0)
    _, arg = K.maxpool2_fwd(pool_in)
    gp = rng.normal(size=(64, 16, 8, 8))

    rbin = rng.uniform(2, 29, 24)
    abin = rng.uniform(2, 29, 24)
    power = rng.uniform(0.05, 8.0, 24)

    knots = np.linspace(-2.3, 2.3, 20)
    values = np.sort(rng.normal(0, 0.2, (30, 20)) + knots, axis=1)
    xq = rng.normal(0, 1.2, 4200)

    s = np.sort(rng.normal(0, 3, 4200))
    t = (rng.uniform(size=4200) < 1 / (1 + np.exp(-s))).astype(float)
    distinct = np.unique(s)
    per = np.searchsorted(s, distinct, side="right") - np.searchsorted(s, distinct, side="left")
    cum_tot = np.concatenate([[0.0], np.cumsum(per)])
    cum_pos = np.concatenate([[0.0], np.cumsum(np.add.reduceat(t, np.searchsorted(s, distinct)))])

    z = rng.normal(0, 3, (1500, 7))
    bounds = np.tile(np.linspace(-8, 8, 14), (7, 1))
    reps = np.tile(np.linspace(0.01, 0.97, 15), (7, 1))

    return [
        ("conv2d fwd 64x1x32x32 -> 8", K._conv2d_fwd_nb, K._conv2d_fwd_np, (x1, w1, b1)),
        ("conv2d fwd 64x8x16x16 -> 16", K._conv2d_fwd_nb, K._conv2d_fwd_np, (x2, w2, b2)),
        ("conv2d bwd 64x1x32x32", K._conv2d_bwd_nb, K._conv2d_bwd_np, (x1, w1, g1)),
        ("conv2d bwd 64x8x16x16", K._conv2d_bwd_nb, K._conv2d_bwd_np, (x2, w2, g2)),
        ("maxpool fwd 64x16x16x16", K._maxpool2_fwd_nb, K._maxpool2_fwd_np, (pool_in,)),
        ("maxpool bwd 64x16x8x8", lambda g, a: K._maxpool2_bwd_nb(g, a, 16, 16),
         lambda g, a: K._maxpool2_bwd_np(g, a, 16, 16), (gp, arg)),
        ("render 24 peaks 32x32", lambda r, a, p: K._render_peaks_nb(r, a, p, 32, 32, 3.0),
         lambda r, a, p: K._render_peaks_np(r, a, p, 32, 32, 3.0), (rbin, abin, power)),
        ("interp 30x20 knots @ 4200", K._interp_monotone_nb, K._interp_monotone_np,
         (knots, values, xq)),
        ("binning DP M=4200 B=15", lambda ct, cp: K._binning_dp_nb(ct, cp, 15, 4200.0, float(t.sum())),
         lambda ct, cp: K._binning_dp_np(ct, cp, 15, 4200.0, float(t.sum())), (cum_tot, cum_pos)),
        ("imax apply 1500x7", lambda zz: K._imax_apply_nb(zz, bounds, reps),
         lambda zz: K._imax_apply_np(zz, bounds, reps), (z,)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<34} {'numba':>12} {'numpy':>12} {'speedup':>9}")
    print("-" * 70)
    for name, fn_nb, fn_np, fargs in cases(rng):
        t_nb = timeit(fn_nb, *fargs, repeats=args.repeats)
        t_np = timeit(fn_np, *fargs, repeats=args.repeats)
        print(f"{name:<34} {t_nb * 1e3:>10.3f}ms {t_np * 1e3:>10.3f}ms {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
