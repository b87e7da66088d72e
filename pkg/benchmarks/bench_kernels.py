#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Runs each hot kernel on training-shaped inputs, checks both paths agree,
and prints per-kernel speedups. The training stack picks the path at
import time from HQREC_DISABLE_NUMBA; this script imports both
implementations directly so one process can compare them.
"""

import time

import numpy as np

from hqrec import kernels as K


def _timeit(fn, *args, repeat=200):
    fn(*args)  # warm-up (and JIT compile on the numba path)
    start = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - start) / repeat


def main():
    if not K.USE_NUMBA:
        print("numba path unavailable (HQREC_DISABLE_NUMBA set or numba missing);"
              " nothing to compare")
        return
    try:
        from numba import njit
    except ImportError:
        print("numba not importable; nothing to compare")
        return

    rng = np.random.default_rng(0)
    jit = {
        "softmax_fwd": njit(cache=True)(K._softmax_rows_loop),
        "softmax_bwd": njit(cache=True)(K._softmax_rows_bwd_loop),
        "layer_norm_fwd": njit(cache=True)(K._layer_norm_rows_loop),
        "layer_norm_bwd": njit(cache=True)(K._layer_norm_rows_bwd_loop),
        "gelu_fwd": njit(cache=True)(K._gelu_loop),
        "gelu_bwd": njit(cache=True)(K._gelu_bwd_loop),
        "adamw": njit(cache=True)(K._adamw_update_loop),
    }

    # the training stack calls these on small attention-shaped blocks, many
    # times per step; the large case shows bulk behavior
    for label, (rows, d), repeat in (("small 4x64", (4, 64), 3000),
                                     ("large 512x64", (512, 64), 200)):
        x = rng.standard_normal((rows, d))
        gout = rng.standard_normal((rows, d))
        gain = rng.standard_normal(d)
        xhat, inv_std = K._layer_norm_rows_np(x, 1e-5)
        y = K._softmax_rows_np(x)
        cases = [
            ("softmax_fwd", (x,), K._softmax_rows_np),
            ("softmax_bwd", (y, gout), K._softmax_rows_bwd_np),
            ("layer_norm_fwd", (x, 1e-5), K._layer_norm_rows_np),
            ("layer_norm_bwd", (gout, xhat, inv_std, gain), K._layer_norm_rows_bwd_np),
            ("gelu_fwd", (x,), K._gelu_np),
            ("gelu_bwd", (x, gout), K._gelu_bwd_np),
        ]
        print(f"--- {label} ---")
        print(f"{'kernel':<16} {'numpy':>10} {'numba':>10} {'speedup':>8}")
        for name, args, np_fn in cases:
            got_np = np_fn(*args)
            got_nb = jit[name](*args)
            if not isinstance(got_np, tuple):
                got_np, got_nb = (got_np,), (got_nb,)
            for a, b in zip(got_np, got_nb):
                np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
            t_np = _timeit(np_fn, *args, repeat=repeat)
            t_nb = _timeit(jit[name], *args, repeat=repeat)
            print(f"{name:<16} {t_np*1e6:>8.1f}us {t_nb*1e6:>8.1f}us {t_np/t_nb:>7.2f}x")

    p = rng.standard_normal(200_000)
    g = rng.standard_normal(200_000)
    m = np.zeros_like(p)
    v = np.zeros_like(p)

    # adamw mutates in place: bench on copies, then verify agreement once
    args_np = (p.copy(), g, m.copy(), v.copy(), 1e-3, 0.9, 0.999, 1e-8, 0.01, 0.1, 0.001)
    args_nb = (p.copy(), g, m.copy(), v.copy(), 1e-3, 0.9, 0.999, 1e-8, 0.01, 0.1, 0.001)
    K._adamw_update_np(*args_np)
    jit["adamw"](*args_nb)
    np.testing.assert_allclose(args_np[0], args_nb[0], rtol=1e-10, atol=1e-14)
    t_np = _timeit(lambda: K._adamw_update_np(p.copy(), g, m.copy(), v.copy(),
                                              1e-3, 0.9, 0.999, 1e-8, 0.01, 0.1, 0.001),
                   repeat=50)
    t_nb = _timeit(lambda: jit["adamw"](p.copy(), g, m.copy(), v.copy(),
                                        1e-3, 0.9, 0.999, 1e-8, 0.01, 0.1, 0.001),
                   repeat=50)
    print(f"{'adamw':<16} {t_np*1e6:>8.1f}us {t_nb*1e6:>8.1f}us {t_np/t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
