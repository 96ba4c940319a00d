"""Time the numba kernels against their numpy fallbacks.

Run ``python benchmarks/bench_kernels.py [--repeat R]``.  Each kernel is
checked for agreement before it is timed; the first numba call (compilation
or cache load) is excluded.
"""
import argparse
import time

import numpy as np

from cyforms import _kernels
from cyforms.exterior_algebra import hitchin_table


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    sizes = (16, 16, 16, 16)
    data = rng.standard_normal((4,) + sizes)
    upts = rng.uniform(0, 16, size=(20000, 4))
    yield "interp q=5, 20k pts, 16^4", lambda: _kernels.interp_numpy(data, sizes, upts, 5), \
        lambda: _kernels.interp(data, sizes, upts, 5)

    kvec = rng.integers(-3, 4, size=(300, 4))
    amps = rng.standard_normal((4, 300)) + 1j * rng.standard_normal((4, 300))
    pts = rng.uniform(0, 2 * np.pi, size=(5000, 4))
    yield "fourier 300 modes, 5k pts", lambda: _kernels.fourier_numpy(amps, kvec, pts), \
        lambda: _kernels.fourier(amps, kvec, pts)

    table = hitchin_table()
    rho = rng.standard_normal((20, 8 ** 6 // 4))
    yield "hitchin K, 65k pts", lambda: _kernels.hitchin_K_numpy(rho, table), \
        lambda: _kernels.hitchin_K_field(rho, table)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _kernels.numba is None:
        print("numba is not importable; only the numpy path exists")
        return
    _kernels.USE_NUMBA = True
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, f_np, f_nb in cases(rng):
        ref, got = f_np(), f_nb()
        diff = float(np.max(np.abs(ref - got)))
        t_np, t_nb = best_of(f_np, args.repeat), best_of(f_nb, args.repeat)
        print(f"{name:32s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
