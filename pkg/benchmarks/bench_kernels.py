"""Compare the numba and numpy kernels on warp and dual-data workloads.

    python3 benchmarks/bench_kernels.py [--size 256] [--frames 5] [--repeat 5]

Both paths are called directly, so DUALRS_NUMBA does not need to change.
Numba compile time is paid in a warm-up call and excluded from timings.
"""

import argparse
import time

import numpy as np

from dualrs import _backend, kernels


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--frames", type=int, default=5)
    ap.add_argument("--channels", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    h = w = args.size
    a = rng.random((h, w, args.channels), dtype=np.float32)
    b = rng.random((h, w, args.channels), dtype=np.float32)
    f1 = rng.uniform(-3, 3, (args.frames, h, w, 2))
    f2 = rng.uniform(-3, 3, (args.frames, h, w, 2))

    if not _backend.USE_NUMBA:
        print("numba unavailable or disabled; timing numpy only")
    cases = {
        "warp": lambda nb: kernels.warp(a, f1, use_numba=nb),
        "dual_data": lambda nb: kernels.dual_data(a, b, f1, f2, 1e-3, True, use_numba=nb),
        "dual_data (no grad)": lambda nb: kernels.dual_data(a, b, f1, f2, 1e-3, False, use_numba=nb),
    }
    print(f"{args.frames}x{h}x{w}x{args.channels}, best of {args.repeat}")
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, fn in cases.items():
        t_np = _best(lambda: fn(False), args.repeat)
        if _backend.USE_NUMBA:
            fn(True)
            t_nb = _best(lambda: fn(True), args.repeat)
            print(f"{name:<22}{t_np * 1e3:>10.1f}{t_nb * 1e3:>10.1f}{t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<22}{t_np * 1e3:>10.1f}{'-':>10}{'-':>9}")


if __name__ == "__main__":
    main()
