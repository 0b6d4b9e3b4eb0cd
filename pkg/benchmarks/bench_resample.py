"""Compiled vs numpy resampling kernel.

    python3 benchmarks/bench_resample.py [--repeat 5]

Times one 3 s clip at 16 kHz through every speed factor of the grid, plus a
44.1 kHz -> 16 kHz load-time resample, on both backends.
"""
import argparse
import time

import numpy as np

from featdecomp import resample
from featdecomp.transforms import SPEED_GRID


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    clip = rng.standard_normal(48000)
    cd = rng.standard_normal(44100 * 3)
    cases = {
        "speed grid (16 factors)": lambda b: [resample.resample_by_step(clip, s.factor, backend=b)
                                              for s in SPEED_GRID],
        "44.1k -> 16k, 3 s": lambda b: resample.resample(cd, 44100, 16000, backend=b),
    }
    backends = ["python"]
    try:
        import featdecomp._resample  # noqa: F401
        backends.insert(0, "cython")
    except ImportError:
        print("compiled extension not built; timing the numpy path only")

    print(f"{'case':<26}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases.items():
        t = {b: best_of(lambda: fn(b), args.repeat) for b in backends}
        row = f"{name:<26}" + "".join(f"{1e3 * t[b]:>10.1f}ms" for b in backends)
        if len(backends) == 2:
            row += f"{t['python'] / t['cython']:>11.1f}x"
        print(row)
    if len(backends) == 2:
        a = resample.resample_by_step(clip, 1.3, backend="cython")
        b = resample.resample_by_step(clip, 1.3, backend="python")
        print(f"max |cython - python| = {np.abs(a - b).max():.2e}")


if __name__ == "__main__":
    main()
