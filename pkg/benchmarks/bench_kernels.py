"""Compiled kernels versus their numpy fallbacks at desk-scale sizes.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from lipase.kernels import _fallback

try:
    from lipase.kernels import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    n = 200_000  # one reference slot
    mag = np.abs(rng.standard_normal((21, 101)) + 1j * rng.standard_normal((21, 101)))
    sig = rng.standard_normal((8, n)) + 1j * rng.standard_normal((8, n))
    ref = rng.standard_normal(n + 20) + 1j * rng.standard_normal(n + 20)
    wave = rng.standard_normal(4 * n + 64) + 1j * rng.standard_normal(4 * n + 64)
    return {
        "cfar_noise 21x101": ("cfar_noise", (mag, 1, 4, 1, 16)),
        "caf_cells 8 ant x 3 cells": ("caf_cells", (sig, ref, np.array([3, 4, 5]), np.array([2, 2, 2]), n)),
        "lerp_uniform 200k": ("lerp_uniform", (wave, 17.3, 4.0, n)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    impls = {"numpy": _fallback}
    if _ckernels is not None:
        impls["cython"] = _ckernels
    print(f"{'kernel':28s}" + "".join(f"{k + ' [ms]':>14s}" for k in impls) + f"{'speedup':>10s}")
    for label, (name, fargs) in cases(rng).items():
        times = {}
        for key, mod in impls.items():
            fn = getattr(mod, name)
            fn(*fargs)  # warm up
            times[key] = min(timeit.repeat(lambda: fn(*fargs), number=1, repeat=args.repeat)) * 1e3
        speed = times["numpy"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:28s}" + "".join(f"{t:14.3f}" for t in times.values()) + f"{speed:10.2f}")
    if _ckernels is None:
        print("Cython extension not built; only the fallback was timed.")


if __name__ == "__main__":
    main()
