"""Time each kernel on its numba and numpy paths and check they agree.

Usage: python3 benchmarks/bench_kernels.py [--size N] [--repeat R]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from vdtn import kernels


def _inputs(n: int, rng: np.random.Generator) -> dict:
    # queues reach the oracle in arbitrary order; channel logs arrive nearly time-sorted
    enq = rng.integers(0, 10_000, n)
    base = rng.integers(11, 36, n).astype(np.float64)
    eff = kernels.np_effective_priorities(base, enq, 12_000, 100, 1.0, 11.0)
    starts = np.sort(rng.uniform(0, 50_000, n))
    ends = starts + rng.integers(1, 20, n)
    return {
        "effective_priorities": (base, enq, 12_000, 100, 1.0, 11.0),
        "priority_order": (eff, enq, rng.permutation(n)),
        "max_window_served": (starts, ends, rng.integers(1, 9, n).astype(np.float64), 100),
        "standardize_columns": (rng.normal(5, 3, (n, 4)),),
        "busy_per_slot": (rng.integers(0, 20, n), starts, ends, 20),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    cases = _inputs(args.size, np.random.default_rng(0))
    print(f"n={args.size}, best of {args.repeat}; active backend: {kernels.BACKEND}")
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call_args in cases.items():
        np_fn = getattr(kernels, f"np_{name}")
        nb_fn = getattr(kernels, f"nb_{name}")
        a, b = np_fn(*call_args), nb_fn(*call_args)  # also warms the JIT
        assert np.allclose(a, b), name
        t_np = min(timeit.repeat(lambda: np_fn(*call_args), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: nb_fn(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<22}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
