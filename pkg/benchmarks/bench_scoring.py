"""Throughput comparison of the compiled scoring kernels vs the numpy fallback.

Run:  python3 benchmarks/bench_scoring.py [--pairs 131072] [--models 5] [--relations 96]

Blocks are shaped like production scoring chunks (pairs x models x relations,
absent scores pre-filled); numbers are pairs scored per second per kernel.
"""

import argparse
import time

import numpy as np

from dissent._kernels import BACKEND, py_fallback

try:
    from dissent._kernels import _scoring as compiled
except ImportError:
    compiled = None

KERNELS = [
    ("committee_log_scores", lambda impl, block: impl.committee_log_scores(block, 1e-12)),
    ("pair_products", lambda impl, block: impl.pair_products(block)),
    ("ppm_scores", lambda impl, block: impl.ppm_scores(block)),
    ("ppd_scores", lambda impl, block: impl.ppd_scores(block, 1e-12)),
    ("entropy_scores", lambda impl, block: impl.entropy_scores(block)),
]


def time_kernel(fn, impl, block, repeats=5):
    fn(impl, block)  # warm up
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(impl, block)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--pairs", type=int, default=131_072)
    parser.add_argument("--models", type=int, default=5)
    parser.add_argument("--relations", type=int, default=96)
    parser.add_argument("--chunk", type=int, default=8192)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    block = np.ascontiguousarray(rng.random((args.chunk, args.models, args.relations)))
    n_chunks = max(1, args.pairs // args.chunk)

    impls = [("python", py_fallback)]
    if compiled is not None:
        impls.append(("compiled", compiled))
    print(
        f"active backend: {BACKEND}; block {args.chunk} pairs x {args.models} models "
        f"x {args.relations} relations, {n_chunks} chunks per figure\n"
    )
    header = f"{'kernel':>22} " + " ".join(f"{name:>14}" for name, _ in impls)
    if len(impls) == 2:
        header += f" {'speedup':>9}"
    print(header)
    for name, fn in KERNELS:
        per_chunk = [time_kernel(fn, impl, block) for _, impl in impls]
        rates = [args.chunk / t for t in per_chunk]
        row = f"{name:>22} " + " ".join(f"{rate:>11,.0f}/s" for rate in rates)
        if len(rates) == 2:
            row += f" {rates[1] / rates[0]:>8.1f}x"
        print(row)

    # agreement spot check between the two implementations
    if compiled is not None:
        a = py_fallback.committee_log_scores(block, 1e-12)
        b = compiled.committee_log_scores(block, 1e-12)
        print(f"\nmax |python - compiled| on committee_log_scores: {np.abs(a - b).max():.3e}")


if __name__ == "__main__":
    main()
