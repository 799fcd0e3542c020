"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--entities 14541] [--batch 128]

Prints the median time per call for each backend and the speedup. Both
backends are checked to agree before timing.
"""

import argparse
import timeit

import numpy as np

from neptune_kg import _kernels_py

try:
    from neptune_kg import _kernels
except ImportError:
    _kernels = None


def make_inputs(n_entities, batch, known_per_row, seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(0, 4, size=(batch, n_entities))
    targets = (rng.random((batch, n_entities)) < 0.001).astype(np.float64)
    true_idx = rng.integers(n_entities, size=batch)
    rows = []
    for t in true_idx:
        known = np.unique(rng.integers(n_entities, size=known_per_row))
        rows.append(known[known != t])
    indptr = np.concatenate([[0], np.cumsum([len(r) for r in rows])]).astype(np.int64)
    indices = np.concatenate(rows).astype(np.int64)
    return logits, targets, true_idx.astype(np.int64), indptr, indices


def median_seconds(fn, repeat):
    return float(np.median(timeit.repeat(fn, number=1, repeat=repeat)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--entities", type=int, default=14541)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--known", type=int, default=50, help="filtered tails per query")
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    logits, targets, true_idx, indptr, indices = make_inputs(
        args.entities, args.batch, args.known, args.seed)
    cases = {
        "bce_logits": lambda mod: mod.bce_logits(logits, targets, 1.0 / args.batch),
        "filtered_ranks": lambda mod: mod.filtered_ranks(logits, true_idx, indptr, indices),
    }
    print(f"batch={args.batch} entities={args.entities} known/query~{args.known}")
    if _kernels is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':<16}{'numpy ms':>11}{'compiled ms':>13}{'speedup':>9}")
    for name, call in cases.items():
        slow = median_seconds(lambda: call(_kernels_py), args.repeat)
        if _kernels is None:
            print(f"{name:<16}{slow * 1e3:>11.3f}{'-':>13}{'-':>9}")
            continue
        a, b = call(_kernels_py), call(_kernels)
        for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
        fast = median_seconds(lambda: call(_kernels), args.repeat)
        print(f"{name:<16}{slow * 1e3:>11.3f}{fast * 1e3:>13.3f}{slow / fast:>8.2f}x")


if __name__ == "__main__":
    main()
