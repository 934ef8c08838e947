"""Compare the compiled matcher kernel against the pure-Python fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --captions 500 --claims 80

The workload mirrors real scoring: one tokenized caption checked against
a batch of short claim phrases. Both backends are cross-checked for
identical answers before timing.
"""
from __future__ import annotations

import argparse
import random
import statistics
import time

import numpy as np

from captionrl.kernels import BACKEND, pure

try:
    from captionrl.kernels import _matchkernel as compiled
except ImportError:
    compiled = None


def make_workload(seed: int, captions: int, claims: int, vocab: int):
    """(haystack, needles) pairs as int32 arrays, the kernel's native input."""
    rng = random.Random(seed)
    work = []
    for _ in range(captions):
        haystack = [rng.randrange(vocab) for _ in range(rng.randint(80, 400))]
        needles = []
        for _ in range(claims):
            if rng.random() < 0.5 and len(haystack) > 6:
                # Planted phrase: guaranteed hit.
                start = rng.randrange(len(haystack) - 4)
                needle = haystack[start : start + rng.randint(1, 4)]
            else:
                needle = [rng.randrange(vocab) for _ in range(rng.randint(1, 4))]
            needles.append(np.asarray(needle, dtype=np.int32))
        work.append((np.asarray(haystack, dtype=np.int32), needles))
    return work


def run_backend(module, work) -> float:
    start = time.perf_counter()
    for haystack, needles in work:
        module.batch_contains(haystack, needles)
    return time.perf_counter() - start


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--captions", type=int, default=200)
    parser.add_argument("--claims", type=int, default=40)
    parser.add_argument("--vocab", type=int, default=5000)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    work = make_workload(args.seed, args.captions, args.claims, args.vocab)

    backends = [("pure", pure)]
    if compiled is not None:
        backends.append(("compiled", compiled))
        for haystack, needles in work[:20]:
            assert compiled.batch_contains(haystack, needles) == pure.batch_contains(
                haystack, needles
            ), "backends disagree"
    else:
        print("compiled kernel not built; timing the fallback only")

    print(f"active backend at import: {BACKEND}")
    print(f"workload: {args.captions} captions x {args.claims} claims, "
          f"{args.repeats} repeats\n")

    timings = {}
    for name, module in backends:
        runs = [run_backend(module, work) for _ in range(args.repeats)]
        timings[name] = statistics.median(runs)
        per_call = timings[name] / (args.captions * args.claims) * 1e6
        print(f"{name:>9}: {timings[name] * 1e3:8.2f} ms median  "
              f"({per_call:.2f} us per claim check)")

    if "compiled" in timings:
        print(f"\nspeedup: {timings['pure'] / timings['compiled']:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
