"""Time the deviation kernel backends on an organization-sized series block.

    python3 benchmarks/bench_kernels.py [--series 4800] [--days 210] [--repeat 5]

The default block is 200 users x 24 (feature, frame) series over 210 days,
about what one aspect of the default synthetic run feeds the kernel.
"""
import argparse
import timeit

import numpy as np

from compound_ueba import _kernels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--series", type=int, default=4800)
    ap.add_argument("--days", type=int, default=210)
    ap.add_argument("--omega", type=int, default=14)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    block = rng.poisson(3.0, size=(args.series, args.days)).astype(np.float64)
    reference = None
    for name, fn in sorted(_kernels.BACKENDS.items()):
        out = fn(block, args.omega, 3.0, 0.01, True)
        if reference is None:
            reference = out
        else:
            diff = max(float(np.nanmax(np.abs(a - b))) for a, b in zip(out, reference))
            print(f"{name}: max abs difference vs {sorted(_kernels.BACKENDS)[0]} = {diff:.2e}")
        best = min(timeit.repeat(lambda: fn(block, args.omega, 3.0, 0.01, True), number=1, repeat=args.repeat))
        print(f"{name:>7}: {best * 1e3:8.2f} ms for {args.series} series x {args.days} days")
    print(f"active backend: {_kernels.BACKEND}")


if __name__ == "__main__":
    main()
