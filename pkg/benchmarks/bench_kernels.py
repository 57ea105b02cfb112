"""Compare the numba kernels with the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 2000 20000] [--repeat 3]
"""

import argparse

from geopulse.bench import kernel_timings

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[2_000, 20_000])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for line in kernel_timings(tuple(args.sizes), args.seed, args.repeat):
        print(line)
