"""Compiled vs pure-Python QP kernel timings.

Usage: python3 benchmarks/bench_qp.py [--instances 50] [--seed 0]

Both kernels solve the same random instances; the script checks that the
solutions agree and prints the mean time per solve for each size class.
"""

import argparse
import time

import numpy as np

from frs_coord import qpsolver
from frs_coord.verify import random_qp

# (label, n, m): safety-filter sizes for 1 and 4 agents, then MPC sizes
SIZES = [
    ("filter, 1 agent", 2, 5),
    ("filter, 4 agents", 8, 20),
    ("mpc, N=5 trot", 30, 60),
    ("mpc, N=5 stand", 60, 120),
]


def time_kernel(problems, kernel):
    sols = []
    t0 = time.perf_counter()
    for p in problems:
        sols.append(qpsolver.solve(p, kernel=kernel))
    return (time.perf_counter() - t0) / len(problems), sols


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if qpsolver._qpcore is None:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(args.seed)
    print(f"{'size':<18}{'n':>4}{'m':>5}{'python ms':>12}{'cython ms':>12}{'speedup':>9}{'max |dx|':>11}")
    for label, n, m in SIZES:
        problems = [random_qp(rng, n=n, m=m) for _ in range(args.instances)]
        t_py, s_py = time_kernel(problems, "python")
        t_cy, s_cy = time_kernel(problems, "cython")
        dx = max(float(np.max(np.abs(a.x - b.x))) for a, b in zip(s_py, s_cy))
        print(f"{label:<18}{n:>4}{m:>5}{1e3 * t_py:>12.3f}{1e3 * t_cy:>12.3f}{t_py / t_cy:>9.1f}{dx:>11.1e}")


if __name__ == "__main__":
    main()
