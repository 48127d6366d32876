"""Compare the compiled and numpy cutoff kernels on Monte Carlo-sized batches.

    python benchmarks/bench_kernels.py [--rows 20000] [--repeat 5]

Prints the best wall time per kernel and family, and checks that both paths
return identical cutoffs and thresholds.
"""
import argparse
import time

import numpy as np

from mdfcontrol import kernels
from mdfcontrol._accel import HAVE_NUMBA
from mdfcontrol.optsize import RocModel, build_optimal_family
from mdfcontrol.sizefam import SizeFamily


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--q", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    cases = [
        ("sidak M=20", SizeFamily.sidak(20)),
        ("weighted M=20", SizeFamily.weighted(rng.dirichlet(np.ones(20)))),
        ("tabulated M=5", build_optimal_family(RocModel([3.0, 2.0, 1.5, 1.0, 0.5]))),
    ]
    print(f"rows={args.rows} repeat={args.repeat} numba={'yes' if HAVE_NUMBA else 'no'}")
    print(f"{'family':<16}{'kernel':<8}{'numpy s':>10}{'numba s':>10}{'speedup':>9}")
    for label, fam in cases:
        h = fam.invert_hazard(rng.uniform(size=(args.rows, fam.M)) ** 2)
        for name, batch in (("dagger", kernels.batch_j_dagger), ("star", kernels.batch_j_star)):
            t_np, ref = best_time(lambda: batch(h, fam, args.q, use_numba=False), args.repeat)
            if HAVE_NUMBA:
                batch(h[:2], fam, args.q, use_numba=True)  # compile outside the timing
                t_nb, got = best_time(lambda: batch(h, fam, args.q, use_numba=True), args.repeat)
                if not (np.array_equal(ref[0], got[0]) and np.array_equal(ref[1], got[1])):
                    raise SystemExit(f"{label} {name}: numba and numpy results differ")
                print(f"{label:<16}{name:<8}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x")
            else:
                print(f"{label:<16}{name:<8}{t_np:>10.4f}{'-':>10}{'-':>9}")


if __name__ == "__main__":
    main()
