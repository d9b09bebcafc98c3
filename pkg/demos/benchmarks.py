"""
Desk-scale benchmark runs: collinear swamp, border rank, high-order CPD.

    python demos/benchmarks.py            # small swamp instance, quick
    python demos/benchmarks.py --size 100 # the acceptance size
"""

import argparse
import time

from cpdkit.generators import border_rank_pair, random_kruskal, swamp_tensor
from cpdkit.solver import SolverOptions, cpd, relative_error
from cpdkit.tt import cpd_via_tt


def timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def swamp(size, runs):
    noisy, clean = swamp_tensor((size,) * 3, 10, 0.5, 0.01, seed=0)
    for refine in (False, True):
        opts = dict(refine=True, maxiter=500, tol=1e-8) if refine else {}
        errs = []
        for s in range(runs):
            (k, _), dt = timed(cpd, noisy, 10, SolverOptions(seed=s, **opts))
            errs.append(relative_error(clean, k))
        label = "compressed + refine" if refine else "compressed only"
        print(f"swamp {size}^3 {label:>20}: best {min(errs):.4f} (last solve {dt:.1f} s)")


def border(runs):
    limit, _ = border_rank_pair((10, 10, 10), seed=0)
    errs = [relative_error(limit, cpd(limit, 2, SolverOptions(seed=s))[0]) for s in range(runs)]
    print(f"border rank, rank-2 fits: best {min(errs):.2e} over {runs} runs")


def high_order(order):
    t = random_kruskal((10,) * order, 5, seed=0).full()
    (k_tt, _), t_tt = timed(cpd_via_tt, t, 5, SolverOptions(seed=0))
    (k_d, _), t_d = timed(cpd, t, 5, SolverOptions(seed=0))
    print(f"order {order}: tensor train {relative_error(t, k_tt):.1e} in {t_tt:.3f} s, "
          f"direct {relative_error(t, k_d):.1e} in {t_d:.3f} s")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--size", type=int, default=40)
    p.add_argument("--runs", type=int, default=3)
    args = p.parse_args()
    swamp(args.size, args.runs)
    border(20)
    for L in (4, 5, 6):
        high_order(L)
