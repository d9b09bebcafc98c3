"""
Rank-3 CPD of a sampled smooth function, step by step.

Compress with the truncated MLSVD, start from the largest core entries,
iterate damped Gauss-Newton on the core and map the factors back.
"""

import numpy as np

from cpdkit.core import multilinear_multiply
from cpdkit.generators import warmup_tensor
from cpdkit.mlsvd import compress, reconstruct
from cpdkit.solver import SolverOptions, dgn, initialize, relative_error, uncompress


def main(seed=7):
    t = warmup_tensor()
    res = compress(t, 3, 1e-6)
    err = np.linalg.norm(t - reconstruct(res)) / np.linalg.norm(t)
    print(f"tensor {t.shape}, core {res.trunc_dims}, truncation error {err:.3e}")

    k0 = initialize(res.core, 3, "mlsvd")
    start = multilinear_multiply(res.bases, k0.full())
    print("initial weights", np.round(k0.weights, 2),
          f"initial error {np.linalg.norm(t - start) / np.linalg.norm(t):.4f}")

    k, st = dgn(res.core, k0, SolverOptions(seed=seed))
    print(f"{'iter':>4} {'rel_error':>11} {'damping':>10} {'gain':>9} {'cg':>3}")
    for i, (e, mu, g, n) in enumerate(zip(st.rel_error, st.damping, st.gain_ratio,
                                          st.cg_iters), 1):
        print(f"{i:>4} {e:>11.3e} {mu:>10.2e} {g:>9.3f} {n:>3}")
    k = uncompress(k, res).normalized()
    print(f"stop: {st.stop_reason}; error on the full tensor {relative_error(t, k):.3e}")


if __name__ == "__main__":
    main()
