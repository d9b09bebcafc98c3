"""
Tensor trains and CPD through a tensor train.

Cores follow the toolkit's first-index-fastest layout: the first core is a
matrix I_1 x r_1, middle cores are r_{l-1} x I_l x r_l arrays and the last
core is r_{L-1} x I_L.

`cpd_via_tt` reduces a rank-R CPD of an order-L tensor to one third-order
CPD plus L - 3 third-order CPDs with a fixed first factor.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .core import KruskalTensor, as_tensor, contract
from .solver import SolveStats, SolverOptions, cpd, dgn

__all__ = ["TtCores", "tt_svd", "tt_full", "cpd_train_cores", "bi_cpd",
           "cpd_via_tt", "pad_tensor"]


@dataclass
class TtCores:
    cores: list

    @property
    def ranks(self):
        return [c.shape[-1] for c in self.cores[:-1]]

    @property
    def dims(self):
        c = self.cores
        if len(c) == 1:
            return (c[0].shape[0],)
        return (c[0].shape[0],) + tuple(g.shape[1] for g in c[1:-1]) + (c[-1].shape[1],)

    def full(self):
        return tt_full(self)


def tt_svd(t, rank_cap, rel_cutoff=1e-12):
    """
    Successive SVDs and reshapes.

    Each link keeps the singular values above rel_cutoff * sigma_max, at most
    rank_cap of them.
    """
    t = as_tensor(t)
    if rank_cap < 1:
        raise ValueError("rank_cap must be at least 1")
    dims = t.shape
    L = len(dims)
    if L == 1:
        return TtCores([t.reshape(-1, 1)])
    cores = []
    c = t
    r_prev = 1
    for l in range(L - 1):
        m = np.reshape(c, (r_prev * dims[l], -1), order="F")
        u, s, vt = np.linalg.svd(m, full_matrices=False)
        keep = int(np.sum(s > rel_cutoff * s[0])) if s[0] > 0 else 1
        r = max(1, min(keep, rank_cap))
        g = np.reshape(u[:, :r], (r_prev, dims[l], r), order="F")
        cores.append(g[0] if l == 0 else g)
        c = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(np.reshape(c, (r_prev, dims[-1]), order="F"))
    return TtCores(cores)


def tt_full(tt):
    """Chained contraction of the cores."""
    cores = tt.cores if isinstance(tt, TtCores) else tt
    out = cores[0]
    for g in cores[1:]:
        out = contract(out, out.ndim - 1, g, 0)
    return out


def cpd_train_cores(k):
    """
    Tensor train whose cores carry the CPD factors.

    First core W_1 diag(lambda), middle cores sum_r e_r x w_r^(l) x e_r,
    last core W_L^T.
    """
    f = k.factors
    R = k.rank
    if len(f) == 1:
        return TtCores([(f[0] * k.weights).sum(axis=1, keepdims=True)])
    cores = [f[0] * k.weights]
    idx = np.arange(R)
    for w in f[1:-1]:
        g = np.zeros((R, w.shape[0], R))
        g[idx, :, idx] = w.T
        cores.append(g)
    cores.append(f[-1].T.copy())
    return TtCores(cores)


def bi_cpd(g, fixed_first, R, options=None, k0=None):
    """
    Rank-R CPD of the order-3 tensor g with the first factor held fixed.

    Returns (W, M): the second factor (I x R) and the third factor (R x R).
    """
    g = as_tensor(g)
    fixed_first = np.asarray(fixed_first, dtype=np.float64)
    if g.ndim != 3:
        raise ValueError("bi_cpd expects an order-3 tensor")
    if fixed_first.shape != (g.shape[0], R):
        raise ValueError(f"fixed factor must have shape {(g.shape[0], R)}")
    options = options or SolverOptions()
    if not np.any(g):
        return np.zeros((g.shape[1], R)), np.zeros((g.shape[2], R))
    if k0 is None:
        k0 = _fixed_first_start(g, fixed_first, R, options.seed)
    else:
        k0 = KruskalTensor([fixed_first] + [np.asarray(w, float) for w in k0])
    k, _ = dgn(g, k0, options, frozen=(0,))
    return k.factors[1], k.factors[2]


def _fixed_first_start(g, a, R, seed):
    """
    Starting point for the fixed-first-factor CPD.

    With A fixed, g contracted with pinv(A) along mode 0 gives R matrices
    that would be exactly rank one at the solution; their leading singular
    pairs initialize the free factors.
    """
    slices = np.tensordot(np.linalg.pinv(a), g, axes=(1, 0))   # R x I x R
    w = np.empty((g.shape[1], R))
    m = np.empty((g.shape[2], R))
    rng = np.random.default_rng(seed)
    for r in range(R):
        u, s, vt = np.linalg.svd(slices[r], full_matrices=False)
        if s[0] > 0:
            w[:, r] = u[:, 0] * np.sqrt(s[0])
            m[:, r] = vt[0] * np.sqrt(s[0])
        else:
            w[:, r] = rng.standard_normal(g.shape[1])
            m[:, r] = rng.standard_normal(g.shape[2])
    return KruskalTensor([a, w, m])


def pad_tensor(t, dims, scale, rng):
    """Embed t in a larger array; new entries are scale * N(0, 1)."""
    out = scale * rng.standard_normal(dims)
    out[tuple(slice(0, d) for d in t.shape)] = t
    return out


def cpd_via_tt(t, R, options=None, inner_options=None):
    """
    Rank-R CPD of an order >= 4 tensor through its tensor train.

    Modes smaller than R are padded with tiny noise, the tensor goes through
    TT-SVD with every link rank equal to R, and the factors come from a CPD
    of the second core followed by fixed-first-factor CPDs of the remaining
    middle cores. Orders below 4 are handed to `cpd`.

    `inner_options` drive the L - 2 third-order solves. By default they copy
    `options`, split tol evenly across the solves and start the second-core
    CPD from the energy initialization.
    """
    options = options or SolverOptions()
    t = as_tensor(t)
    L = t.ndim
    if L <= 3:
        warnings.warn("tensor-train path needs order >= 4; using dgn")
        return cpd(t, R, options)
    if R > max(t.shape):
        raise ValueError(f"rank {R} exceeds every dimension {t.shape}; "
                         "the tensor-train path needs R <= I_l for some l")
    if inner_options is None:
        inner_options = SolverOptions(**{**options.__dict__, "init": "mlsvd",
                                         "tol": options.tol / (L - 2)})
    inner = inner_options
    stats = SolveStats(seed=options.seed)
    rng = np.random.default_rng(options.seed)

    t0 = time.perf_counter()
    small = tuple(t.shape)
    padded = tuple(max(d, R) for d in small)
    work = t
    if padded != small:
        scale = 1e-8 * np.linalg.norm(t) / np.sqrt(t.size)
        work = pad_tensor(t, padded, scale, rng)
    tt = tt_svd(work, R, rel_cutoff=0.0)
    stats.trunc_dims = padded
    stats.timings["compress"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    cores = tt.cores
    g2 = cores[1]
    sub = SolverOptions(**{**inner.__dict__, "seed": int(rng.integers(2**31))})
    k2, st2 = cpd(g2, R, sub)
    k2 = k2.absorb_weights()
    a, w2, m_prev = k2.factors
    factors = [cores[0] @ a, w2]
    for l in range(2, L - 1):
        fixed = np.linalg.inv(m_prev).T
        sub = SolverOptions(**{**inner.__dict__, "seed": int(rng.integers(2**31))})
        w, m_prev = bi_cpd(cores[l], fixed, R, sub)
        factors.append(w)
    factors.append(cores[-1].T @ m_prev)
    stats.timings["iterate"] = time.perf_counter() - t0
    stats.rel_error = list(st2.rel_error)
    stats.improvement = list(st2.improvement)
    stats.grad_supnorm = list(st2.grad_supnorm)
    stats.damping = list(st2.damping)
    stats.gain_ratio = list(st2.gain_ratio)
    stats.cg_iters = list(st2.cg_iters)
    stats.step_norm = list(st2.step_norm)
    stats.stop_reason = st2.stop_reason

    t0 = time.perf_counter()
    k = KruskalTensor([w[:d] for w, d in zip(factors, small)]).normalized()
    stats.timings["uncompress"] = time.perf_counter() - t0
    return k, stats
