"""
Truncated multilinear SVD (Tucker compression).

`compress` computes per-mode truncated SVDs of the unfoldings, picks the
smallest per-mode ranks whose discarded energy stays below mlsvd_tol / L,
and projects the tensor onto the retained bases.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import as_tensor, multilinear_multiply, mode_product, norm, unfold

__all__ = ["SvdMethod", "MlsvdResult", "truncated_svd", "compress",
           "truncation_errors", "energy_profile", "select_rank", "reconstruct"]


@dataclass(frozen=True)
class SvdMethod:
    """
    How truncated SVDs are computed.

    kind is "exact" (LAPACK, or the Gram-matrix eigendecomposition for wide
    matrices) or "randomized" (range finder with power iterations).
    """
    kind: str = "randomized"
    oversample: int = 10
    power_iters: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("exact", "randomized"):
            raise ValueError(f"unknown SVD method {self.kind!r}")
        if self.oversample < 0 or self.power_iters < 0:
            raise ValueError("oversample and power_iters must be nonnegative")


EXACT = SvdMethod("exact")


@dataclass
class MlsvdResult:
    bases: list             # U^(l), shape (I_l, R~_l), orthonormal columns
    sigmas: list            # all computed singular values per mode
    core: np.ndarray        # shape trunc_dims
    trunc_dims: tuple = field(default=())

    def __post_init__(self):
        if not self.trunc_dims:
            self.trunc_dims = tuple(self.core.shape)


def _fix_signs(u, vt):
    # largest-magnitude entry of each left vector made positive
    idx = np.argmax(np.abs(u), axis=0)
    s = np.sign(u[idx, np.arange(u.shape[1])])
    s[s == 0] = 1.0
    return u * s, vt * s[:, None]


def _gram_svd(m, k):
    """SVD of a wide matrix through the eigendecomposition of m m^T."""
    evals, evecs = scipy.linalg.eigh(m @ m.T)
    order = np.argsort(evals)[::-1][:k]
    sig = np.sqrt(np.clip(evals[order], 0.0, None))
    u = evecs[:, order]
    # the Gram route squares the condition number; fall back when the
    # kept spectrum reaches the noise floor of m m^T
    if sig[0] == 0 or sig[-1] < np.sqrt(np.finfo(float).eps) * sig[0]:
        return None
    vt = (u.T @ m) / sig[:, None]
    return u, sig, vt


def truncated_svd(m, k, method=None):
    """
    Leading k singular triplets of m.

    Returns (U, sigmas, Vt) with U of shape (rows, k), Vt of shape (k, cols).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("truncated_svd expects a matrix")
    rows, cols = m.shape
    if not 1 <= k <= min(rows, cols):
        raise ValueError(f"k={k} outside 1..{min(rows, cols)}")
    method = method or SvdMethod()
    if not np.all(np.isfinite(m)):
        raise FloatingPointError("non-finite entries in matrix passed to truncated_svd")

    if method.kind == "exact":
        res = _gram_svd(m, k) if rows <= cols else None
        if res is None:
            u, s, vt = np.linalg.svd(m, full_matrices=False)
            res = u[:, :k], s[:k], vt[:k]
        u, s, vt = res
        u, vt = _fix_signs(u, vt)
        return u, s, vt

    ell = min(k + method.oversample, rows, cols)
    if ell == min(rows, cols):
        # sketch would not be smaller than the matrix itself
        u, s, vt = np.linalg.svd(m, full_matrices=False)
        u, vt = _fix_signs(u[:, :k], vt[:k])
        return u, s[:k], vt
    rng = np.random.default_rng(method.seed)
    q, _ = np.linalg.qr(m @ rng.standard_normal((cols, ell)))
    for _ in range(method.power_iters):
        q, _ = np.linalg.qr(m.T @ q)
        q, _ = np.linalg.qr(m @ q)
    ub, s, vt = np.linalg.svd(q.T @ m, full_matrices=False)
    u = q @ ub[:, :k]
    if not np.all(np.isfinite(s)):
        raise np.linalg.LinAlgError("randomized SVD did not converge")
    u, vt = _fix_signs(u, vt[:k])
    return u, s[:k], vt


def select_rank(sigmas, tol):
    """
    Smallest i with sum_{r>i} s_r^2 / sum_r s_r^2 < tol.

    Returns len(sigmas) when no i qualifies (for instance tol = 0).
    """
    e = np.asarray(sigmas, dtype=np.float64) ** 2
    total = e.sum()
    if total == 0:
        return 1
    tail = np.concatenate([np.cumsum(e[::-1])[::-1][1:], [0.0]])
    for i in range(len(e)):
        if tail[i] / total < tol:
            return i + 1
    return len(e)


def compress(t, rank_cap, mlsvd_tol=1e-6, variant="classic", svd=None):
    """
    Truncated MLSVD of t.

    Each mode computes P_l = min(I_l, rank_cap) singular values; the kept
    rank is the smallest one whose relative discarded energy is below
    mlsvd_tol / L. `variant` is "classic" (all projections from the original
    tensor) or "sequential" (each projection applied before the next SVD).
    """
    t = as_tensor(t)
    if rank_cap < 1:
        raise ValueError("rank_cap must be at least 1")
    if mlsvd_tol < 0:
        raise ValueError("mlsvd_tol must be nonnegative")
    if variant not in ("classic", "sequential"):
        raise ValueError(f"unknown MLSVD variant {variant!r}")
    svd = svd or SvdMethod()
    L = t.ndim
    bases, sigmas = [], []
    work = t
    for l in range(L):
        src = work if variant == "sequential" else t
        m = unfold(src, l)
        p = min(m.shape[0], m.shape[1], rank_cap)
        u, s, _ = truncated_svd(m, p, svd)
        r = select_rank(s, mlsvd_tol / L)
        bases.append(u[:, :r])
        sigmas.append(s)
        if variant == "sequential":
            work = mode_product(work, u[:, :r].T, l)
    if variant == "classic":
        core = multilinear_multiply([u.T for u in bases], t)
    else:
        core = work
    return MlsvdResult(bases, sigmas, core, tuple(core.shape))


def reconstruct(res, dims=None):
    """(U_1, ..., U_L) . S, optionally using only the leading `dims` of each mode."""
    dims = dims or res.trunc_dims
    core = res.core[tuple(slice(0, d) for d in dims)]
    return multilinear_multiply([u[:, :d] for u, d in zip(res.bases, dims)], core)


def truncation_errors(t, res, grid="full"):
    """
    Relative error of every smaller truncation of an MLSVD.

    grid="full" enumerates all (i, j, k) <= trunc_dims and is restricted to
    order-3 tensors. grid="marginal" truncates one mode at a time and works
    for any order. Returns a dict mapping truncation shape to relative error.
    """
    t = as_tensor(t)
    nt = norm(t)
    L = t.ndim
    if grid == "full":
        if L > 3:
            raise ValueError("full truncation grid is limited to order <= 3; "
                             "use grid='marginal'")
        shapes = itertools.product(*[range(1, d + 1) for d in res.trunc_dims])
    elif grid == "marginal":
        shapes = []
        for l in range(L):
            for i in range(1, res.trunc_dims[l] + 1):
                d = list(res.trunc_dims)
                d[l] = i
                shapes.append(tuple(d))
    else:
        raise ValueError(f"unknown grid {grid!r}")
    out = {}
    for d in shapes:
        out[tuple(d)] = norm(t - reconstruct(res, d)) / nt
    return out


def energy_profile(core, mode):
    """Norms of the hyperslices core[..., k, ...] along `mode`."""
    return np.linalg.norm(unfold(core, mode), axis=1)
