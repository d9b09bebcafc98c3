"""
Dense multilinear algebra.

Tensors are plain numpy arrays. Whenever a tensor is flattened, the first
index varies fastest (Fortran order), so the flat values of a tensor read
the same as the columns of its mode-0 unfolding. Modes are 0-based, like
numpy axes.

Factor representations of a canonical polyadic decomposition live in
`KruskalTensor`.
"""

import contextlib
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KruskalTensor", "as_tensor", "unfold", "fold", "mode_product",
    "multilinear_multiply", "kruskal_to_full", "kronecker", "khatri_rao",
    "khatri_rao_chain", "hadamard", "inner", "norm", "contract",
    "deterministic", "is_deterministic", "outer",
]

_STATE = {"deterministic": False}


@contextlib.contextmanager
def deterministic(threads=1):
    """
    Force a fixed reduction order inside BLAS/LAPACK calls.

    Within the context the underlying thread pools are limited to `threads`
    (1 by default), so the same inputs give bit-identical outputs.
    """
    from threadpoolctl import threadpool_limits

    old = _STATE["deterministic"]
    _STATE["deterministic"] = True
    try:
        with threadpool_limits(limits=threads):
            yield
    finally:
        _STATE["deterministic"] = old


def is_deterministic():
    return _STATE["deterministic"]


def thread_count():
    """Thread count requested through TFOX_THREADS, or None."""
    val = os.environ.get("TFOX_THREADS")
    if not val:
        return None
    n = int(val)
    if n < 1:
        raise ValueError("TFOX_THREADS must be a positive integer")
    return n


def as_tensor(t):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = t.reshape(1)
    return t


def _check_mode(mode, order):
    if not 0 <= mode < order:
        raise ValueError(f"mode {mode + 1} out of range for an order-{order} tensor "
                         f"(valid: 1..{order})")


def unfold(t, mode):
    """
    Mode-`mode` unfolding of `t`.

    Returns an array of shape (I_mode, prod of the other dims). Columns are
    the mode fibers, with the remaining indices ordered so that the lowest
    remaining mode varies fastest.
    """
    t = as_tensor(t)
    _check_mode(mode, t.ndim)
    return np.reshape(np.moveaxis(t, mode, 0), (t.shape[mode], -1), order="F")


def fold(m, mode, dims):
    """Inverse of `unfold`: rebuild a tensor of shape `dims`."""
    m = np.asarray(m, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    _check_mode(mode, len(dims))
    rest = [d for i, d in enumerate(dims) if i != mode]
    ncols = int(np.prod(rest)) if rest else 1
    if m.ndim != 2 or m.shape != (dims[mode], ncols):
        raise ValueError(f"cannot fold a matrix of shape {m.shape} along mode {mode + 1} "
                         f"into dims {dims}; expected ({dims[mode]}, {ncols})")
    return np.moveaxis(np.reshape(m, [dims[mode]] + rest, order="F"), 0, mode)


def mode_product(t, m, mode):
    """Multiply matrix `m` into mode `mode` of `t`."""
    t = as_tensor(t)
    m = np.asarray(m, dtype=np.float64)
    _check_mode(mode, t.ndim)
    if m.ndim != 2 or m.shape[1] != t.shape[mode]:
        raise ValueError(f"matrix of shape {m.shape} does not match dimension "
                         f"{t.shape[mode]} of mode {mode + 1}")
    dims = list(t.shape)
    dims[mode] = m.shape[0]
    return fold(m @ unfold(t, mode), mode, dims)


def multilinear_multiply(mats, t):
    """
    Multilinear multiplication (M_1, ..., M_L) . t.

    `mats` holds one entry per mode; None stands for the identity.
    """
    t = as_tensor(t)
    if len(mats) != t.ndim:
        raise ValueError(f"expected {t.ndim} matrices, got {len(mats)}")
    for mode, m in enumerate(mats):
        if m is not None:
            t = mode_product(t, m, mode)
    return t


@dataclass
class KruskalTensor:
    """
    Sum of R weighted rank-one terms.

    factors[l] has shape (I_l, R); weights has length R.
    """
    factors: list
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        self.factors = [np.asarray(w, dtype=np.float64) for w in self.factors]
        if not self.factors:
            raise ValueError("a Kruskal tensor needs at least one factor")
        R = self.factors[0].shape[1] if self.factors[0].ndim == 2 else -1
        for l, w in enumerate(self.factors):
            if w.ndim != 2 or w.shape[1] != R:
                raise ValueError(f"factor {l + 1} has shape {w.shape}; every factor "
                                 f"must be a matrix with {R} columns")
        if self.weights is None:
            self.weights = np.ones(R)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.weights.shape[0] != R:
            raise ValueError(f"{self.weights.shape[0]} weights for rank {R}")

    @property
    def dims(self):
        return tuple(w.shape[0] for w in self.factors)

    @property
    def rank(self):
        return self.factors[0].shape[1]

    @property
    def order(self):
        return len(self.factors)

    def full(self):
        return kruskal_to_full(self)

    def copy(self):
        return KruskalTensor([w.copy() for w in self.factors], self.weights.copy())

    def absorb_weights(self):
        """Equivalent representation with unit weights (weights go into factor 0)."""
        f = [w.copy() for w in self.factors]
        f[0] = f[0] * self.weights
        return KruskalTensor(f)

    def normalized(self):
        """Unit-norm columns, magnitudes moved into the weights."""
        f = [w.copy() for w in self.factors]
        lam = self.weights.copy()
        for l, w in enumerate(f):
            nrm = np.linalg.norm(w, axis=0)
            safe = np.where(nrm > 0, nrm, 1.0)
            f[l] = w / safe
            lam = lam * nrm
        # keep weights nonnegative
        neg = lam < 0
        f[0][:, neg] *= -1
        lam = np.abs(lam)
        return KruskalTensor(f, lam)


def kronecker(a, b):
    """Kronecker product; thin wrapper kept for symmetry with khatri_rao."""
    return np.kron(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def khatri_rao(a, b):
    """Column-wise Kronecker product of two matrices with equal column counts."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column mismatch in Khatri-Rao product: {a.shape[1]} vs {b.shape[1]}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def khatri_rao_chain(factors, skip=None):
    """
    Khatri-Rao product W_L (.) ... (.) W_1 in reversed order, omitting `skip`.

    This is the ordering matching `unfold`: the lowest mode varies fastest.
    """
    mats = [w for l, w in enumerate(factors) if l != skip]
    if not mats:
        R = factors[0].shape[1]
        return np.ones((1, R))
    out = mats[0]
    for w in mats[1:]:
        out = khatri_rao(w, out)
    return out


def hadamard(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in Hadamard product: {a.shape} vs {b.shape}")
    return a * b


def kruskal_to_full(k):
    """Dense tensor sum_r lambda_r w_r^(1) x ... x w_r^(L)."""
    f = k.factors
    m = (f[0] * k.weights) @ khatri_rao_chain(f, skip=0).T
    return fold(m, 0, k.dims)


def outer(*vecs):
    """Outer product of vectors."""
    out = np.asarray(vecs[0], dtype=np.float64)
    for v in vecs[1:]:
        out = np.multiply.outer(out, np.asarray(v, dtype=np.float64))
    return out


def inner(t, s):
    t = as_tensor(t)
    s = as_tensor(s)
    if t.shape != s.shape:
        raise ValueError(f"shape mismatch in inner product: {t.shape} vs {s.shape}")
    return float(np.vdot(t, s))


def norm(t):
    return float(np.linalg.norm(np.asarray(t, dtype=np.float64).ravel()))


def contract(t, mode_t, u, mode_u):
    """
    Contract mode `mode_t` of `t` with mode `mode_u` of `u`.

    The result carries the dims of `t` without `mode_t`, then those of `u`
    without `mode_u`.
    """
    t = as_tensor(t)
    u = as_tensor(u)
    _check_mode(mode_t, t.ndim)
    _check_mode(mode_u, u.ndim)
    if t.shape[mode_t] != u.shape[mode_u]:
        raise ValueError(f"cannot contract dimension {t.shape[mode_t]} with {u.shape[mode_u]}")
    return np.tensordot(t, u, axes=(mode_t, mode_u))
