"""
Benchmark tensors.

Every generator is a pure function of its parameters and seed.
"""

import numpy as np
import scipy.linalg

from .core import KruskalTensor, as_tensor, outer

__all__ = [
    "function_grid", "warmup_function", "warmup_tensor", "collinear_kruskal",
    "double_bottleneck", "add_noise", "matmul_tensor", "border_rank_pair",
    "random_kruskal", "ill_conditioned_family", "perturb_normalized",
    "swamp_tensor",
]


def function_grid(evaluator, grids):
    """t[i_1, ..., i_L] = evaluator(grids[0][i_1], ..., grids[L-1][i_L])."""
    grids = [np.asarray(g, dtype=np.float64).ravel() for g in grids]
    if not grids or any(g.size == 0 for g in grids):
        raise ValueError("every grid needs at least one point")
    mesh = np.meshgrid(*grids, indexing="ij")
    try:
        t = np.asarray(evaluator(*mesh), dtype=np.float64)
        if t.shape != mesh[0].shape:
            t = np.broadcast_to(t, mesh[0].shape).copy()
    except (TypeError, ValueError):
        t = np.empty(mesh[0].shape)
        for idx in np.ndindex(*t.shape):
            t[idx] = evaluator(*[g[i] for g, i in zip(grids, idx)])
    bad = np.argwhere(~np.isfinite(t))
    if bad.size:
        where = tuple(int(i) + 1 for i in bad[0])
        raise FloatingPointError(f"non-finite function value at index {where}")
    return t


def warmup_function(x, y, z):
    return (np.cos(1 - x) * np.sin(1 + y**2)
            - np.sin(1 + x**2) * np.exp(x**2 + y**2 + z**2)
            - np.cos(x) * np.log(1 + z))


def warmup_tensor(shape=(6, 5, 4)):
    """The 6 x 5 x 4 samples of `warmup_function` on uniform grids of [0, 1]."""
    return function_grid(warmup_function, [np.linspace(0, 1, n) for n in shape])


def _orthonormal(rng, n, R):
    q, _ = np.linalg.qr(rng.standard_normal((n, R)))
    return q


def collinear_kruskal(dims, R, c, seed=0):
    """
    Factors whose columns share a common component.

    In every mode, column r is q_1 + c q_r, where q comes from the QR
    decomposition of a Gaussian matrix. Small c gives nearly collinear
    columns (the swamp regime).
    """
    if c < 0:
        raise ValueError("c must be nonnegative")
    if R > min(dims):
        raise ValueError("R cannot exceed the smallest dimension")
    rng = np.random.default_rng(seed)
    factors = []
    for d in dims:
        q = _orthonormal(rng, d, R)
        factors.append(q[:, [0]] + c * q)
    return KruskalTensor(factors)


def double_bottleneck(dims, R, c, seed=0):
    """
    Columns 1 and 2 of every mode follow the collinear rule; columns 3..R
    are the plain orthonormal QR columns.
    """
    if R < 3:
        raise ValueError("double bottleneck needs R >= 3")
    if c < 0:
        raise ValueError("c must be nonnegative")
    if R > min(dims):
        raise ValueError("R cannot exceed the smallest dimension")
    rng = np.random.default_rng(seed)
    factors = []
    for d in dims:
        q = _orthonormal(rng, d, R)
        w = q.copy()
        w[:, :2] = q[:, [0]] + c * q[:, :2]
        factors.append(w)
    return KruskalTensor(factors)


def add_noise(t, nu, seed=0):
    """t + nu * N with N standard Gaussian."""
    if nu < 0:
        raise ValueError("noise level must be nonnegative")
    t = as_tensor(t)
    if nu == 0:
        return t.copy()
    rng = np.random.default_rng(seed)
    return t + nu * rng.standard_normal(t.shape)


def swamp_tensor(dims=(100, 100, 100), R=10, c=0.5, nu=0.01, seed=0):
    """Noisy collinear benchmark: returns (noisy, clean)."""
    clean = collinear_kruskal(dims, R, c, seed).full()
    return add_noise(clean, nu, seed + 1_000_003), clean


def matmul_tensor(N):
    """
    Tensor of N x N matrix multiplication.

    Entries are 1 at (vec(e_ij), vec(e_jk), vec(e_ik)), with column-major
    vec, so that contracting vec(X) and vec(Y) along the first two modes
    gives vec(X Y).
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    n2 = N * N
    t = np.zeros((n2, n2, n2))
    for i in range(N):
        for j in range(N):
            for k in range(N):
                t[i + N * j, j + N * k, i + N * k] = 1.0
    return t


def _independent_pair(rng, d):
    while True:
        x = rng.standard_normal(d)
        y = rng.standard_normal(d)
        cos = abs(x @ y) / (np.linalg.norm(x) * np.linalg.norm(y))
        if d == 1 or cos <= 0.999:
            return x, y


def border_rank_pair(dims=(10, 10, 10), n=10, seed=0, vectors=None):
    """
    Rank-3 tensor with border rank 2 and its rank-2 approximation.

    limit  = x(.)x(.)y + x(.)y(.)x + y(.)x(.)x
    approx = n (x + y/n)(.)(x + y/n)(.)(x + y/n) - n x(.)x(.)x
    `vectors` may supply the (x, y) pairs per mode instead of drawing them.
    """
    if vectors is None:
        rng = np.random.default_rng(seed)
        vectors = [_independent_pair(rng, d) for d in dims]
    (x1, y1), (x2, y2), (x3, y3) = vectors
    limit = outer(x1, x2, y3) + outer(x1, y2, x3) + outer(y1, x2, x3)
    approx = n * outer(x1 + y1 / n, x2 + y2 / n, x3 + y3 / n) - n * outer(x1, x2, x3)
    return limit, approx


def random_kruskal(dims, R, seed=0):
    """Standard Gaussian factors, unit weights."""
    if R < 1:
        raise ValueError("rank must be at least 1")
    rng = np.random.default_rng(seed)
    return KruskalTensor([rng.standard_normal((d, R)) for d in dims])


def ill_conditioned_family(r, c, s, seed=0, size=15):
    """
    Factors A_i = N_i R_c diag(10^(s/(3r)), ..., 10^(rs/(3r))) for i = 1, 2, 3.

    R_c is the upper Cholesky factor of c 11^T + (1 - c) I_r and N_i are
    Gaussian size x r matrices.
    """
    if not 0 <= c < 1:
        raise ValueError("c must lie in [0, 1) for the Cholesky factor to exist")
    if s < 0 or r < 1:
        raise ValueError("need r >= 1 and s >= 0")
    gram = c * np.ones((r, r)) + (1 - c) * np.eye(r)
    try:
        rc = scipy.linalg.cholesky(gram, lower=False)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"Cholesky factor does not exist for c={c}") from exc
    scale = 10.0 ** (np.arange(1, r + 1) * s / (3 * r))
    rng = np.random.default_rng(seed)
    return KruskalTensor([rng.standard_normal((size, r)) @ rc * scale for _ in range(3)])


def perturb_normalized(t, level=1e-3, seed=0):
    """t/||t|| + level * E/||E|| with Gaussian E."""
    t = as_tensor(t)
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(t.shape)
    return t / np.linalg.norm(t) + level * e / np.linalg.norm(e)
