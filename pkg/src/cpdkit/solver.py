"""
Damped Gauss-Newton CPD solver.

The parameter vector w stacks vec(W_1), ..., vec(W_L), each matrix
vectorized column by column. The residual is f(w) = S - sum_r w_r^(1) x ...
x w_r^(L) and the objective F(w) = 0.5 ||f(w)||^2. Every product with the
Gauss-Newton matrix J^T J is matrix free: it only touches the R x R Gramians
of the factor matrices.

`cpd` runs the whole pipeline: MLSVD compression, initialization, dGN
iterations on the compressed core, and uncompression.
"""

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (KruskalTensor, as_tensor, fold, khatri_rao_chain,
                   kruskal_to_full, unfold)
from .mlsvd import SvdMethod, compress

__all__ = [
    "SolverOptions", "SolveStats", "Workspace", "STOP_CODES",
    "to_vector", "from_vector", "residual", "gramians", "gradient",
    "hessian_vector_product", "regularization_diag", "jacobi_diag",
    "cg_solve", "cg_budget", "gain_ratio", "predicted_sq_error",
    "update_damping", "normalize_balanced", "check_stop",
    "average_batch", "initialize", "draw_back", "dgn", "uncompress",
    "cpd", "als", "relative_error",
]

# numbering of the stop reasons; 0 means the iteration budget ran out
STOP_CODES = {
    "relative_error": 1,
    "step_size": 2,
    "improvement": 3,
    "gradient": 4,
    "average_error": 5,
    "average_improvement": 6,
    "divergence": 7,
    "max_iterations": 0,
    "nonfinite": -1,
}


@dataclass
class SolverOptions:
    maxiter: int = 200
    tol: float = 1e-6
    mlsvd_tol: float = 1e-6
    cg_exponents: tuple = (0.4, 0.9)
    init: str = "random"            # "random" or "mlsvd" (energy of the core)
    init_damp: float = 1.0          # tau in mu0 = tau * mean|S|; 0 switches off D
    precond: bool = True
    seed: int = 0
    draw_back: bool = True
    divergence_factor: float = 100.0
    fixed_damping: float = None     # keep mu constant at this value
    fixed_cg: int = None            # fixed CG budget instead of the random draw
    cg_tol: float = 1e-16           # inner CG stops once ||r||^2 < cg_tol; None reuses tol
    svd: SvdMethod = None
    compress: bool = True
    refine: bool = False            # after uncompressing, iterate again on the full tensor

    def __post_init__(self):
        if self.maxiter < 1:
            raise ValueError("maxiter must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        a, b = self.cg_exponents
        if not 0 < a < b:
            raise ValueError("cg exponents must satisfy 0 < a < b")
        if self.init not in ("random", "mlsvd"):
            raise ValueError(f"unknown init strategy {self.init!r}")
        if self.init_damp < 0:
            raise ValueError("init_damp must be nonnegative")


@dataclass
class SolveStats:
    rel_error: list = field(default_factory=list)
    improvement: list = field(default_factory=list)
    grad_supnorm: list = field(default_factory=list)
    damping: list = field(default_factory=list)
    gain_ratio: list = field(default_factory=list)
    cg_iters: list = field(default_factory=list)
    step_norm: list = field(default_factory=list)
    stop_reason: str = "max_iterations"
    initial_error: float = float("nan")
    timings: dict = field(default_factory=lambda: {
        "compress": 0.0, "init": 0.0, "iterate": 0.0, "uncompress": 0.0})
    trunc_dims: tuple = ()
    seed: int = 0
    draw_backs: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.rel_error)

    @property
    def stop_code(self):
        return STOP_CODES[self.stop_reason]

    def as_dict(self):
        def clean(v):
            v = float(v)
            return v if math.isfinite(v) else None
        return {
            "stop_reason": self.stop_reason,
            "iterations": self.iterations,
            "rel_error": [clean(v) for v in self.rel_error],
            "improvement": [clean(v) for v in self.improvement],
            "grad_supnorm": [clean(v) for v in self.grad_supnorm],
            "damping": [clean(v) for v in self.damping],
            "gain_ratio": [clean(v) for v in self.gain_ratio],
            "cg_iters": [int(v) for v in self.cg_iters],
            "timings": {k: float(v) for k, v in self.timings.items()},
            "trunc_dims": [int(d) for d in self.trunc_dims],
            "seed": int(self.seed),
        }


# ---------------------------------------------------------------------------
# parameter vector

def to_vector(factors):
    return np.concatenate([np.asarray(w).ravel(order="F") for w in factors])


def from_vector(x, dims, R):
    out, pos = [], 0
    for d in dims:
        out.append(np.reshape(x[pos:pos + d * R], (d, R), order="F"))
        pos += d * R
    return out


def _factors(k):
    """Factor list with the weights absorbed into the first factor."""
    if isinstance(k, KruskalTensor):
        if np.all(k.weights == 1.0):
            return list(k.factors)
        return k.absorb_weights().factors
    return list(k)


# ---------------------------------------------------------------------------
# residual, Gramians, gradient, J^T J products

def residual(core, k):
    """Flat residual S - full(k), first index fastest."""
    core = as_tensor(core)
    f = _factors(k)
    if tuple(w.shape[0] for w in f) != core.shape:
        raise ValueError("factor dims do not match the tensor")
    m = unfold(core, 0) - f[0] @ khatri_rao_chain(f, skip=0).T
    return m.ravel(order="F")


@dataclass
class Workspace:
    """Gramians pi_l = W_l^T W_l and their Hadamard products."""
    gram: list
    pair: dict        # (l1, l2) with l1 < l2 -> product of all pi except l1, l2
    single: list      # l -> product of all pi except l

    def pair_product(self, a, b):
        return self.pair[(a, b) if a < b else (b, a)]


def gramians(k):
    f = _factors(k)
    L = len(f)
    R = f[0].shape[1]
    gram = [w.T @ w for w in f]
    pair = {}
    for a in range(L):
        for b in range(a + 1, L):
            p = np.ones((R, R))
            for l in range(L):
                if l != a and l != b:
                    p = p * gram[l]
            pair[(a, b)] = p
    single = []
    for l in range(L):
        p = np.ones((R, R))
        for j in range(L):
            if j != l:
                p = p * gram[j]
        single.append(p)
    return Workspace(gram, pair, single)


def gradient(core, k, ws=None):
    """
    Gradient of F = 0.5 ||S - full(k)||^2.

    Block l is vec(W_l Pi_l - S_(l) (W_L (.) ... skip l ... (.) W_1)).
    """
    core = as_tensor(core)
    f = _factors(k)
    ws = ws or gramians(f)
    blocks = []
    for l, w in enumerate(f):
        g = w @ ws.single[l] - unfold(core, l) @ khatri_rao_chain(f, skip=l)
        blocks.append(g.ravel(order="F"))
    return np.concatenate(blocks)


def hessian_vector_product(ws, k, v):
    """J^T J v without forming J."""
    f = _factors(k)
    dims = [w.shape[0] for w in f]
    R = f[0].shape[1]
    V = from_vector(np.asarray(v, dtype=np.float64), dims, R)
    L = len(f)
    cross = [V[l].T @ f[l] for l in range(L)]
    out = []
    for a in range(L):
        blk = V[a] @ ws.single[a]
        acc = np.zeros((R, R))
        for b in range(L):
            if b != a:
                acc += ws.pair_product(a, b) * cross[b]
        blk = blk + f[a] @ acc
        out.append(blk.ravel(order="F"))
    return np.concatenate(out)


def regularization_diag(k):
    """
    Diagonal regularization D.

    For column r of mode l the entry is
        prod_{j != l} ||w_r^(j)||  *  max_{l'} max_{r'} prod_{j != l'} ||w_r'^(j)||,
    repeated over the I_l rows. At order 3 this is the familiar gamma_X,
    gamma_Y, gamma_Z triple.
    """
    f = _factors(k)
    L = len(f)
    nrm = np.array([np.linalg.norm(w, axis=0) for w in f])      # L x R
    prods = np.empty_like(nrm)
    for l in range(L):
        prods[l] = np.prod(np.delete(nrm, l, axis=0), axis=0) if L > 1 else 1.0
    big = prods.max()
    tiny = np.finfo(float).eps
    out = []
    for l, w in enumerate(f):
        gam = np.maximum(prods[l] * big, tiny)
        out.append(np.tile(gam, (w.shape[0], 1)).ravel(order="F"))
    return np.concatenate(out)


def jacobi_diag(k, ws=None):
    """Diagonal of J^T J: prod_{j != l} ||w_r^(j)||^2 on block (l, r)."""
    f = _factors(k)
    ws = ws or gramians(f)
    out = []
    for l, w in enumerate(f):
        d = np.diag(ws.single[l])
        out.append(np.tile(d, (w.shape[0], 1)).ravel(order="F"))
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# conjugate gradient

def cg_budget(k_iter, exponents=(0.4, 0.9), rng=None):
    """Uniform integer on [1 + ceil(k^a), 2 + ceil(k^b)], both ends included."""
    if k_iter < 1:
        raise ValueError("iteration counter starts at 1")
    a, b = exponents
    lo = 1 + math.ceil(k_iter ** a)
    hi = 2 + math.ceil(k_iter ** b)
    rng = rng if rng is not None else np.random.default_rng()
    return int(rng.integers(lo, hi, endpoint=True))


def cg_solve(ws, k, rhs, mu, cg_maxiter, tol, D=None, M=None, mask=None,
             return_info=False):
    """
    Preconditioned CG for (J^T J + mu D) x = rhs.

    The system solved is M^{-1/2} (J^T J + mu D) M^{-1/2} xh = M^{-1/2} rhs,
    then x = M^{-1/2} xh. `mask` (boolean) zeroes the frozen coordinates,
    which restricts the solve to the free blocks. Iteration stops after
    cg_maxiter steps or once ||r||^2 < tol.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    n = rhs.shape[0]
    D = np.zeros(n) if D is None else D
    M = np.ones(n) if M is None else M
    if np.any(M <= 0):
        raise ValueError("preconditioner must be positive")
    s = 1.0 / np.sqrt(M)
    if mask is not None:
        s = s * mask

    def apply(p):
        z = s * p
        z = hessian_vector_product(ws, k, z) + mu * D * z
        return s * z

    x = np.zeros(n)
    r = s * rhs
    p = r.copy()
    rr = r @ r
    history = [rr]
    it = 0
    while it < cg_maxiter and rr >= tol:
        z = apply(p)
        pz = p @ z
        if pz <= 0:
            break
        alpha = rr / pz
        x += alpha * p
        r -= alpha * z
        rr_new = r @ r
        it += 1
        if not np.isfinite(rr_new):
            raise FloatingPointError(f"non-finite residual in CG at iteration {it}")
        p = r + (rr_new / rr) * p
        rr = rr_new
        history.append(rr)
    out = s * x
    if return_info:
        return out, {"iterations": it, "residuals": history}
    return out


# ---------------------------------------------------------------------------
# damping, balancing, stopping

def predicted_sq_error(f, grad, ws, k, step):
    """||f + J dw||^2 = ||f||^2 + 2 <grad F, dw> + dw^T J^T J dw."""
    return float(f @ f + 2.0 * (grad @ step) + step @ hessian_vector_product(ws, k, step))


def gain_ratio(prev_sq_err, new_sq_err, predicted_sq_err):
    """Actual over predicted decrease; +inf when the prediction is degenerate."""
    den = prev_sq_err - predicted_sq_err
    if abs(den) < 1e-15:
        return math.inf
    return (prev_sq_err - new_sq_err) / den


def update_damping(mu, g):
    if g < 0.25:
        return 3.0 * mu
    if g > 0.75:
        return mu / 3.0
    return mu


def normalize_balanced(k, free=None):
    """
    Rescale every rank-one term so its columns share the norm
    (prod_l ||w_r^(l)||)^(1/L). A term with a zero column becomes zero.

    `free` restricts the rescaling to a subset of modes; the others are
    left untouched.
    """
    f = [w.copy() for w in _factors(k)]
    modes = list(range(len(f))) if free is None else list(free)
    if not modes:
        return KruskalTensor(f)
    nrm = np.array([np.linalg.norm(f[l], axis=0) for l in modes])
    target = np.prod(nrm, axis=0) ** (1.0 / len(modes))
    for i, l in enumerate(modes):
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(nrm[i] > 0, target / nrm[i], 0.0)
        f[l] = f[l] * scale
    return KruskalTensor(f)


def _batch_constant(maxiter):
    return 1 + math.ceil(maxiter / 10)


def average_batch(maxiter, k):
    """Whether the batch-average conditions are evaluated at iteration k."""
    c = _batch_constant(maxiter)
    return k > 2 * c and (k - 2 * c - 1) % c == 0


def check_stop(stats, options, k, core_norm, grad_supnorm, step_norm):
    """
    Evaluate the stopping conditions in order at iteration k (1-based).

    stats.rel_error[k-1] is the error after iteration k; stats.initial_error
    the error of the starting point. Returns a reason string or None.
    """
    tol = options.tol
    err = stats.rel_error
    e_k = err[k - 1]
    e_prev = err[k - 2] if k >= 2 else stats.initial_error
    if e_k < tol:
        return "relative_error"
    if step_norm < tol:
        return "step_size"
    if abs(e_prev - e_k) < tol:
        return "improvement"
    if grad_supnorm < tol:
        return "gradient"
    if average_batch(options.maxiter, k):
        c = _batch_constant(options.maxiter)
        full = [stats.initial_error] + list(err)          # full[j] = error after j
        first = sum(full[k - 2 * c:k - c + 1]) / c
        second = sum(full[k - c:k + 1]) / c
        if first - second < tol:
            return "average_error"
        imp = sum(abs(full[j - 1] - full[j]) for j in range(k - c, k + 1)) / c
        if imp < 1e-3 * second:
            return "average_improvement"
    if e_k > max(1.0, core_norm ** 2) / (1e-16 + tol):
        return "divergence"
    return None


# ---------------------------------------------------------------------------
# initialization, draw-back, main loop

def initialize(core, R, strategy="random", rng=None):
    """
    Starting point for dGN on `core`.

    "random": standard normal factors. "mlsvd": the R entries of largest
    magnitude (ties by lexicographic multi-index), each turned into a
    weighted canonical rank-one term.
    """
    core = as_tensor(core)
    if R < 1:
        raise ValueError("rank must be at least 1")
    if strategy == "random":
        rng = rng if rng is not None else np.random.default_rng()
        return KruskalTensor([rng.standard_normal((d, R)) for d in core.shape])
    if strategy != "mlsvd":
        raise ValueError(f"unknown init strategy {strategy!r}")
    if R > core.size:
        raise ValueError(f"rank {R} exceeds the {core.size} entries of the core")
    idx = np.array(list(np.ndindex(*core.shape)))
    vals = core[tuple(idx.T)]
    keys = [idx[:, j] for j in range(core.ndim - 1, -1, -1)] + [-np.abs(vals)]
    pick = np.lexsort(keys)[:R]
    factors = []
    for l, d in enumerate(core.shape):
        w = np.zeros((d, R))
        w[idx[pick, l], np.arange(R)] = 1.0
        factors.append(w)
    return KruskalTensor(factors, vals[pick])


def draw_back(prev, step, free=None):
    """N(prev + step) - step."""
    f = _factors(prev)
    dims = [w.shape[0] for w in f]
    R = f[0].shape[1]
    w_new = to_vector(f) + step
    bal = normalize_balanced(from_vector(w_new, dims, R), free)
    return KruskalTensor(from_vector(to_vector(bal.factors) - step, dims, R))


def dgn(core, k0, options=None, frozen=(), stats=None):
    """
    Damped Gauss-Newton iterations on `core` starting from `k0`.

    Modes listed in `frozen` keep their factor fixed. Returns the final
    norm-balanced KruskalTensor and the SolveStats trace.
    """
    options = options or SolverOptions()
    core = as_tensor(core)
    stats = stats or SolveStats(seed=options.seed)
    rng = np.random.default_rng(options.seed)
    t0 = time.perf_counter()

    L = core.ndim
    free = [l for l in range(L) if l not in frozen]
    f0 = _factors(k0)
    dims = core.shape
    R = f0[0].shape[1]
    mask = None
    if frozen:
        mask = np.concatenate([np.full(d * R, l not in frozen, dtype=float)
                               for l, d in enumerate(dims)])
    k = normalize_balanced(f0, free)
    snorm = float(np.linalg.norm(core))
    denom = snorm if snorm > 0 else 1.0

    fres = residual(core, k)
    sq = float(fres @ fres)
    stats.initial_error = math.sqrt(sq) / denom
    mu = options.init_damp * float(np.mean(np.abs(core)))
    if options.fixed_damping is not None:
        mu = options.fixed_damping
    use_reg = options.init_damp > 0 or options.fixed_damping is not None

    if stats.initial_error == 0:
        stats.rel_error.append(0.0)
        stats.improvement.append(0.0)
        stats.grad_supnorm.append(0.0)
        stats.damping.append(mu)
        stats.gain_ratio.append(math.inf)
        stats.cg_iters.append(0)
        stats.step_norm.append(0.0)
        stats.stop_reason = "relative_error"
        stats.timings["iterate"] += time.perf_counter() - t0
        return k, stats

    err_prev = stats.initial_error
    for it in range(1, options.maxiter + 1):
        ws = gramians(k)
        grad = gradient(core, k, ws)
        if mask is not None:
            grad = grad * mask
        D = regularization_diag(k) if use_reg else None
        if options.precond:
            M = jacobi_diag(k, ws) + (mu * D if D is not None else 0.0)
            M = np.maximum(M, np.finfo(float).eps)
        else:
            M = None
        nc = options.fixed_cg or cg_budget(it, options.cg_exponents, rng)
        cg_tol = options.tol if options.cg_tol is None else options.cg_tol
        step, info = cg_solve(ws, k, -grad, mu, nc, cg_tol, D, M, mask,
                              return_info=True)
        pred = predicted_sq_error(fres, grad, ws, k, step)

        w_vec = to_vector(k.factors)
        k_new = normalize_balanced(from_vector(w_vec + step, dims, R), free)
        f_new = residual(core, k_new)
        sq_new = float(f_new @ f_new)
        err_new = math.sqrt(sq_new) / denom
        g = gain_ratio(sq, sq_new, pred)

        if not np.isfinite(err_new):
            stats.stop_reason = "nonfinite"
            warnings.warn(f"non-finite error at iteration {it}; returning last finite iterate")
            break

        if options.draw_back and err_new > options.divergence_factor * err_prev:
            k_new = draw_back(k, step, free)
            f_new = residual(core, k_new)
            sq_new = float(f_new @ f_new)
            err_new = math.sqrt(sq_new) / denom
            stats.draw_backs.append(it)
            if options.fixed_damping is None:
                mu = 3.0 * mu
        elif options.fixed_damping is None:
            mu = update_damping(mu, g)

        k, fres, sq = k_new, f_new, sq_new
        stats.rel_error.append(err_new)
        stats.improvement.append(err_prev - err_new)
        stats.grad_supnorm.append(float(np.max(np.abs(grad))) if grad.size else 0.0)
        stats.damping.append(mu)
        stats.gain_ratio.append(g)
        stats.cg_iters.append(info["iterations"])
        snorm_step = float(np.linalg.norm(step))
        stats.step_norm.append(snorm_step)
        err_prev = err_new

        if stats.draw_backs and stats.draw_backs[-1] == it:
            # no real step was taken; the raised damping gets its chance first
            continue
        reason = check_stop(stats, options, it, snorm, stats.grad_supnorm[-1], snorm_step)
        if reason is not None:
            stats.stop_reason = reason
            break
    else:
        stats.stop_reason = "max_iterations"
    stats.timings["iterate"] += time.perf_counter() - t0
    return k, stats


def uncompress(k, res):
    """Map a CPD of the MLSVD core back: W_l <- U_l W_l."""
    f = _factors(k)
    if len(f) != len(res.bases):
        raise ValueError("order mismatch between CPD and MLSVD")
    out = []
    for w, u in zip(f, res.bases):
        if u.shape[1] != w.shape[0]:
            raise ValueError(f"basis with {u.shape[1]} columns cannot map a factor "
                             f"with {w.shape[0]} rows")
        out.append(u @ w)
    return KruskalTensor(out)


def cpd(t, R, options=None):
    """
    Rank-R CPD of t: compress, initialize, iterate, uncompress.

    The returned KruskalTensor has unit-norm columns and nonnegative weights.
    """
    options = options or SolverOptions()
    t = as_tensor(t)
    if R < 1:
        raise ValueError("rank must be at least 1")
    stats = SolveStats(seed=options.seed)
    rng = np.random.default_rng(options.seed)

    t0 = time.perf_counter()
    if options.compress:
        svd = options.svd or SvdMethod(seed=options.seed)
        res = compress(t, R, options.mlsvd_tol, svd=svd)
        core = res.core
    else:
        res, core = None, t
    stats.trunc_dims = tuple(core.shape)
    stats.timings["compress"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    k0 = initialize(core, R, options.init, rng)
    stats.timings["init"] = time.perf_counter() - t0

    # keep the iteration stream independent from the init stream
    sub = SolverOptions(**{**options.__dict__, "seed": int(rng.integers(2**31))})
    k, stats = dgn(core, k0, sub, stats=stats)
    stats.seed = options.seed

    t0 = time.perf_counter()
    if res is not None:
        k = uncompress(k, res)
    stats.timings["uncompress"] = time.perf_counter() - t0

    if options.refine and res is not None and stats.stop_reason not in ("divergence", "nonfinite"):
        k, extra = dgn(t, k, sub)
        for name in ("rel_error", "improvement", "grad_supnorm", "damping", "gain_ratio",
                     "cg_iters", "step_norm"):
            getattr(stats, name).extend(getattr(extra, name))
        stats.draw_backs.extend(stats.iterations - extra.iterations + i for i in extra.draw_backs)
        stats.stop_reason = extra.stop_reason
        stats.timings["iterate"] += extra.timings["iterate"]
    k = k.normalized()
    return k, stats


def relative_error(t, k):
    t = as_tensor(t)
    return float(np.linalg.norm(t - kruskal_to_full(k)) / np.linalg.norm(t))


def als(t, R, maxiter=500, tol=1e-6, rng=None, k0=None):
    """
    Alternating least squares baseline.

    Each sweep solves W_l <- T_(l) KR_l pinv(Hadamard of the other Gramians)
    for l = 1..L. Stops when the relative-error improvement drops below tol.
    """
    t = as_tensor(t)
    if R < 1:
        raise ValueError("rank must be at least 1")
    rng = rng if rng is not None else np.random.default_rng()
    stats = SolveStats()
    t0 = time.perf_counter()
    f = _factors(k0) if k0 is not None else [rng.standard_normal((d, R)) for d in t.shape]
    f = [w.copy() for w in f]
    L = t.ndim
    tn = float(np.linalg.norm(t)) or 1.0
    err_prev = float(np.linalg.norm(t - kruskal_to_full(KruskalTensor(f)))) / tn
    stats.initial_error = err_prev
    unf = [unfold(t, l) for l in range(L)]
    for it in range(1, maxiter + 1):
        for l in range(L):
            g = np.ones((R, R))
            for j in range(L):
                if j != l:
                    g = g * (f[j].T @ f[j])
            f[l] = unf[l] @ khatri_rao_chain(f, skip=l) @ np.linalg.pinv(g, rcond=1e-12)
        k = KruskalTensor(f)
        err = float(np.linalg.norm(t - kruskal_to_full(k))) / tn
        grad = gradient(t, k)
        stats.rel_error.append(err)
        stats.improvement.append(err_prev - err)
        stats.grad_supnorm.append(float(np.max(np.abs(grad))))
        stats.damping.append(0.0)
        stats.gain_ratio.append(float("nan"))
        stats.cg_iters.append(0)
        stats.step_norm.append(float("nan"))
        if err < tol:
            stats.stop_reason = "relative_error"
            break
        if abs(err_prev - err) < tol:
            stats.stop_reason = "improvement"
            break
        err_prev = err
    stats.timings["iterate"] = time.perf_counter() - t0
    stats.trunc_dims = tuple(t.shape)
    return KruskalTensor(f).normalized(), stats
