"""
Multilinear hypothesis models and an MLSVD subspace classifier.

A model with n inputs (x[0] == 1 carries the bias), m outputs, order L and
rank R predicts

    h_k(x) = f( sum_r prod_l <w_r^(k,l), x> ).

Weights are stored in one array of shape (m, L, n, R); W[k, l] is the
n x R factor matrix of output k and mode l, so the weight tensor of output
k is the rank-R Kruskal tensor with factors W[k, 0], ..., W[k, L-1].
"""

from dataclasses import dataclass, field

import numpy as np

from .core import KruskalTensor, unfold
from .mlsvd import EXACT, truncated_svd
from .solver import SolverOptions, cpd

__all__ = [
    "Activation", "SIGMOID", "IDENTITY", "MultilinearModel", "TrainingDiverged",
    "cost", "grad_sample", "full_gradient", "sgd_train", "accuracy",
    "compress_model", "MlsvdClassifier", "mlsvd_classifier_train",
    "mlsvd_classifier_predict",
]


@dataclass(frozen=True)
class Activation:
    name: str
    f: object
    df: object


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _dsigmoid(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


SIGMOID = Activation("sigmoid", _sigmoid, _dsigmoid)
IDENTITY = Activation("identity", lambda z: np.asarray(z, dtype=np.float64),
                      lambda z: np.ones_like(np.asarray(z, dtype=np.float64)))
ACTIVATIONS = {"sigmoid": SIGMOID, "identity": IDENTITY}


class TrainingDiverged(FloatingPointError):
    """Raised when the training loss stops being finite; carries the loss trace."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass
class MultilinearModel:
    weights: np.ndarray                      # (m, L, n, R)
    activation: Activation = field(default=SIGMOID)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ValueError("weights must have shape (m, L, n, R)")
        if isinstance(self.activation, str):
            self.activation = ACTIVATIONS[self.activation]

    @classmethod
    def random(cls, n, m, L, R, seed=0, activation=SIGMOID):
        """Gaussian weights with standard deviation n^(-1/2)."""
        if min(n, m, L, R) < 1:
            raise ValueError("n, m, L and R must be positive")
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((m, L, n, R)) * n ** -0.5
        return cls(w, activation)

    @property
    def outputs(self):
        return self.weights.shape[0]

    @property
    def order(self):
        return self.weights.shape[1]

    @property
    def inputs(self):
        return self.weights.shape[2]

    @property
    def rank(self):
        return self.weights.shape[3]

    def copy(self):
        return MultilinearModel(self.weights.copy(), self.activation)

    def weight_tensor(self, k):
        return KruskalTensor(list(self.weights[k]))

    def bias(self):
        """Constant term of every output: sum_r prod_l w_(1,r)^(k,l)."""
        return self.weights[:, :, 0, :].prod(axis=1).sum(axis=1)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.inputs:
            raise ValueError(f"input has {x.shape[-1]} features; the model expects {self.inputs}")
        return x

    def inner_products(self, x):
        """<w_r^(k,l), x> for every (k, l, r); shape (m, L, R), or (N, m, L, R) for a batch."""
        x = self._check(x)
        return np.einsum("klir,...i->...klr", self.weights, x)

    def activations(self, x):
        """Pre-activation sums z_k."""
        return self.inner_products(x).prod(axis=-2).sum(axis=-1)

    def predict(self, x):
        return self.activation.f(self.activations(x))


def _dataset(model, X, Y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None] if model.outputs == 1 else Y[None, :]
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if X.shape[0] != Y.shape[0] or Y.shape[1] != model.outputs:
        raise ValueError(f"dataset shapes {X.shape} and {Y.shape} do not match the model")
    model._check(X)
    return X, Y


def cost(model, X, Y, lam=0.0):
    """
    (lam/2) ||W||^2 + (1/2N) sum_j ||h(x_j) - y_j||^2.

    The penalty equals (lam/2N) sum_j ||W||^2, so each per-sample cost
    contributes lam * W to its gradient.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    X, Y = _dataset(model, X, Y)
    res = model.predict(X) - Y
    return 0.5 * lam * float(np.sum(model.weights**2)) + 0.5 * float(np.sum(res**2)) / X.shape[0]


def _leave_one_out_products(ip):
    # prod_{l != l'} ip[..., l, :] for every l', without dividing
    L = ip.shape[-2]
    out = np.ones_like(ip)
    for l in range(L):
        for j in range(L):
            if j != l:
                out[..., l, :] *= ip[..., j, :]
    return out


def grad_sample(model, x, y, lam=0.0):
    """Gradient of the cost of one sample, shaped like model.weights."""
    x = model._check(x)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    ip = model.inner_products(x)                 # m, L, R
    z = ip.prod(axis=1).sum(axis=1)              # m
    act = model.activation
    scale = (act.f(z) - y) * act.df(z)           # m
    others = _leave_one_out_products(ip)         # m, L, R
    g = np.einsum("k,i,klr->klir", scale, x, others)
    if lam:
        g = g + lam * model.weights
    return g


def full_gradient(model, X, Y, lam=0.0):
    """Gradient of `cost`: the mean of the per-sample gradients."""
    X, Y = _dataset(model, X, Y)
    ip = model.inner_products(X)                 # N, m, L, R
    z = ip.prod(axis=2).sum(axis=2)
    act = model.activation
    scale = (act.f(z) - Y) * act.df(z)           # N, m
    others = _leave_one_out_products(ip)
    g = np.einsum("jk,ji,jklr->klir", scale, X, others) / X.shape[0]
    return g + lam * model.weights


def sgd_train(model, X, Y, alpha, lam=0.0, epochs=1, seed=0):
    """
    Plain stochastic gradient descent.

    Each epoch visits the samples once in a seeded random order. Returns the
    trained copy of the model and the cost after every epoch.
    """
    if alpha < 0:
        raise ValueError("learning rate must be nonnegative")
    if epochs < 0:
        raise ValueError("epochs must be nonnegative")
    X, Y = _dataset(model, X, Y)
    model = model.copy()
    rng = np.random.default_rng(seed)
    trace = []
    for epoch in range(epochs):
        if alpha:
            for j in rng.permutation(X.shape[0]):
                model.weights -= alpha * grad_sample(model, X[j], Y[j], lam)
        loss = cost(model, X, Y, lam)
        trace.append(loss)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch + 1}", trace)
    return model, trace


def accuracy(model, X, Y):
    """Fraction of correct labels: thresholding at 0.5 for one output, argmax otherwise."""
    X, Y = _dataset(model, X, Y)
    h = model.predict(X)
    if model.outputs == 1:
        return float(np.mean((h[:, 0] >= 0.5) == (Y[:, 0] >= 0.5)))
    return float(np.mean(np.argmax(h, axis=1) == np.argmax(Y, axis=1)))


def compress_model(model, new_rank, options=None):
    """
    Replace every weight tensor by a rank-`new_rank` CPD of it.

    Each T_k is rebuilt densely (n^L entries), decomposed with `cpd`, and the
    weights are spread evenly over the L factors.
    """
    R = model.rank
    if not 1 <= new_rank <= R:
        raise ValueError(f"new rank must lie in 1..{R}")
    options = options or SolverOptions()
    m, L, n, _ = model.weights.shape
    w = np.zeros((m, L, n, new_rank))
    for k in range(m):
        if L == 1:
            w[k, 0, :, 0] = model.weights[k, 0].sum(axis=1)
            continue
        t = model.weight_tensor(k).full()
        if not np.any(t):
            continue
        kt, _ = cpd(t, new_rank, options)
        root = kt.weights ** (1.0 / L)
        for l in range(L):
            w[k, l] = kt.factors[l] * root
    return MultilinearModel(w, model.activation)


@dataclass
class MlsvdClassifier:
    basis: np.ndarray            # pixels x R1
    class_bases: list            # one R1 x R1' orthonormal matrix per class

    @property
    def classes(self):
        return len(self.class_bases)

    def project(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.basis.shape[0]:
            raise ValueError(f"sample has {z.shape[-1]} entries; expected {self.basis.shape[0]}")
        return z @ self.basis

    def residuals(self, z):
        """||z_new - W_k W_k^T z_new|| for every class k."""
        zn = self.project(z)
        out = []
        for w in self.class_bases:
            out.append(np.linalg.norm(zn - (zn @ w) @ w.T, axis=-1))
        return np.stack(out, axis=-1)


def mlsvd_classifier_train(class_tensor, R, R1_sub):
    """
    Subspace classifier from a pixels x samples x classes tensor.

    The first two modes are compressed to at most R directions each (the
    class mode is never truncated); each class slice of the compressed
    core contributes its R1_sub leading left singular vectors.
    """
    t = np.asarray(class_tensor, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError("class tensor must be pixels x samples x classes")
    r1 = min(R, t.shape[0], t.shape[1] * t.shape[2])
    r2 = min(R, t.shape[1], t.shape[0] * t.shape[2])
    if not 1 <= R1_sub <= min(r1, r2):
        raise ValueError(f"R1' must lie in 1..{min(r1, r2)}")
    u1, _, _ = truncated_svd(unfold(t, 0), r1, EXACT)
    u2, _, _ = truncated_svd(unfold(t, 1), r2, EXACT)
    f = np.einsum("pi,psc,sj->ijc", u1, t, u2)
    bases = []
    for c in range(t.shape[2]):
        if np.any(f[:, :, c]):
            w, _, _ = np.linalg.svd(f[:, :, c], full_matrices=False)
        else:
            w = np.eye(r1, min(r1, r2))
        bases.append(w[:, :R1_sub])
    return MlsvdClassifier(u1, bases)


def mlsvd_classifier_predict(clf, z):
    """Class (0-based) with the smallest residual; ties go to the lowest index."""
    res = clf.residuals(z)
    return np.argmin(res, axis=-1)
