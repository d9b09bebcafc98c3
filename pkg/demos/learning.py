"""
Multilinear models and the MLSVD subspace classifier on synthetic data.
"""

import numpy as np

from cpdkit.learning import (MultilinearModel, accuracy, compress_model,
                             mlsvd_classifier_predict, mlsvd_classifier_train, sgd_train)
from cpdkit.solver import SolverOptions


def xor():
    X = np.array([[1, 0, 0], [1, 0, 1], [1, 1, 0], [1, 1, 1]], dtype=float)
    y = np.array([0, 1, 1, 0], dtype=float)
    model, trace = sgd_train(MultilinearModel.random(3, 1, 2, 2, seed=0), X, y, 1.0,
                             epochs=2000, seed=0)
    print(f"XOR: loss {trace[0]:.3f} -> {trace[-1]:.2e}, accuracy {accuracy(model, X, y):.2f}")
    print("     outputs", np.round(model.predict(X)[:, 0], 3))


def compression():
    rng = np.random.default_rng(1)
    w = np.zeros((1, 3, 6, 8))
    w[..., :3] = rng.standard_normal((1, 3, 6, 3))
    model = MultilinearModel(w)
    X = np.c_[np.ones(500), rng.standard_normal((500, 5))]
    Y = (model.predict(X) > 0.5).astype(float)
    small = compress_model(model, 3, SolverOptions(tol=1e-12, maxiter=500))
    drift = np.max(np.abs(small.predict(X) - model.predict(X)))
    print(f"compress rank 8 -> 3: accuracy {accuracy(small, X, Y):.3f}, max drift {drift:.1e}")


def subspace_classifier():
    rng = np.random.default_rng(2)
    bases = [np.linalg.qr(rng.standard_normal((64, 4)))[0] for _ in range(5)]
    draw = lambda b, n: b @ rng.standard_normal((4, n)) + 0.2 * rng.standard_normal((64, n))
    train = np.stack([draw(b, 40) for b in bases], axis=2)
    clf = mlsvd_classifier_train(train, 20, 4)
    Z = np.hstack([draw(b, 50) for b in bases]).T
    labels = np.repeat(np.arange(5), 50)
    acc = np.mean(mlsvd_classifier_predict(clf, Z) == labels)
    print(f"MLSVD classifier: 5 classes, held-out accuracy {acc:.3f}")


if __name__ == "__main__":
    xor()
    compression()
    subspace_classifier()
