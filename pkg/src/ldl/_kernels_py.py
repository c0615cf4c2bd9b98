"""Pure numpy versions of the per-sample SGD sweeps in ``_kernels.pyx``."""
import numpy as np


def sgd_single_sweep(W, X, T, order, lr):
    step = 2.0 * lr
    for s in order:
        x = X[s]
        r = W @ x - T[s]
        W -= np.outer(step * r, x)


def sgd_two_layer_sweep(W1, W2, X, T, order, lr):
    step = 2.0 * lr
    for s in order:
        x = X[s]
        hid = W1 @ x
        r = W2 @ hid - T[s]
        back = W2.T @ r
        W2 -= np.outer(step * r, hid)
        W1 -= np.outer(step * back, x)
