"""Plain SGD, Adam and Adadelta applied in place to lists of weight arrays.

Update rules (``g`` is the gradient, ``t`` the per-parameter step count):

* ``sgd``:      ``w -= lr * g``
* ``adam``:     ``m = b1 m + (1-b1) g``; ``v = b2 v + (1-b2) g^2``;
  ``w -= lr * m_hat / (sqrt(v_hat) + eps)`` with bias-corrected ``m_hat``, ``v_hat``
* ``adadelta``: ``Eg = rho Eg + (1-rho) g^2``; ``u = sqrt(Eu + eps) / sqrt(Eg + eps) * g``;
  ``Eu = rho Eu + (1-rho) u^2``; ``w -= lr * u``
"""
from __future__ import annotations

import numpy as np

OPTIMIZER_KINDS = ("sgd", "adam", "adadelta")


class Optimizer:
    """Stateful optimizer. State is tracked per parameter array object.

    Parameters are updated in place, so the same array objects must be passed
    on every call for the moment estimates to line up.
    """

    def __init__(self, kind: str = "sgd", learning_rate: float = 1e-3, *,
                 beta1: float = 0.9, beta2: float = 0.999, adam_eps: float = 1e-8,
                 rho: float = 0.9, adadelta_eps: float = 1e-6):
        if kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {kind!r}; choose from {', '.join(OPTIMIZER_KINDS)}")
        if not learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        self.kind = kind
        self.learning_rate = float(learning_rate)
        self.beta1, self.beta2, self.adam_eps = beta1, beta2, adam_eps
        self.rho, self.adadelta_eps = rho, adadelta_eps
        # id(param) -> (param, state); holding the param keeps its id unique
        self._state: dict[int, tuple[np.ndarray, dict]] = {}

    def state_for(self, p: np.ndarray) -> dict:
        entry = self._state.get(id(p))
        if entry is None or entry[0] is not p:
            if self.kind == "adam":
                st = {"t": 0, "m": np.zeros_like(p), "v": np.zeros_like(p)}
            elif self.kind == "adadelta":
                st = {"sq_grad": np.zeros_like(p), "sq_delta": np.zeros_like(p)}
            else:
                st = {}
            self._state[id(p)] = (p, st)
            return st
        return entry[1]

    def step(self, params, grads):
        """Update every ``params[i]`` in place from ``grads[i]``; returns ``params``."""
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        lr = self.learning_rate
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if self.kind == "sgd":
                p -= lr * g
                continue
            st = self.state_for(p)
            if self.kind == "adam":
                st["t"] += 1
                t = st["t"]
                m, v = st["m"], st["v"]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                m_hat = m / (1.0 - self.beta1 ** t)
                v_hat = v / (1.0 - self.beta2 ** t)
                p -= lr * m_hat / (np.sqrt(v_hat) + self.adam_eps)
            else:
                sq_grad, sq_delta = st["sq_grad"], st["sq_delta"]
                sq_grad *= self.rho
                sq_grad += (1.0 - self.rho) * g * g
                delta = np.sqrt(sq_delta + self.adadelta_eps) / np.sqrt(sq_grad + self.adadelta_eps) * g
                sq_delta *= self.rho
                sq_delta += (1.0 - self.rho) * delta * delta
                p -= lr * delta
        return params


def optimizer_step(opt: Optimizer, params, grads):
    return opt.step(params, grads)
