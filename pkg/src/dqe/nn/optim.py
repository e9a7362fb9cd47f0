from __future__ import annotations

import numpy as np


class AdaBelief:
    """Adam variant that scales steps by the running variance of the gradient
    around its own moving average.

        m <- b1 m + (1 - b1) g
        s <- b2 s + (1 - b2) (g - m)^2 + eps
        theta <- theta - lr * m_hat / (sqrt(s_hat) + eps)

    with bias corrections m_hat = m / (1 - b1^t), s_hat = s / (1 - b2^t).
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-16):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.s: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        """Update ``params`` in place."""
        self.t += 1
        b1, b2, eps = self.beta1, self.beta2, self.eps
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.s[name] = np.zeros_like(p)
            m, s = self.m[name], self.s[name]
            m *= b1
            m += (1 - b1) * g
            dev = g - m
            s *= b2
            s += (1 - b2) * dev * dev + eps
            p -= lr * (m / c1) / (np.sqrt(s / c2) + eps)


def adabelief_step(params, grads, state: AdaBelief, lr: float):
    state.step(params, grads, lr)
