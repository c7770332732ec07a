"""ADAM and the cosine-annealed learning rate."""
import math

import numpy as np

from ..errors import NonFinite, ShapeMismatch


def cosine_lr(step_c, step_f, eta_min, eta_max):
    """``eta_min + (eta_max - eta_min) * (1 + cos(pi * step_c / step_f)) / 2``.

    The three anchor points (start, middle, end) are returned exactly.
    """
    if step_f <= 0:
        raise ValueError("step_f must be positive")
    if step_c == 0:
        return float(eta_max)
    if step_c >= step_f:
        return float(eta_min)
    if 2 * step_c == step_f:
        return 0.5 * (eta_max + eta_min)
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + math.cos(math.pi * step_c / step_f))


class Adam:
    """Bias-corrected ADAM over named parameter arrays."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, named, eta):
        """Update in place.

        ``named`` yields ``(path, param_store, grad_store, key)`` as produced by
        ``Model.named_params``. Every gradient is checked before any
        parameter is touched.
        """
        items = list(named)
        for path, store, grads, key in items:
            g = grads[key]
            if g.shape != store[key].shape:
                raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape {store[key].shape} at {path}")
            if not np.all(np.isfinite(g)):
                raise NonFinite(f"non-finite gradient at {path}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for path, store, grads, key in items:
            g = grads[key]
            m = self.m.get(path)
            if m is None:
                m = self.m[path] = np.zeros_like(g)
                self.v[path] = np.zeros_like(g)
            v = self.v[path]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            store[key] -= eta * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        out = {f"adam.m.{k}": a for k, a in self.m.items()}
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        return out
