"""Adam updates with global-norm clipping and non-finite gradient detection."""

from __future__ import annotations

import numpy as np


class TrainingFault(RuntimeError):
    """Raised when training produces non-finite gradients or values."""


def adam_update(value, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step; returns (new_value, new_m, new_v).

    ``t`` is the step counter after incrementing (1 on the first call).
    """
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new_value = value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_value, m, v


class Adam:
    """Adam over a list of named leaf nodes, reading adjoints as gradients."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {name: np.zeros_like(p.value) for name, p in self.params}
        self.v = {name: np.zeros_like(p.value) for name, p in self.params}

    def step(self) -> float:
        """Apply one update from current adjoints; returns the pre-clip grad norm."""
        grads = {}
        sq_sum = 0.0
        for name, p in self.params:
            g = p.grad()
            if not np.all(np.isfinite(g)):
                raise TrainingFault(f"non-finite gradient for {name}")
            grads[name] = g
            sq_sum += float(np.sum(g * g))
        norm = float(np.sqrt(sq_sum))
        if self.clip_norm is not None and norm > self.clip_norm:
            factor = self.clip_norm / norm
            for name in grads:
                grads[name] = grads[name] * factor
        self.t += 1
        for name, p in self.params:
            p.value, self.m[name], self.v[name] = adam_update(
                p.value, grads[name], self.m[name], self.v[name], self.t,
                self.lr, self.beta1, self.beta2, self.eps)
        return norm

    def state_arrays(self, prefix: str) -> dict:
        out = {f"{prefix}.t": np.asarray([float(self.t)])}
        for name, _ in self.params:
            out[f"{name}.adam_m"] = self.m[name]
            out[f"{name}.adam_v"] = self.v[name]
        return out

    def load_state(self, arrays: dict, prefix: str):
        self.t = int(arrays[f"{prefix}.t"][0])
        for name, p in self.params:
            m = np.asarray(arrays[f"{name}.adam_m"], dtype=np.float64)
            v = np.asarray(arrays[f"{name}.adam_v"], dtype=np.float64)
            if m.shape != p.value.shape or v.shape != p.value.shape:
                raise ValueError(f"optimizer state shape mismatch for {name}")
            self.m[name] = m.copy()
            self.v[name] = v.copy()
