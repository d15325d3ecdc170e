"""Gradient-descent optimizers over named parameter sets.

Both optimizers update parameters in place from a ``{name: gradient}`` map.
Parameters absent from the map are left untouched, which is how per-skill
adapters that were not routed in the current batch stay frozen.  Moment
accumulators and step counts are tracked per parameter so sparsely updated
parameters get correct bias correction.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

DEFAULT_LR = 5e-4


def _check_grad(name: str, grad: np.ndarray, param: Tensor):
    if grad.shape != param.data.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameter "
                         f"'{name}' of shape {param.data.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError(f"non-finite gradient for parameter '{name}'; aborting step")


class SGD:
    """Plain gradient descent: w <- w - lr * g."""

    def __init__(self, lr: float = DEFAULT_LR):
        self.lr = lr
        self.step_count = 0

    def step(self, params: dict, grads: dict):
        for name, grad in grads.items():
            p = params[name]
            _check_grad(name, grad, p)
            p.data = p.data - self.lr * grad
        self.step_count += 1

    def state_arrays(self) -> dict:
        return {"step_count": np.array([float(self.step_count)])}

    def load_state_arrays(self, arrays: dict):
        self.step_count = int(arrays["step_count"][0])


class Adam:
    """Bias-corrected adaptive-moment descent (per-parameter step counts)."""

    def __init__(self, lr: float = DEFAULT_LR, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = {}
        self.step_count = 0

    def step(self, params: dict, grads: dict):
        for name in grads:
            grad = grads[name]
            p = params[name]
            _check_grad(name, grad, p)
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (grad * grad)
            # update = lr * m_hat / (sqrt(v_hat) + eps) with the bias
            # corrections folded into scalars
            c1 = 1.0 - self.beta1 ** t
            c2 = 1.0 - self.beta2 ** t
            denom = np.sqrt(v)
            denom += self.eps * np.sqrt(c2)
            p.data = p.data - (self.lr * np.sqrt(c2) / c1) * m / denom
        self.step_count += 1

    def state_arrays(self) -> dict:
        """Flatten optimizer state to named float64 arrays (checkpointing)."""
        out = {"step_count": np.array([float(self.step_count)])}
        for name in sorted(self.m):
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
            out[f"t.{name}"] = np.array([float(self.t[name])])
        return out

    def load_state_arrays(self, arrays: dict):
        self.m, self.v, self.t = {}, {}, {}
        self.step_count = int(arrays["step_count"][0])
        for key, arr in arrays.items():
            if key.startswith("m."):
                self.m[key[2:]] = arr
            elif key.startswith("v."):
                self.v[key[2:]] = arr
            elif key.startswith("t."):
                self.t[key[2:]] = int(arr[0])


def make_optimizer(kind: str, lr: float) -> SGD | Adam:
    if kind == "adam":
        return Adam(lr=lr)
    if kind == "sgd":
        return SGD(lr=lr)
    raise ValueError(f"unknown optimizer kind '{kind}' (expected 'adam' or 'sgd')")
