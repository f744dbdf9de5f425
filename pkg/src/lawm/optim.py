"""Adam with global-norm gradient clipping over named parameter sets."""
from __future__ import annotations

import math

import numpy as np

from . import kernels
from .autodiff import Tensor


class Adam:
    def __init__(self, named_params: dict[str, Tensor], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float | None = 100.0):
        self.params = dict(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        sq = 0.0
        for p in self.params.values():
            if p.grad is not None:
                g = p.grad.astype(np.float64, copy=False)
                sq += float(np.dot(g.ravel(), g.ravel()))
        return math.sqrt(sq)

    def step(self) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        self.t += 1
        norm = self.grad_norm()
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            g = g.astype(p.data.dtype, copy=False)
            if scale != 1.0:
                g = g * p.data.dtype.type(scale)
            kernels.adam_step(p.data, np.ascontiguousarray(g), self.m[k], self.v[k],
                              self.lr, self.beta1, self.beta2, self.eps, bc1, bc2)
        return norm

    # -- checkpoint support ------------------------------------------------

    def state_arrays(self, prefix: str = "adam.") -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"{prefix}m.{k}"] = self.m[k]
            out[f"{prefix}v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int, prefix: str = "adam.") -> None:
        self.t = int(t)
        for k in self.params:
            self.m[k] = arrays[f"{prefix}m.{k}"].copy()
            self.v[k] = arrays[f"{prefix}v.{k}"].copy()
