"""DDPM machinery for the diffusion action head: cosine schedule, forward
noising, and ancestral sampling. A literal additive-noise mode is kept behind
the `noising` switch."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class DiffusionSchedule:
    alpha_bars: np.ndarray  # (K,), cumulative signal fractions, decreasing
    alphas: np.ndarray  # (K,), per-step fractions

    @property
    def K(self) -> int:
        return len(self.alpha_bars)


def cosine_schedule(K: int, s: float = 0.008) -> DiffusionSchedule:
    def f(u: float) -> float:
        return math.cos((u + s) / (1.0 + s) * math.pi / 2.0) ** 2

    abar = np.array([f((k + 1) / K) / f(0.0) for k in range(K)])
    abar = np.clip(abar, 1e-6, 1.0)
    prev = np.concatenate([[1.0], abar[:-1]])
    alphas = np.clip(abar / prev, 1e-3, 0.9999)
    return DiffusionSchedule(alpha_bars=abar, alphas=alphas)


def noise_actions(actions: np.ndarray, k: np.ndarray, eps: np.ndarray,
                  sched: DiffusionSchedule, noising: str = "ddpm") -> np.ndarray:
    """Forward-noise chunks at per-sample step indices k."""
    if noising == "additive":
        return actions + eps
    if noising != "ddpm":
        raise ValueError(f"noising must be ddpm|additive, got {noising!r}")
    ab = sched.alpha_bars[np.asarray(k, dtype=np.int64)].reshape(-1, 1, 1)
    return np.sqrt(ab) * actions + np.sqrt(1.0 - ab) * eps


def ddpm_sample(denoise, shape: tuple, sched: DiffusionSchedule, rng: np.random.Generator) -> np.ndarray:
    """Ancestral sampling from pure noise; `denoise(x_k, k) -> eps_hat`.

    The result is clipped to the [-1, 1] action bounds.
    """
    x = rng.standard_normal(shape)
    for k in range(sched.K - 1, -1, -1):
        eps_hat = denoise(x, k)
        ab = sched.alpha_bars[k]
        a = sched.alphas[k]
        x = (x - (1.0 - a) / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(a)
        if k > 0:
            ab_prev = sched.alpha_bars[k - 1]
            var = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - a)
            x = x + math.sqrt(max(var, 0.0)) * rng.standard_normal(shape)
    return np.clip(x, -1.0, 1.0)
