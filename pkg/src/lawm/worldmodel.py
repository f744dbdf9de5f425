"""Recurrent state-space world model with grouped categorical latents.

A GRU carries the deterministic state; the stochastic latent is G groups of
C classes, sampled one-hot with a straight-through gradient. The posterior
conditions on the current frame, the prior does not, and their KL divergence
(free-bits clamped per group in the training objective) forces the prior to
predict. The decoder is a unit-variance Gaussian, i.e. plain MSE on pixels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .seeding import stream

PRESETS = {
    "small": dict(deter=64, hidden=128, embed=64, channels=(8, 16, 32, 64)),
    "medium": dict(deter=256, hidden=256, embed=128, channels=(16, 32, 64, 128)),
    "large": dict(deter=512, hidden=384, embed=192, channels=(24, 48, 96, 192)),
}


@dataclass
class WMConfig:
    preset: str = "small"
    image_hw: int = 64
    groups: int = 8
    classes: int = 8
    deter: int = 64
    hidden: int = 128
    embed: int = 64
    channels: tuple = (8, 16, 32, 64)
    action_dim: int = 7
    beta: float = 0.1
    free_bits: float = 1.0
    unimix: float = 0.01
    decode_from: str = "posterior"
    dtype: str = "float32"

    def __post_init__(self):
        if self.decode_from not in ("posterior", "prior"):
            raise ValueError("decode_from must be 'posterior' or 'prior'")


def wm_config(preset: str = "small", **overrides) -> WMConfig:
    if preset not in PRESETS:
        raise ValueError(f"unknown world-model preset {preset!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[preset])
    kw.update(overrides)
    return WMConfig(preset=preset, **kw)


@dataclass
class RSSMState:
    h: Tensor  # (B, deter)
    z: Tensor  # (B, groups*classes), one-hot per group

    @property
    def batch(self) -> int:
        return self.h.shape[0]


class CategoricalDist:
    """Grouped categorical over (B, G, C) given normalized log-probabilities."""

    def __init__(self, log_probs: Tensor):
        self.log_probs = log_probs

    @property
    def shape(self):
        return self.log_probs.shape

    @property
    def probs(self) -> Tensor:
        return ad.texp(self.log_probs)

    @staticmethod
    def from_probs(probs: np.ndarray) -> "CategoricalDist":
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim == 2:
            p = p[None]
        return CategoricalDist(Tensor(np.log(p)))

    @staticmethod
    def from_logits(logits: Tensor) -> "CategoricalDist":
        return CategoricalDist(ad.log_softmax(logits, axis=-1))


@dataclass
class LossBreakdown:
    total: Tensor  # scalar, graph-bearing: recon + beta * kl
    recon: float  # mean over steps and pixels of squared error
    kl: float  # free-bits-clamped KL, summed over steps (enters total)
    kl_raw: float  # unclamped KL, reporting only
    beta: float
    step_recon: list = field(default_factory=list)
    step_kl: list = field(default_factory=list)

    @property
    def total_value(self) -> float:
        return float(self.total.data)


class WorldModel:
    def __init__(self, cfg: WMConfig, seed: int = 0, params: Optional[nn.Params] = None):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        self.zdim = cfg.groups * cfg.classes
        self.params = params if params is not None else self._init_params(seed)

    def _init_params(self, seed: int) -> nn.Params:
        cfg = self.cfg
        rng = stream(seed, "wm_init")
        p = nn.Params()
        nn.add_frame_encoder(p, "enc", rng, cfg.image_hw, cfg.channels, cfg.embed, self.dtype)
        nn.add_gru(p, "gru", rng, self.zdim + cfg.action_dim, cfg.deter, self.dtype)
        nn.add_linear(p, "post.l1", rng, cfg.deter + cfg.embed, cfg.hidden, self.dtype)
        nn.add_linear(p, "post.out", rng, cfg.hidden, self.zdim, self.dtype)
        nn.add_linear(p, "prior.l1", rng, cfg.deter, cfg.hidden, self.dtype)
        nn.add_linear(p, "prior.out", rng, cfg.hidden, self.zdim, self.dtype)
        nn.add_frame_decoder(p, "dec", rng, cfg.image_hw, cfg.channels, cfg.deter + self.zdim, self.dtype)
        return p

    # -- pieces ------------------------------------------------------------

    def _frames_to_float(self, frames) -> np.ndarray:
        frames = np.asarray(frames)
        if frames.dtype == np.uint8:
            frames = frames.astype(self.dtype) / self.dtype.type(255.0)
        return frames.astype(self.dtype, copy=False)

    def encode_frames(self, frames) -> Tensor:
        """(B, H, W, 3) -> (B, embed)."""
        x = Tensor(self._frames_to_float(frames)) if not isinstance(frames, Tensor) else frames
        return nn.frame_encoder(self.params, "enc", x, self.cfg.image_hw, self.cfg.channels)

    def initial_state(self, batch: int, rng: np.random.Generator) -> RSSMState:
        h = Tensor(np.zeros((batch, self.cfg.deter), dtype=self.dtype))
        z = self.sample(self.prior(h), rng)
        return RSSMState(h, z)

    def recurrent_step(self, prev: RSSMState, action) -> Tensor:
        """Deterministic path h_t from (previous state, action input)."""
        a = action if isinstance(action, Tensor) else Tensor(np.asarray(action, dtype=self.dtype))
        if a.shape[-1] != self.cfg.action_dim:
            raise ValueError(f"action dim must be {self.cfg.action_dim}")
        x = ad.concat([prev.z, a], axis=1)
        return nn.gru(self.params, "gru", x, prev.h)

    def _mix(self, logits: Tensor) -> CategoricalDist:
        b = logits.shape[0]
        shaped = ad.reshape(logits, (b, self.cfg.groups, self.cfg.classes))
        probs = ad.softmax(shaped, axis=-1)
        mixed = (1.0 - self.cfg.unimix) * probs + self.cfg.unimix / self.cfg.classes
        return CategoricalDist(ad.tlog(mixed))

    def posterior_from_embed(self, h: Tensor, embed: Tensor) -> CategoricalDist:
        x = ad.concat([h, embed], axis=1)
        hid = ad.silu(nn.linear(self.params, "post.l1", x))
        return self._mix(nn.linear(self.params, "post.out", hid))

    def posterior(self, h: Tensor, frames) -> CategoricalDist:
        return self.posterior_from_embed(h, self.encode_frames(frames))

    def prior(self, h: Tensor) -> CategoricalDist:
        hid = ad.silu(nn.linear(self.params, "prior.l1", h))
        return self._mix(nn.linear(self.params, "prior.out", hid))

    def sample(self, dist: CategoricalDist, rng: np.random.Generator, temperature: float = 1.0) -> Tensor:
        """One-hot sample per group; straight-through gradient into the probabilities."""
        lp = dist.log_probs.data
        b, g, c = lp.shape
        if temperature == 0.0:
            idx = lp.argmax(axis=-1)
        else:
            scaled = lp / temperature
            scaled = scaled - scaled.max(axis=-1, keepdims=True)
            p = np.exp(scaled)
            p /= p.sum(axis=-1, keepdims=True)
            cdf = np.cumsum(p, axis=-1)
            u = rng.random((b, g, 1))
            idx = (u > cdf).sum(axis=-1)
            idx = np.minimum(idx, c - 1)
        onehot = np.zeros((b, g, c), dtype=lp.dtype)
        np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
        st = ad.straight_through(onehot, dist.probs)
        return ad.reshape(st, (b, g * c))

    def _z_from(self, dist: CategoricalDist, rng: np.random.Generator, mode: str) -> Tensor:
        if mode == "onehot":
            return self.sample(dist, rng)
        if mode == "soft":
            # fully differentiable surrogate (z = probabilities); used by the
            # finite-difference gradient checks, where the straight-through
            # estimator's deliberate bias would otherwise show up
            b = dist.shape[0]
            return ad.reshape(dist.probs, (b, self.zdim))
        raise ValueError(f"sample mode must be onehot|soft, got {mode!r}")

    def decode(self, state: RSSMState) -> Tensor:
        x = ad.concat([state.h, state.z], axis=1)
        return nn.frame_decoder(self.params, "dec", x, self.cfg.image_hw, self.cfg.channels)

    # -- divergences ----------------------------------------------------------

    @staticmethod
    def kl_groupwise(q: CategoricalDist, p: CategoricalDist) -> Tensor:
        """KL(q || p) per (batch, group)."""
        if q.shape != p.shape:
            raise ValueError("distributions must share (G, C)")
        qp = q.probs
        return ad.tsum(qp * (q.log_probs - p.log_probs), axis=-1)

    @staticmethod
    def kl_divergence(q: CategoricalDist, p: CategoricalDist) -> Tensor:
        """Scalar KL: summed over groups, averaged over the batch."""
        return ad.tmean(ad.tsum(WorldModel.kl_groupwise(q, p), axis=-1))

    # -- sequence losses ---------------------------------------------------------

    def observe_sequence(self, frames, chunk, rng: np.random.Generator,
                         sample_mode: str = "onehot") -> tuple[list[RSSMState], LossBreakdown]:
        """Filter a window of n+1 frames with an n-step latent-action chunk.

        The first frame initializes the stochastic state through the
        posterior; each subsequent step recurs with the chunk's action,
        reconstructs the observed frame, and pays KL(posterior || prior).
        """
        cfg = self.cfg
        frames = self._frames_to_float(frames)
        b, n_plus_1 = frames.shape[0], frames.shape[1]
        n = n_plus_1 - 1
        chunk_t = chunk if isinstance(chunk, Tensor) else Tensor(np.asarray(chunk, dtype=self.dtype))
        if chunk_t.shape[0] != b or chunk_t.shape[1] != n:
            raise ValueError(f"chunk must be ({b}, {n}, {cfg.action_dim}), got {chunk_t.shape}")

        flat = frames.reshape(b * n_plus_1, *frames.shape[2:])
        embeds = self.encode_frames(flat)
        embeds = ad.reshape(embeds, (b, n_plus_1, cfg.embed))

        h = Tensor(np.zeros((b, cfg.deter), dtype=self.dtype))
        post0 = self.posterior_from_embed(h, embeds[:, 0])
        z = self._z_from(post0, rng, sample_mode)
        state = RSSMState(h, z)

        states: list[RSSMState] = []
        decode_inputs: list[Tensor] = []
        kl_steps: list[Tensor] = []
        for i in range(n):
            h = self.recurrent_step(state, chunk_t[:, i])
            post = self.posterior_from_embed(h, embeds[:, i + 1])
            prior = self.prior(h)
            z = self._z_from(post, rng, sample_mode)
            state = RSSMState(h, z)
            states.append(state)
            kl_steps.append(self.kl_groupwise(post, prior))
            if cfg.decode_from == "prior":
                zhat = self._z_from(prior, rng, sample_mode)
                decode_inputs.append(ad.concat([h, zhat], axis=1))
            else:
                decode_inputs.append(ad.concat([h, z], axis=1))

        dec_in = ad.concat(decode_inputs, axis=0)  # step-major (n*B, ...)
        xhat = nn.frame_decoder(self.params, "dec", dec_in, cfg.image_hw, cfg.channels)
        targets = np.swapaxes(frames[:, 1:], 0, 1).reshape(n * b, *frames.shape[2:])
        err = xhat - Tensor(targets)
        recon = ad.tmean(ad.square(err))

        kl_clamped = [
            ad.tmean(ad.tsum(ad.maximum_scalar(k, cfg.free_bits), axis=-1)) for k in kl_steps
        ]
        kl_raw = [ad.tmean(ad.tsum(k, axis=-1)) for k in kl_steps]
        kl_total = kl_clamped[0]
        for k in kl_clamped[1:]:
            kl_total = kl_total + k
        total = recon + cfg.beta * kl_total

        err_np = err.data.reshape(n, b, -1)
        step_recon = [float(np.mean(e * e)) for e in err_np]
        step_kl = [float(k.data) for k in kl_raw]
        losses = LossBreakdown(
            total=total,
            recon=float(recon.data),
            kl=float(kl_total.data),
            kl_raw=float(sum(step_kl)),
            beta=cfg.beta,
            step_recon=step_recon,
            step_kl=step_kl,
        )
        return states, losses

    def imagine_rollout(self, start: RSSMState, chunk, rng: np.random.Generator) -> np.ndarray:
        """Open-loop rollout: the stochastic latent comes from the prior only."""
        chunk_np = chunk.data if isinstance(chunk, Tensor) else np.asarray(chunk, dtype=self.dtype)
        b, n = chunk_np.shape[0], chunk_np.shape[1]
        out = np.empty((b, n, self.cfg.image_hw, self.cfg.image_hw, 3), dtype=self.dtype)
        with ad.no_grad():
            state = RSSMState(start.h.detach(), start.z.detach())
            for i in range(n):
                h = self.recurrent_step(state, chunk_np[:, i])
                prior = self.prior(h)
                z = self.sample(prior, rng)
                state = RSSMState(h, z)
                out[:, i] = self.decode(state).data
        return out


def pixel_variance_baseline(frames: np.ndarray) -> float:
    """MSE of the best constant-image predictor: mean per-pixel variance.

    frames: (N, H, W, 3) uint8 or float in [0, 1].
    """
    x = np.asarray(frames)
    if x.dtype == np.uint8:
        x = x.astype(np.float64) / 255.0
    mean = x.mean(axis=0, keepdims=True)
    return float(np.mean((x - mean) ** 2))
