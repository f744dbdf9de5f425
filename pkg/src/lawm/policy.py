"""Imitation-learning policy: FiLM-conditioned conv encoder, MLP trunk with
per-step chunk feature slots, and a swappable linear output head.

The trunk input is padded to a fixed width across stages (proprioception,
noised chunk, and diffusion-step embedding slots are fed zeros when a stage
does not use them), so switching stages only ever touches the head.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .seeding import stream

STAGES = ("pretrain", "finetune_nll", "finetune_diffusion")
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HEAD_PREFIX = "head."


class StageError(RuntimeError):
    """An operation was called on a policy in the wrong training stage."""


@dataclass
class PolicyConfig:
    n: int = 10
    d_action: int = 7
    image_hw: int = 64
    vis_channels: tuple = (8, 16, 32, 64)
    vis_dim: int = 128
    lang_vocab: int = 512
    lang_dim: int = 32
    prop_dim: int = 32
    trunk_hidden: int = 256
    step_dim: int = 64
    k_emb_dim: int = 16
    dtype: str = "float32"


def hash_tokens(instruction: str, vocab: int) -> np.ndarray:
    """Whitespace tokens hashed into a fixed bucket vocabulary."""
    toks = instruction.lower().split()
    return np.asarray([zlib.crc32(t.encode()) % vocab for t in toks], dtype=np.int64)


def sinusoidal_embedding(k: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Standard sin/cos embedding of integer step indices; shape (B, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    ang = np.asarray(k, dtype=np.float64).reshape(-1, 1) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class ActionChunkPrediction:
    mean: Tensor  # (B, n, 7)
    log_std: Tensor  # (7,), clamped


class Policy:
    def __init__(self, cfg: PolicyConfig, seed: int = 0, stage: str = "pretrain",
                 params: Optional[nn.Params] = None):
        if stage not in STAGES:
            raise StageError(f"unknown stage {stage!r}")
        self.cfg = cfg
        self.stage = stage
        self.dtype = np.dtype(cfg.dtype)
        if params is not None:
            self.params = params
        else:
            self.params = self._init_params(seed)

    def _init_params(self, seed: int) -> nn.Params:
        cfg = self.cfg
        rng = stream(seed, "policy_init")
        p = nn.Params()
        nn.add_frame_encoder(p, "enc", rng, cfg.image_hw, cfg.vis_channels, cfg.vis_dim, self.dtype)
        p.add("lang.emb", 0.1 * rng.standard_normal((cfg.lang_vocab, cfg.lang_dim)).astype(self.dtype))
        nn.add_linear(p, "film_scale", rng, cfg.lang_dim, cfg.vis_dim, self.dtype)
        nn.add_linear(p, "film_shift", rng, cfg.lang_dim, cfg.vis_dim, self.dtype)
        nn.add_linear(p, "prop", rng, 7, cfg.prop_dim, self.dtype)
        trunk_in = cfg.vis_dim + cfg.prop_dim + cfg.n * cfg.d_action + cfg.k_emb_dim
        nn.add_linear(p, "trunk.l1", rng, trunk_in, cfg.trunk_hidden, self.dtype)
        nn.add_linear(p, "trunk.l2", rng, cfg.trunk_hidden, cfg.n * cfg.step_dim, self.dtype)
        self._add_head(p, rng)
        return p

    def _add_head(self, p: nn.Params, rng) -> None:
        nn.add_linear(p, "head", rng, self.cfg.step_dim, self.cfg.d_action, self.dtype, head=True)
        p.add("head.log_std", np.zeros(self.cfg.d_action, dtype=self.dtype))

    # -- observation encoding -------------------------------------------------

    def _frames_to_float(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames)
        if frames.dtype == np.uint8:
            frames = frames.astype(self.dtype) / self.dtype.type(255.0)
        if frames.ndim == 3:
            frames = frames[None]
        return frames.astype(self.dtype, copy=False)

    @staticmethod
    def normalize_proprio(proprio: np.ndarray) -> np.ndarray:
        p = np.asarray(proprio, dtype=np.float64).copy()
        p[..., 3:6] /= math.pi
        return p

    def encode_observation(self, frames, proprio, instructions: Sequence[str]) -> Tensor:
        """Fuse frame, language, and optional proprioception into (B, vis+prop)."""
        x = Tensor(self._frames_to_float(frames))
        b = x.shape[0]
        if len(instructions) != b:
            raise ValueError("one instruction per frame required")
        vis = nn.frame_encoder(self.params, "enc", x, self.cfg.image_hw, self.cfg.vis_channels)
        ids = [hash_tokens(s, self.cfg.lang_vocab) for s in instructions]
        emb = ad.bag_embed(self.params["lang.emb"], ids)
        scale = nn.linear(self.params, "film_scale", emb)
        shift = nn.linear(self.params, "film_shift", emb)
        vis = ad.silu(vis * (1.0 + scale) + shift)
        if proprio is None:
            prop_in = Tensor(np.zeros((b, 7), dtype=self.dtype))
        else:
            prop_in = Tensor(self.normalize_proprio(proprio).astype(self.dtype).reshape(b, 7))
        prop = ad.silu(nn.linear(self.params, "prop", prop_in))
        return ad.concat([vis, prop], axis=1)

    def _chunk_features(self, obs: Tensor, chunk_in: Optional[Tensor], k_emb: Optional[np.ndarray]) -> Tensor:
        cfg = self.cfg
        b = obs.shape[0]
        if chunk_in is None:
            chunk_in = Tensor(np.zeros((b, cfg.n * cfg.d_action), dtype=self.dtype))
        if k_emb is None:
            k_np = np.zeros((b, cfg.k_emb_dim), dtype=self.dtype)
        else:
            k_np = k_emb.astype(self.dtype)
        x = ad.concat([obs, chunk_in, Tensor(k_np)], axis=1)
        h = ad.silu(nn.linear(self.params, "trunk.l1", x))
        h = nn.linear(self.params, "trunk.l2", h)
        h = ad.silu(ad.reshape(h, (b * cfg.n, cfg.step_dim)))
        return h  # (B*n, step_dim)

    def _head(self, feats: Tensor, b: int) -> Tensor:
        out = nn.linear(self.params, "head", feats)
        return ad.reshape(out, (b, self.cfg.n, self.cfg.d_action))

    # -- stage forwards ---------------------------------------------------------

    def forward_latent(self, frames, instructions) -> Tensor:
        """Latent action chunk (B, n, 7), tanh-bounded."""
        if self.stage != "pretrain":
            raise StageError(f"forward_latent requires pretrain stage, policy is in {self.stage!r}")
        obs = self.encode_observation(frames, None, instructions)
        feats = self._chunk_features(obs, None, None)
        return ad.tanh(self._head(feats, obs.shape[0]))

    def forward_action(self, frames, proprio, instructions) -> ActionChunkPrediction:
        if self.stage != "finetune_nll":
            raise StageError(f"forward_action requires finetune_nll stage, policy is in {self.stage!r}")
        obs = self.encode_observation(frames, proprio, instructions)
        feats = self._chunk_features(obs, None, None)
        mean = self._head(feats, obs.shape[0])
        log_std = ad.clip(self.params["head.log_std"], LOG_STD_MIN, LOG_STD_MAX)
        return ActionChunkPrediction(mean, log_std)

    def diffusion_denoise(self, frames, proprio, instructions, noised_chunk, k) -> Tensor:
        """Predict the noise added to an action chunk at diffusion step k."""
        if self.stage != "finetune_diffusion":
            raise StageError(f"diffusion_denoise requires finetune_diffusion stage, policy is in {self.stage!r}")
        obs = self.encode_observation(frames, proprio, instructions)
        b = obs.shape[0]
        k = np.asarray(k).reshape(-1)
        if k.shape[0] == 1 and b > 1:
            k = np.repeat(k, b)
        noised = noised_chunk if isinstance(noised_chunk, Tensor) else Tensor(
            np.asarray(noised_chunk, dtype=self.dtype)
        )
        chunk_in = ad.reshape(noised, (b, self.cfg.n * self.cfg.d_action))
        k_emb = sinusoidal_embedding(k, self.cfg.k_emb_dim)
        feats = self._chunk_features(obs, chunk_in, k_emb)
        return self._head(feats, b)

    # -- head lifecycle -----------------------------------------------------------

    def head_names(self) -> list[str]:
        return [n for n in self.params if n.startswith(HEAD_PREFIX)]

    def backbone_hash(self) -> str:
        return nn.params_hash(self.params, exclude_prefix=HEAD_PREFIX)

    def reinitialize_action_head(self, seed: int, stage: str) -> "Policy":
        """Fresh head from the init distribution; every other weight is copied bit-exactly."""
        if stage not in ("finetune_nll", "finetune_diffusion"):
            raise StageError(f"head reinit targets a finetune stage, got {stage!r}")
        rng = stream(seed, "head_reinit")
        newp = nn.Params()
        for name, t in self.params.items():
            if not name.startswith(HEAD_PREFIX):
                newp.add(name, t.data.copy())
        self._add_head(newp, rng)
        return Policy(self.cfg, stage=stage, params=newp)


# -- losses ---------------------------------------------------------------------

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def chunk_nll(pred: ActionChunkPrediction, actions: np.ndarray, mask: np.ndarray) -> Tensor:
    """Masked Gaussian negative log-likelihood, summed over steps and dims,
    averaged over the batch."""
    b = pred.mean.shape[0]
    a = np.asarray(actions, dtype=pred.mean.dtype)
    m = np.asarray(mask, dtype=pred.mean.dtype)[..., None]
    log_std = ad.reshape(pred.log_std, (1, 1, -1))
    inv_std = ad.texp(-log_std)
    zscore = (Tensor(a) - pred.mean) * inv_std
    per_elem = 0.5 * ad.square(zscore) + log_std + _HALF_LOG_2PI
    masked = per_elem * Tensor(m)
    return ad.tsum(masked) / float(b)


def chunk_action_mse(pred_mean: np.ndarray, actions: np.ndarray, mask: np.ndarray) -> float:
    m = np.asarray(mask, dtype=bool)
    diff = (pred_mean - actions)[m]
    return float(np.mean(diff * diff)) if diff.size else 0.0
