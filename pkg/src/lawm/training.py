"""Stage-1 joint pretraining (policy + world model) and stage-2 finetuning
loops (Gaussian NLL head, DDPM diffusion head), with checkpointing, JSON-lines
logging, and exact resume."""
from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig
from .diffusion import cosine_schedule, ddpm_sample, noise_actions
from .nn import Params
from .optim import Adam
from .policy import ActionChunkPrediction, Policy, PolicyConfig, chunk_action_mse, chunk_nll
from .seeding import stream
from .store import EpisodeStore, FinetuneSampler, PretrainSampler, UnlabeledStoreError
from .worldmodel import WMConfig, WorldModel

POLICY_CKPT = "policy.ckpt"
WM_CKPT = "worldmodel.ckpt"
TRAIN_LOG = "train_log.jsonl"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, episode_ids, ts):
        self.step = step
        self.episode_ids = list(episode_ids)
        self.ts = [int(t) for t in np.asarray(ts)]
        super().__init__(
            f"non-finite loss at step {step}; offending batch episodes={self.episode_ids} ts={self.ts}"
        )


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


class _LogWriter:
    def __init__(self, path: Path, append: bool):
        self.path = Path(path)
        self.fh = open(self.path, "a" if append else "w")

    def write(self, record: dict) -> None:
        self.fh.write(json.dumps(record, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def _policy_header(policy: Policy, step: int, rng: np.random.Generator, extra: dict) -> dict:
    return {
        "kind": "policy",
        "config": dataclasses.asdict(policy.cfg),
        "stage": policy.stage,
        "step": step,
        "rng_state": _rng_state(rng),
        **extra,
    }


def _save_policy(path, policy: Policy, step: int, rng, opt: Optional[Adam], extra: dict, prefix="") -> None:
    arrays = {k: v.data for k, v in policy.params.items()}
    if opt is not None:
        for k, a in opt.state_arrays().items():
            if k.startswith(("adam.m." + prefix, "adam.v." + prefix)):
                arrays[k] = a
    save_checkpoint(path, arrays, _policy_header(policy, step, rng, extra))


def load_policy(path) -> tuple[Policy, dict]:
    arrays, header = load_checkpoint(path)
    if header.get("kind") != "policy":
        raise CheckpointError(f"{path} is not a policy checkpoint")
    cfg = PolicyConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in header["config"].items()})
    params = Params()
    for name, arr in arrays.items():
        if not name.startswith("adam."):
            params.add(name, arr)
    return Policy(cfg, stage=header["stage"], params=params), header


def load_worldmodel(path) -> tuple[WorldModel, dict]:
    arrays, header = load_checkpoint(path)
    if header.get("kind") != "worldmodel":
        raise CheckpointError(f"{path} is not a world-model checkpoint")
    cfg = WMConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in header["config"].items()})
    params = Params()
    for name, arr in arrays.items():
        if not name.startswith("adam."):
            params.add(name, arr)
    return WorldModel(cfg, params=params), header


def _save_worldmodel(path, wm: WorldModel, step: int, rng, opt: Optional[Adam], extra: dict) -> None:
    arrays = {k: v.data for k, v in wm.params.items()}
    if opt is not None:
        for k, a in opt.state_arrays().items():
            if k.startswith(("adam.m.wm.", "adam.v.wm.")):
                arrays[k] = a
    header = {
        "kind": "worldmodel",
        "config": dataclasses.asdict(wm.cfg),
        "step": step,
        "rng_state": _rng_state(rng),
        **extra,
    }
    save_checkpoint(path, arrays, header)


# -- stage 1: joint latent-action pretraining -----------------------------------


def pretrain(cfg: RunConfig, store: EpisodeStore, out_dir, resume: bool = False) -> dict:
    """Joint self-supervised training of the latent-action policy and the world
    model on an (action-free) episode store. Returns checkpoint paths."""
    if cfg.train.stage != "pretrain":
        raise ValueError(f"pretrain() called with train.stage={cfg.train.stage!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ppath, wpath, lpath = out_dir / POLICY_CKPT, out_dir / WM_CKPT, out_dir / TRAIN_LOG

    seed = cfg.train.seed
    start_step = 0
    if resume:
        policy, p_hdr = load_policy(ppath)
        wm, _ = load_worldmodel(wpath)
        rng = _restore_rng(p_hdr["rng_state"])
        start_step = int(p_hdr["step"])
    else:
        policy = Policy(cfg.policy, seed=seed, stage="pretrain")
        wm = WorldModel(cfg.worldmodel, seed=seed)
        rng = stream(seed, "train")

    sampler = PretrainSampler(store, n=cfg.policy.n)
    named = {f"policy.{k}": v for k, v in policy.params.items()}
    named.update({f"wm.{k}": v for k, v in wm.params.items()})
    opt = Adam(named, lr=cfg.train.lr, clip_norm=cfg.train.clip_norm)
    if resume:
        p_arrays, _ = load_checkpoint(ppath)
        w_arrays, _ = load_checkpoint(wpath)
        merged = {k: v for k, v in {**p_arrays, **w_arrays}.items() if k.startswith("adam.")}
        opt.load_state_arrays(merged, t=start_step)

    extra = {"store_fingerprint": store.fingerprint, "train_seed": seed}
    log = _LogWriter(lpath, append=resume)
    t0 = time.perf_counter()
    try:
        for step in range(start_step + 1, cfg.train.steps + 1):
            batch = sampler.sample(cfg.train.batch, rng)
            chunk = policy.forward_latent(batch.frames[:, 0], batch.instructions)
            _, losses = wm.observe_sequence(batch.frames, chunk, rng)
            if not np.isfinite(losses.total_value):
                raise TrainingDiverged(step, batch.episode_ids, batch.ts)
            opt.zero_grad()
            losses.total.backward()
            grad_norm = opt.step()
            if step % cfg.train.log_every == 0:
                log.write(
                    {
                        "step": step,
                        "total": losses.total_value,
                        "recon": losses.recon,
                        "kl": losses.kl,
                        "kl_raw": losses.kl_raw,
                        "grad_norm": grad_norm,
                        "wall_time": time.perf_counter() - t0,
                    }
                )
            if step % cfg.train.eval_every == 0 or step == cfg.train.steps:
                _save_policy(ppath, policy, step, rng, opt, extra, prefix="policy.")
                _save_worldmodel(wpath, wm, step, rng, opt, extra)
    finally:
        log.close()
    return {"policy": str(ppath), "worldmodel": str(wpath), "log": str(lpath)}


# -- stage 2: supervised action finetuning ----------------------------------------


def finetune(cfg: RunConfig, store: EpisodeStore, out_dir, head: str,
             init_ckpt: Optional[str] = None) -> dict:
    """Supervised finetuning on a labeled store.

    head="nll": Gaussian chunk head trained by negative log-likelihood.
    head="diffusion": denoising head trained to predict added noise.
    A pretrained init has its action head reinitialized exactly once; the
    world model is never loaded here.
    """
    if head not in ("nll", "diffusion"):
        raise ValueError(f"head must be nll|diffusion, got {head!r}")
    stage = f"finetune_{head}"
    if not store.labeled:
        raise UnlabeledStoreError("finetuning requires a labeled store")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ppath, lpath = out_dir / POLICY_CKPT, out_dir / TRAIN_LOG

    seed = cfg.train.seed
    log = _LogWriter(lpath, append=False)
    if init_ckpt is not None:
        pretrained, _ = load_policy(init_ckpt)
        if pretrained.stage != "pretrain":
            raise ValueError(f"--init checkpoint must be a pretrain-stage policy, got {pretrained.stage!r}")
        if pretrained.cfg.n != cfg.policy.n:
            raise ValueError(
                f"chunk size mismatch: pretrained n={pretrained.cfg.n}, finetune n={cfg.policy.n}"
            )
        policy = pretrained.reinitialize_action_head(seed, stage)
        log.write({"event": "head_reinit", "seed": seed, "stage": stage, "step": 0})
        init_kind = "pretrained"
    else:
        policy = Policy(cfg.policy, seed=seed, stage=stage)
        init_kind = "scratch"

    sampler = FinetuneSampler(store, n=cfg.policy.n)
    opt = Adam({k: v for k, v in policy.params.items()}, lr=cfg.train.lr, clip_norm=cfg.train.clip_norm)
    rng = stream(seed, "train")
    sched = cosine_schedule(cfg.train.diffusion_k)
    extra = {"store_fingerprint": store.fingerprint, "train_seed": seed, "init": init_kind,
             "diffusion_k": cfg.train.diffusion_k, "noising": cfg.train.noising}

    t0 = time.perf_counter()
    try:
        for step in range(1, cfg.train.steps + 1):
            batch = sampler.sample(cfg.train.batch, rng)
            record: dict = {"step": step}
            if head == "nll":
                pred = policy.forward_action(batch.obs_frames, batch.proprio, batch.instructions)
                loss = chunk_nll(pred, batch.action_chunks, batch.mask)
                record["nll"] = float(loss.data)
                record["action_mse"] = chunk_action_mse(pred.mean.data, batch.action_chunks, batch.mask)
            else:
                b = batch.obs_frames.shape[0]
                k = rng.integers(0, sched.K, size=b)
                eps = rng.standard_normal(batch.action_chunks.shape)
                noised = noise_actions(batch.action_chunks, k, eps, sched, cfg.train.noising)
                eps_hat = policy.diffusion_denoise(
                    batch.obs_frames, batch.proprio, batch.instructions, noised, k
                )
                m = batch.mask[..., None].astype(eps_hat.dtype)
                err = (eps_hat - Tensor(eps.astype(eps_hat.dtype))) * Tensor(m)
                denom = float(m.sum() * batch.action_chunks.shape[2])
                loss = ad.tsum(ad.square(err)) / denom
                record["diffusion_loss"] = float(loss.data)
            if not np.isfinite(float(loss.data)):
                raise TrainingDiverged(step, batch.episode_ids, batch.ts)
            opt.zero_grad()
            loss.backward()
            record["grad_norm"] = opt.step()
            record["wall_time"] = time.perf_counter() - t0
            if step % cfg.train.log_every == 0:
                log.write(record)
            if step % cfg.train.eval_every == 0 or step == cfg.train.steps:
                _save_policy(ppath, policy, step, rng, opt, extra, prefix="")
    finally:
        log.close()
    return {
        "policy": str(ppath),
        "log": str(lpath),
        "optimizer_params": sorted(opt.params),
        "init": init_kind,
    }


# -- diffusion-head action sampling -------------------------------------------------


def sample_diffusion_actions(policy: Policy, frame, proprio, instruction: str,
                             rng: np.random.Generator, diffusion_k: int = 50) -> np.ndarray:
    """Ancestral DDPM sampling of one action chunk, clipped to [-1, 1]."""
    if policy.stage != "finetune_diffusion":
        raise ValueError(f"diffusion sampling needs a finetune_diffusion policy, got {policy.stage!r}")
    sched = cosine_schedule(diffusion_k)
    shape = (1, policy.cfg.n, policy.cfg.d_action)

    def denoise(x, k):
        with ad.no_grad():
            out = policy.diffusion_denoise(frame[None] if np.asarray(frame).ndim == 3 else frame,
                                           proprio, [instruction], x, np.asarray([k]))
        return out.data.astype(np.float64)

    return ddpm_sample(denoise, shape, sched, rng)[0]
