"""Shared fixtures: tiny model configs and small generated stores."""
from __future__ import annotations

import numpy as np
import pytest

from lawm.config import default_config
from lawm.datagen import DatasetConfig, generate_dataset
from lawm.policy import PolicyConfig
from lawm.store import EpisodeStore
from lawm.worldmodel import wm_config


def tiny_policy_config(hw: int = 16, n: int = 3, dtype: str = "float32") -> PolicyConfig:
    return PolicyConfig(
        image_hw=hw, n=n, vis_channels=(4, 8), vis_dim=16, lang_dim=8, lang_vocab=64,
        prop_dim=8, trunk_hidden=32, step_dim=16, k_emb_dim=8, dtype=dtype,
    )


def tiny_wm_config(hw: int = 16, dtype: str = "float32", **over):
    kw = dict(groups=2, classes=4, deter=16, hidden=16, embed=16, channels=(4, 8), dtype=dtype)
    kw.update(over)
    return wm_config("small", image_hw=hw, **kw)


def tiny_run_config(hw: int = 16, n: int = 3, steps: int = 20, batch: int = 2, seed: int = 0):
    cfg = default_config()
    cfg.env.image_hw = hw
    cfg.env.max_episode_steps = 60
    cfg.policy = tiny_policy_config(hw, n)
    cfg.worldmodel = tiny_wm_config(hw)
    cfg.train.steps = steps
    cfg.train.batch = batch
    cfg.train.seed = seed
    cfg.train.eval_every = max(steps // 2, 1)
    cfg.train.log_every = 5
    return cfg


def fd_gradcheck(build_loss, params, rng, eps: float = 1e-6, n_per_param: int = 4) -> float:
    """Worst relative error between analytic gradients and central differences.

    build_loss must zero grads itself and return a scalar Tensor; params must
    be float64 for the tolerances used in the tests.
    """
    loss = build_loss()
    loss.backward()
    grads = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        picks = rng.choice(flat.size, size=min(n_per_param, flat.size), replace=False)
        for idx in picks:
            old = flat[idx]
            flat[idx] = old + eps
            lp = float(build_loss().data)
            flat[idx] = old - eps
            lm = float(build_loss().data)
            flat[idx] = old
            fd = (lp - lm) / (2.0 * eps)
            an = gflat[idx]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-7)
            worst = max(worst, rel)
    return worst


@pytest.fixture(scope="session")
def small_labeled_store(tmp_path_factory) -> EpisodeStore:
    cfg = DatasetConfig(categories=("put", "move"), tasks_per_category=1, episodes_per_task=3,
                        seed=0, labeled=True, image_hw=16, max_episode_steps=60)
    return generate_dataset(cfg, tmp_path_factory.mktemp("labeled_store"))


@pytest.fixture(scope="session")
def small_unlabeled_store(tmp_path_factory) -> EpisodeStore:
    cfg = DatasetConfig(categories=("put", "move"), tasks_per_category=1, episodes_per_task=3,
                        seed=0, labeled=False, image_hw=16, max_episode_steps=60)
    return generate_dataset(cfg, tmp_path_factory.mktemp("unlabeled_store"))


@pytest.fixture(scope="session")
def four_cat_labeled_store(tmp_path_factory) -> EpisodeStore:
    cfg = DatasetConfig(categories=("put", "move", "remove", "take"), tasks_per_category=1,
                        episodes_per_task=2, seed=3, labeled=True, image_hw=16,
                        max_episode_steps=60)
    return generate_dataset(cfg, tmp_path_factory.mktemp("four_cat_store"))
