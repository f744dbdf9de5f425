"""Seeded generation of labeled/unlabeled episode datasets with the scripted expert."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .envsim import (
    CATEGORIES,
    GRASPABLE,
    SUPPORTS,
    COLORS,
    ConfigurationError,
    TaskSpec,
    object_id,
    reset,
    step,
)
from .expert import scripted_expert
from .render import render
from .seeding import rng_from, stream
from .store import Episode, EpisodeStore

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 25


@dataclass
class DatasetConfig:
    categories: tuple = ("put", "move", "remove", "take")
    tasks_per_category: int = 1
    episodes_per_task: int = 50
    seed: int = 0
    labeled: bool = True
    image_hw: int = 64
    max_episode_steps: int = 100
    distractors: int = 2
    success_radius: float = 0.10

    def __post_init__(self):
        for c in self.categories:
            if c not in CATEGORIES:
                raise ConfigurationError(f"unknown task category {c!r}")


def sample_tasks(cfg: DatasetConfig) -> list[TaskSpec]:
    """Deterministically draw (subject, target) pairs for each category."""
    rng = stream(cfg.seed, "dataset", 0)
    tasks = []
    for category in cfg.categories:
        for _ in range(cfg.tasks_per_category):
            for _attempt in range(100):
                s_kind = GRASPABLE[rng.integers(len(GRASPABLE))]
                s_color = COLORS[rng.integers(len(COLORS))]
                if category == "stack":
                    t_kind = GRASPABLE[rng.integers(len(GRASPABLE))]
                else:
                    t_kind = SUPPORTS[rng.integers(len(SUPPORTS))]
                t_color = COLORS[rng.integers(len(COLORS))]
                subject = object_id(s_color, s_kind)
                target = object_id(t_color, t_kind)
                if subject != target:
                    break
            tasks.append(TaskSpec(category, subject, target, cfg.success_radius))
    return tasks


def rollout_expert(task: TaskSpec, seed: int, cfg: DatasetConfig):
    """Run the expert on one seeded episode.

    Returns (frames, actions, proprio, success, stuck).
    """
    state = reset(seed, task, distractors=cfg.distractors, max_steps=cfg.max_episode_steps)
    frames = [render(state, cfg.image_hw)]
    proprio = [state.proprio]
    actions = []
    success = False
    stuck = False
    done = False
    while not done:
        decision = scripted_expert(state)
        if decision.stuck:
            stuck = True
            break
        state, done, success = step(state, decision.action)
        actions.append(np.clip(decision.action, -1.0, 1.0))
        frames.append(render(state, cfg.image_hw))
        proprio.append(state.proprio)
    return (
        np.stack(frames),
        np.stack(actions) if actions else np.zeros((0, 7)),
        np.stack(proprio),
        success,
        stuck,
    )


def _episode_seed(base_seed: int, task_idx: int, episode_idx: int, attempt: int) -> int:
    ss = np.random.SeedSequence([base_seed, 101, task_idx, episode_idx, attempt])
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


def generate_dataset(cfg: DatasetConfig, out_dir) -> EpisodeStore:
    """Roll out the expert over all tasks and write an episode store.

    Failed episodes (expert stuck or step limit hit) are discarded and
    regenerated with the next attempt seed; the count is recorded in the
    manifest. Identical configs produce byte-identical stores.
    """
    tasks = sample_tasks(cfg)
    config_payload = dict(asdict(cfg))
    config_payload["categories"] = list(cfg.categories)
    config_payload["tasks"] = [t.name for t in tasks]
    store = EpisodeStore.create(out_dir, config_payload, labeled=cfg.labeled)

    discarded = 0
    for ti, task in enumerate(tasks):
        for ei in range(cfg.episodes_per_task):
            for attempt in range(MAX_ATTEMPTS):
                seed = _episode_seed(cfg.seed, ti, ei, attempt)
                frames, actions, proprio, success, stuck = rollout_expert(task, seed, cfg)
                if success:
                    break
                discarded += 1
                log.info("discarding failed episode task=%s seed=%d (stuck=%s)", task.name, seed, stuck)
            else:
                raise RuntimeError(f"expert failed {MAX_ATTEMPTS} attempts on task {task.name}")
            meta = {
                "task": task.name,
                "category": task.category,
                "subject_id": task.subject_id,
                "target_id": task.target_id,
                "seed": seed,
                "success": bool(success),
            }
            ep = Episode(
                frames=frames,
                instruction=task.instruction,
                actions=actions if cfg.labeled else None,
                proprio=proprio if cfg.labeled else None,
                meta=meta,
            )
            store.write_episode(ep)
    store.manifest["discarded"] = discarded
    store.flush_manifest()
    return store
