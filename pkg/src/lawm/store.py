"""Episode persistence, external video ingestion, and batch samplers.

Store layout (one directory per episode)::

    <root>/manifest.json            episode ids + dataset fingerprint
    <root>/splits.json              optional {split name: [episode ids]}
    <root>/<ep_id>/frames/%05d.png  8-bit RGB frames
    <root>/<ep_id>/instruction.txt
    <root>/<ep_id>/actions.csv      (T-1) x 7, full decimal precision; labeled only
    <root>/<ep_id>/proprio.csv      T x 7; labeled only
    <root>/<ep_id>/meta.json

Round-trips are lossless: PNG is lossless and CSV floats carry 17
significant digits.
"""
from __future__ import annotations

import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SPLITS = "splits.json"


class StoreError(RuntimeError):
    pass


class UnlabeledStoreError(StoreError):
    """Raised when ground-truth actions are required but absent."""


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def fingerprint_of(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


@dataclass
class Episode:
    frames: np.ndarray  # (T, H, W, 3) uint8
    instruction: str
    actions: Optional[np.ndarray] = None  # (T-1, 7) float64
    proprio: Optional[np.ndarray] = None  # (T, 7) float64
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.frames.ndim != 4 or self.frames.shape[3] != 3 or self.frames.dtype != np.uint8:
            raise StoreError("frames must be (T, H, W, 3) uint8")
        t = self.frames.shape[0]
        if t == 0:
            raise StoreError("episode must contain at least one frame")
        if self.actions is not None and self.actions.shape != (t - 1, 7):
            raise StoreError(f"actions must be ({t - 1}, 7), got {self.actions.shape}")
        if self.proprio is not None and self.proprio.shape != (t, 7):
            raise StoreError(f"proprio must be ({t}, 7), got {self.proprio.shape}")

    @property
    def has_actions(self) -> bool:
        return self.actions is not None

    def __len__(self) -> int:
        return int(self.frames.shape[0])


def episodes_equal(a: Episode, b: Episode) -> bool:
    if not np.array_equal(a.frames, b.frames) or a.instruction != b.instruction:
        return False
    for xa, xb in ((a.actions, b.actions), (a.proprio, b.proprio)):
        if (xa is None) != (xb is None):
            return False
        if xa is not None and not np.array_equal(xa, xb):
            return False
    return a.meta == b.meta


class EpisodeStore:
    """Read/write access to an on-disk episode dataset."""

    def __init__(self, root: Path, manifest: dict):
        self.root = Path(root)
        self.manifest = manifest
        # instrumentation: lets tests prove pretraining never touches actions
        self.counters = {"action_reads": 0, "action_bytes": 0}

    # -- lifecycle -------------------------------------------------------

    @staticmethod
    def create(root, config: dict, labeled: bool) -> "EpisodeStore":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        if any(root.iterdir()):
            raise StoreError(f"refusing to create store in non-empty directory {root}")
        manifest = {
            "format_version": 1,
            "labeled": bool(labeled),
            "config": config,
            "fingerprint": fingerprint_of(config),
            "episodes": [],
            "discarded": 0,
        }
        store = EpisodeStore(root, manifest)
        store.flush_manifest()
        return store

    @staticmethod
    def open(root) -> "EpisodeStore":
        root = Path(root)
        mpath = root / MANIFEST
        if not mpath.exists():
            raise StoreError(f"{root} has no {MANIFEST}")
        return EpisodeStore(root, json.loads(mpath.read_text()))

    def flush_manifest(self) -> None:
        _dump_json(self.root / MANIFEST, self.manifest)

    @property
    def labeled(self) -> bool:
        return bool(self.manifest["labeled"])

    @property
    def fingerprint(self) -> str:
        return self.manifest["fingerprint"]

    @property
    def episode_ids(self) -> list[str]:
        return list(self.manifest["episodes"])

    def __len__(self) -> int:
        return len(self.manifest["episodes"])

    # -- episode IO ------------------------------------------------------

    def write_episode(self, ep: Episode, episode_id: str | None = None) -> str:
        ep.validate()
        if self.labeled and (ep.actions is None or ep.proprio is None):
            raise StoreError("labeled store requires actions and proprioception")
        if not self.labeled and ep.actions is not None:
            raise StoreError("unlabeled store must not contain actions")
        eid = episode_id or f"ep{len(self.manifest['episodes']):05d}"
        epdir = self.root / eid
        (epdir / "frames").mkdir(parents=True)
        for i, frame in enumerate(ep.frames):
            Image.fromarray(frame, mode="RGB").save(epdir / "frames" / f"{i:05d}.png", optimize=False)
        (epdir / "instruction.txt").write_text(ep.instruction, encoding="utf-8")
        if ep.actions is not None:
            np.savetxt(epdir / "actions.csv", ep.actions, fmt="%.17g", delimiter=",")
        if ep.proprio is not None:
            np.savetxt(epdir / "proprio.csv", ep.proprio, fmt="%.17g", delimiter=",")
        meta = dict(ep.meta)
        meta["length"] = len(ep)
        _dump_json(epdir / "meta.json", meta)
        self.manifest["episodes"].append(eid)
        self.flush_manifest()
        return eid

    def _frames_dir(self, episode_id: str) -> Path:
        d = self.root / episode_id / "frames"
        if not d.is_dir():
            raise StoreError(f"episode {episode_id} has no frames directory")
        return d

    def read_frames(self, episode_id: str) -> np.ndarray:
        d = self._frames_dir(episode_id)
        files = sorted(d.glob("*.png"))
        if not files:
            raise StoreError(f"episode {episode_id} has no frames")
        return np.stack([np.asarray(Image.open(f).convert("RGB"), dtype=np.uint8) for f in files])

    def read_instruction(self, episode_id: str) -> str:
        return (self.root / episode_id / "instruction.txt").read_text(encoding="utf-8")

    def read_meta(self, episode_id: str) -> dict:
        return json.loads((self.root / episode_id / "meta.json").read_text())

    def read_actions(self, episode_id: str) -> Optional[np.ndarray]:
        p = self.root / episode_id / "actions.csv"
        if not p.exists():
            return None
        raw = p.read_bytes()
        self.counters["action_reads"] += 1
        self.counters["action_bytes"] += len(raw)
        return np.loadtxt(io.StringIO(raw.decode()), delimiter=",", ndmin=2)

    def read_proprio(self, episode_id: str) -> Optional[np.ndarray]:
        p = self.root / episode_id / "proprio.csv"
        if not p.exists():
            return None
        return np.loadtxt(p, delimiter=",", ndmin=2)

    def read_episode(self, episode_id: str) -> Episode:
        if episode_id not in self.manifest["episodes"]:
            raise StoreError(f"episode {episode_id} not in manifest")
        ep = Episode(
            frames=self.read_frames(episode_id),
            instruction=self.read_instruction(episode_id),
            actions=self.read_actions(episode_id),
            proprio=self.read_proprio(episode_id),
            meta={k: v for k, v in self.read_meta(episode_id).items() if k != "length"},
        )
        ep.validate()
        return ep

    # -- splits ------------------------------------------------------------

    def write_splits(self, splits: dict[str, list[str]]) -> None:
        known = set(self.manifest["episodes"])
        for name, ids in splits.items():
            missing = [i for i in ids if i not in known]
            if missing:
                raise StoreError(f"split {name!r} references unknown episodes {missing[:3]}")
        _dump_json(self.root / SPLITS, splits)

    def read_splits(self) -> dict[str, list[str]]:
        p = self.root / SPLITS
        if not p.exists():
            raise StoreError(f"{self.root} has no {SPLITS}")
        return json.loads(p.read_text())

    def ids_for(self, split: str | None) -> list[str]:
        if split is None:
            return self.episode_ids
        return list(self.read_splits()[split])


# -- external video ingestion ---------------------------------------------------

_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


def ingest_video_dir(directory, instruction: str, hw: int = 64) -> Episode:
    """Turn a directory of ordered image files into an unlabeled Episode.

    Each frame is center-cropped to a square, then bilinearly resized to
    (hw, hw). No action or proprioception data is ever attached.
    """
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in _IMAGE_EXTS)
    if len(files) < 2:
        raise StoreError(f"need at least 2 frames to form a window, found {len(files)} in {directory}")
    frames = []
    for f in files:
        img = Image.open(f).convert("RGB")
        w, h = img.size
        side = min(w, h)
        left = (w - side) // 2
        top = (h - side) // 2
        img = img.crop((left, top, left + side, top + side)).resize((hw, hw), Image.BILINEAR)
        frames.append(np.asarray(img, dtype=np.uint8))
    return Episode(frames=np.stack(frames), instruction=instruction, meta={"source": directory.name})


# -- batch samplers ---------------------------------------------------------------


@dataclass
class PretrainBatch:
    frames: np.ndarray  # (B, n+1, H, W, 3) float32 in [0, 1]
    instructions: list[str]
    episode_ids: list[str]
    ts: np.ndarray


@dataclass
class FinetuneBatch:
    obs_frames: np.ndarray  # (B, H, W, 3) float32 in [0, 1]
    instructions: list[str]
    proprio: np.ndarray  # (B, 7) float32
    action_chunks: np.ndarray  # (B, n, 7) float32
    mask: np.ndarray  # (B, n) bool, False on padded tail steps
    episode_ids: list[str]
    ts: np.ndarray


class _CachedEpisodes:
    def __init__(self, store: EpisodeStore, split: str | None, with_labels: bool):
        self.store = store
        self.ids = store.ids_for(split)
        self.frames = [store.read_frames(i) for i in self.ids]
        self.instructions = [store.read_instruction(i) for i in self.ids]
        if with_labels:
            self.actions = []
            self.proprio = []
            for i in self.ids:
                a = store.read_actions(i)
                if a is None:
                    raise UnlabeledStoreError(f"episode {i} has no actions; finetuning needs a labeled store")
                self.actions.append(a)
                self.proprio.append(store.read_proprio(i))


class PretrainSampler:
    """Uniform sampler over all (episode, t) windows of n+1 frames."""

    def __init__(self, store: EpisodeStore, n: int):
        if n < 1:
            raise ValueError("chunk size must be positive")
        self.n = n
        self.cache = _CachedEpisodes(store, None, with_labels=False)
        counts = []
        skipped = 0
        for f in self.cache.frames:
            c = len(f) - (n + 1) + 1
            if c <= 0:
                skipped += 1
            counts.append(max(c, 0))
        if skipped:
            log.warning("skipping %d episodes shorter than %d frames", skipped, n + 1)
        self.counts = np.asarray(counts)
        self.cum = np.cumsum(self.counts)
        if self.total_windows == 0:
            raise StoreError(f"no episode has the {n + 1} frames needed for a window")

    @property
    def total_windows(self) -> int:
        return int(self.cum[-1]) if len(self.cum) else 0

    def window(self, flat_index: int) -> tuple[int, int]:
        ep = int(np.searchsorted(self.cum, flat_index, side="right"))
        t = int(flat_index - (self.cum[ep - 1] if ep else 0))
        return ep, t

    def sample(self, batch: int, rng: np.random.Generator) -> PretrainBatch:
        flat = rng.integers(0, self.total_windows, size=batch)
        frames = np.empty(
            (batch, self.n + 1) + self.cache.frames[0].shape[1:], dtype=np.float32
        )
        instructions, eids, ts = [], [], np.empty(batch, dtype=np.int64)
        for b, fi in enumerate(flat):
            ep, t = self.window(int(fi))
            frames[b] = self.cache.frames[ep][t : t + self.n + 1].astype(np.float32) / 255.0
            instructions.append(self.cache.instructions[ep])
            eids.append(self.cache.ids[ep])
            ts[b] = t
        return PretrainBatch(frames, instructions, eids, ts)


class FinetuneSampler:
    """Uniform sampler over (episode, t) pairs with ground-truth chunks."""

    def __init__(self, store: EpisodeStore, n: int):
        if not store.labeled:
            raise UnlabeledStoreError("finetuning requires a labeled store")
        self.n = n
        self.cache = _CachedEpisodes(store, None, with_labels=True)
        self.counts = np.asarray([a.shape[0] for a in self.cache.actions])
        self.cum = np.cumsum(self.counts)

    def sample(self, batch: int, rng: np.random.Generator) -> FinetuneBatch:
        total = int(self.cum[-1])
        flat = rng.integers(0, total, size=batch)
        hw = self.cache.frames[0].shape[1:]
        obs = np.empty((batch,) + hw, dtype=np.float32)
        proprio = np.empty((batch, 7), dtype=np.float32)
        chunks = np.empty((batch, self.n, 7), dtype=np.float32)
        mask = np.zeros((batch, self.n), dtype=bool)
        instructions, eids, ts = [], [], np.empty(batch, dtype=np.int64)
        for b, fi in enumerate(flat):
            ep = int(np.searchsorted(self.cum, fi, side="right"))
            t = int(fi - (self.cum[ep - 1] if ep else 0))
            obs[b] = self.cache.frames[ep][t].astype(np.float32) / 255.0
            proprio[b] = self.cache.proprio[ep][t]
            acts = self.cache.actions[ep]
            valid = min(self.n, acts.shape[0] - t)
            chunks[b, :valid] = acts[t : t + valid]
            chunks[b, valid:] = acts[t + valid - 1]  # repeat last action on the tail
            mask[b, :valid] = True
            instructions.append(self.cache.instructions[ep])
            eids.append(self.cache.ids[ep])
            ts[b] = t
        return FinetuneBatch(obs, instructions, proprio, chunks, mask, eids, ts)
