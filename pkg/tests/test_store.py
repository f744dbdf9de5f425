"""Episode store round-trips, ingestion, dataset generation, and samplers."""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import pytest
from PIL import Image
from scipy.stats import chisquare

from lawm.datagen import DatasetConfig, generate_dataset, sample_tasks
from lawm.store import (
    Episode,
    EpisodeStore,
    FinetuneSampler,
    PretrainSampler,
    StoreError,
    UnlabeledStoreError,
    episodes_equal,
    ingest_video_dir,
)


def _episode(t=6, hw=8, labeled=True, instruction="put the red block on the white plate"):
    rng = np.random.default_rng(t)
    return Episode(
        frames=rng.integers(0, 256, size=(t, hw, hw, 3), dtype=np.uint8).astype(np.uint8),
        instruction=instruction,
        actions=rng.uniform(-1, 1, size=(t - 1, 7)) if labeled else None,
        proprio=rng.uniform(0, 1, size=(t, 7)) if labeled else None,
        meta={"task": "put:red_block:white_plate", "category": "put", "seed": 1, "success": True,
              "subject_id": "red_block", "target_id": "white_plate"},
    )


def _dir_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# -- episode IO -----------------------------------------------------------------


def test_labeled_roundtrip_bit_exact(tmp_path):
    store = EpisodeStore.create(tmp_path / "s", {"k": 1}, labeled=True)
    ep = _episode()
    eid = store.write_episode(ep)
    back = EpisodeStore.open(tmp_path / "s").read_episode(eid)
    assert episodes_equal(ep, back)
    assert back.actions.dtype == np.float64
    assert np.array_equal(back.actions, ep.actions)  # 17 digits round-trip floats exactly


def test_unlabeled_store_has_no_actions(tmp_path):
    store = EpisodeStore.create(tmp_path / "s", {}, labeled=False)
    eid = store.write_episode(_episode(labeled=False))
    back = store.read_episode(eid)
    assert not back.has_actions and back.proprio is None
    assert not (tmp_path / "s" / eid / "actions.csv").exists()


def test_length_mismatch_rejected(tmp_path):
    store = EpisodeStore.create(tmp_path / "s", {}, labeled=True)
    ep = _episode()
    ep.actions = np.zeros((len(ep), 7))  # must be len-1
    with pytest.raises(StoreError):
        store.write_episode(ep)


def test_labeled_store_requires_labels(tmp_path):
    store = EpisodeStore.create(tmp_path / "s", {}, labeled=True)
    with pytest.raises(StoreError):
        store.write_episode(_episode(labeled=False))


def test_create_refuses_non_empty(tmp_path):
    (tmp_path / "s").mkdir()
    (tmp_path / "s" / "junk.txt").write_text("x")
    with pytest.raises(StoreError):
        EpisodeStore.create(tmp_path / "s", {}, labeled=True)


def test_splits_roundtrip_and_validation(tmp_path):
    store = EpisodeStore.create(tmp_path / "s", {}, labeled=True)
    e0 = store.write_episode(_episode())
    e1 = store.write_episode(_episode(t=7))
    store.write_splits({"pretrain": [e0], "finetune": [e1], "eval": []})
    assert store.read_splits()["pretrain"] == [e0]
    assert store.ids_for("finetune") == [e1]
    assert store.ids_for(None) == [e0, e1]
    with pytest.raises(StoreError):
        store.write_splits({"pretrain": ["ep99999"]})


# -- ingestion -------------------------------------------------------------------


def _write_clip(d: Path, n: int, size=(128, 96)):
    d.mkdir(parents=True)
    rng = np.random.default_rng(0)
    for i in range(n):
        arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
        Image.fromarray(arr).save(d / f"{i:04d}.png")


def test_ingest_basic(tmp_path):
    _write_clip(tmp_path / "clip", 40)
    ep = ingest_video_dir(tmp_path / "clip", "pushing cup left", hw=64)
    assert len(ep) == 40 and not ep.has_actions
    assert ep.instruction == "pushing cup left"


def test_ingest_single_frame_rejected(tmp_path):
    _write_clip(tmp_path / "clip", 1)
    with pytest.raises(StoreError):
        ingest_video_dir(tmp_path / "clip", "x")


def test_ingest_non_square_resized(tmp_path):
    _write_clip(tmp_path / "clip", 3, size=(128, 96))
    ep = ingest_video_dir(tmp_path / "clip", "x", hw=64)
    assert ep.frames.shape == (3, 64, 64, 3)


# -- dataset generation -----------------------------------------------------------


def test_generate_counts_and_labels(tmp_path):
    cfg = DatasetConfig(categories=("put", "move", "remove", "take", "stack"),
                        tasks_per_category=1, episodes_per_task=2, seed=0, labeled=True,
                        image_hw=16, max_episode_steps=60)
    assert len(sample_tasks(cfg)) == 5
    store = generate_dataset(cfg, tmp_path / "s")
    assert len(store) == 10  # 5 tasks x 2 episodes
    for eid in store.episode_ids:
        ep = store.read_episode(eid)
        assert ep.has_actions and ep.actions.shape[1] == 7
        assert ep.proprio.shape == (len(ep), 7)
        assert ep.meta["success"] is True


def test_generate_unlabeled_flag(tmp_path):
    cfg = DatasetConfig(categories=("put",), tasks_per_category=1, episodes_per_task=2,
                        seed=0, labeled=False, image_hw=16, max_episode_steps=60)
    store = generate_dataset(cfg, tmp_path / "s")
    for eid in store.episode_ids:
        assert store.read_actions(eid) is None


def test_generate_byte_identical(tmp_path):
    cfg = DatasetConfig(categories=("put",), tasks_per_category=1, episodes_per_task=2,
                        seed=0, labeled=True, image_hw=16, max_episode_steps=60)
    s1 = generate_dataset(cfg, tmp_path / "a")
    s2 = generate_dataset(cfg, tmp_path / "b")
    assert s1.fingerprint == s2.fingerprint
    assert _dir_digest(tmp_path / "a") == _dir_digest(tmp_path / "b")


def test_fingerprint_tracks_config(tmp_path):
    c1 = DatasetConfig(categories=("put",), episodes_per_task=1, seed=0, image_hw=16)
    c2 = DatasetConfig(categories=("put",), episodes_per_task=1, seed=1, image_hw=16)
    s1 = generate_dataset(c1, tmp_path / "a")
    s2 = generate_dataset(c2, tmp_path / "b")
    assert s1.fingerprint != s2.fingerprint


# -- samplers -----------------------------------------------------------------------


def _toy_store(tmp_path, lengths, labeled=True) -> EpisodeStore:
    store = EpisodeStore.create(tmp_path / "toy", {"lengths": lengths}, labeled=labeled)
    for t in lengths:
        store.write_episode(_episode(t=t, labeled=labeled))
    return store


def test_pretrain_window_enumeration(tmp_path):
    store = _toy_store(tmp_path, [12], labeled=False)
    s = PretrainSampler(store, n=10)
    assert s.total_windows == 2  # valid t in {0, 1}
    assert s.window(0) == (0, 0) and s.window(1) == (0, 1)


def test_pretrain_sampler_deterministic_and_actionless(tmp_path):
    store = _toy_store(tmp_path, [8, 9, 10], labeled=False)
    s = PretrainSampler(store, n=3)
    b1 = s.sample(4, np.random.default_rng(7))
    b2 = s.sample(4, np.random.default_rng(7))
    assert np.array_equal(b1.frames, b2.frames)
    assert b1.instructions == b2.instructions and b1.episode_ids == b2.episode_ids
    assert not hasattr(b1, "actions")
    assert store.counters["action_reads"] == 0
    assert b1.frames.shape == (4, 4, 8, 8, 3) and b1.frames.dtype == np.float32
    assert b1.frames.max() <= 1.0


def test_pretrain_sampler_skips_short_episodes(tmp_path):
    store = _toy_store(tmp_path, [3, 12], labeled=False)
    s = PretrainSampler(store, n=10)
    assert s.counts[0] == 0 and s.total_windows == 2


def test_pretrain_sampler_no_valid_windows(tmp_path):
    store = _toy_store(tmp_path, [3, 4], labeled=False)
    with pytest.raises(StoreError):
        PretrainSampler(store, n=10)


def test_pretrain_sampler_uniform_chisquare(tmp_path):
    # 20 valid windows, 10k draws
    store = _toy_store(tmp_path, [13, 13], labeled=False)
    s = PretrainSampler(store, n=10)
    assert s.total_windows == 6
    store2 = _toy_store(tmp_path / "w", [9, 9, 9, 9], labeled=False)
    s2 = PretrainSampler(store2, n=4)
    assert s2.total_windows == 20  # 4 episodes x (9 - 4) windows
    rng = np.random.default_rng(0)
    counts2 = np.zeros(20)
    for _ in range(2500):
        batch = s2.sample(4, rng)
        for eid, t in zip(batch.episode_ids, batch.ts):
            ep = store2.episode_ids.index(eid)
            base = int(s2.cum[ep - 1]) if ep else 0
            counts2[base + int(t)] += 1
    assert chisquare(counts2).pvalue > 0.001


def test_finetune_sampler_padding_and_mask(tmp_path):
    store = _toy_store(tmp_path, [6])  # 5 actions, t in {0..4}
    s = FinetuneSampler(store, n=10)
    rng = np.random.default_rng(0)
    seen_tail = False
    acts = store.read_actions(store.episode_ids[0])
    for _ in range(50):
        b = s.sample(2, rng)
        for i in range(2):
            t = int(b.ts[i])
            valid = min(10, 5 - t)
            assert b.mask[i, :valid].all() and not b.mask[i, valid:].any()
            np.testing.assert_allclose(b.action_chunks[i, :valid], acts[t : t + valid], rtol=1e-6)
            np.testing.assert_allclose(b.action_chunks[i, valid:],
                                       np.repeat(acts[t + valid - 1][None], 10 - valid, 0), rtol=1e-6)
            if t == 4:
                seen_tail = True
                assert b.mask[i].sum() == 1  # one true entry at the last step
    assert seen_tail


def test_finetune_sampler_rejects_unlabeled(tmp_path):
    store = _toy_store(tmp_path, [8, 8], labeled=False)
    with pytest.raises(UnlabeledStoreError):
        FinetuneSampler(store, n=4)


def test_read_actions_counts_bytes(tmp_path):
    store = _toy_store(tmp_path, [6])
    store.read_actions(store.episode_ids[0])
    assert store.counters["action_reads"] == 1
    assert store.counters["action_bytes"] > 0
