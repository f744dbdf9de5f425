"""Evaluation analyses and report emission: per-task CCA of latent vs
ground-truth actions, latent-similarity retrieval, world-model size sweeps,
and CSV/markdown/plot reports."""
from __future__ import annotations

import csv
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from PIL import Image

from . import autodiff as ad
from .cca import cca
from .envsim import TaskSpec
from .policy import Policy
from .store import EpisodeStore, UnlabeledStoreError

log = logging.getLogger(__name__)

CCA_TASK_COLUMNS = ("put", "move", "remove", "take")
MIN_CCA_SAMPLES = 15


# -- latent features ---------------------------------------------------------------


def latent_actions_for_store(policy: Policy, store: EpisodeStore, flatten_chunk: bool = False,
                             batch: int = 64):
    """Latent chunks for every (episode, t) with t < len-1.

    Returns (Z, categories, episode_index, ts): Z rows are the first latent
    action per step (7-dim) or the flattened chunk when flatten_chunk is set.
    """
    if policy.stage != "pretrain":
        raise ValueError("latent features require a pretrain-stage (latent head) policy")
    rows, cats, eps, ts = [], [], [], []
    frames_buf, instr_buf = [], []

    def flush():
        if not frames_buf:
            return
        x = np.stack(frames_buf).astype(np.float32) / 255.0
        with ad.no_grad():
            chunk = policy.forward_latent(x, list(instr_buf))
        c = chunk.data
        rows.append(c.reshape(c.shape[0], -1) if flatten_chunk else c[:, 0, :])
        frames_buf.clear()
        instr_buf.clear()

    for ei, eid in enumerate(store.episode_ids):
        frames = store.read_frames(eid)
        instr = store.read_instruction(eid)
        meta = store.read_meta(eid)
        for t in range(len(frames) - 1):
            frames_buf.append(frames[t])
            instr_buf.append(instr)
            cats.append(meta.get("category", "unknown"))
            eps.append(ei)
            ts.append(t)
            if len(frames_buf) >= batch:
                flush()
    flush()
    Z = np.concatenate(rows, axis=0) if rows else np.zeros((0, 7))
    return Z, np.asarray(cats), np.asarray(eps), np.asarray(ts)


def ground_truth_actions_for_store(store: EpisodeStore) -> np.ndarray:
    if not store.labeled:
        raise UnlabeledStoreError("ground-truth actions require a labeled store")
    rows = [store.read_actions(eid) for eid in store.episode_ids]
    return np.concatenate(rows, axis=0)


def cca_by_task(policy: Policy, store: EpisodeStore, ridge: float = 1e-6,
                flatten_chunk: bool = False) -> dict[str, float]:
    """First canonical coefficient between latent and expert actions per task
    category. Categories with too few samples are skipped with a warning."""
    Z, cats, _, _ = latent_actions_for_store(policy, store, flatten_chunk=flatten_chunk)
    Y = ground_truth_actions_for_store(store)
    if Z.shape[0] != Y.shape[0]:
        raise ValueError(f"latent/action row mismatch: {Z.shape[0]} vs {Y.shape[0]}")
    out: dict[str, float] = {}
    for cat in sorted(set(cats)):
        idx = cats == cat
        n = int(idx.sum())
        if n < MIN_CCA_SAMPLES:
            log.warning("category %s has only %d samples; skipping CCA", cat, n)
            continue
        res = cca(Z[idx], Y[idx], ridge=ridge)
        out[cat] = float(res.correlations[0])
    return out


def cca_table_rows(by_method: dict[str, dict[str, float]]) -> list[dict]:
    """Long-format rows (method, task, value) covering the four table columns."""
    rows = []
    for method, vals in by_method.items():
        for task in CCA_TASK_COLUMNS:
            rows.append({"method": method, "task": task, "value": vals.get(task)})
    return rows


def write_cca_csv(path, by_method: dict[str, dict[str, float]]) -> None:
    """CSV with one row per method and the four task columns."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", *CCA_TASK_COLUMNS])
        for method, vals in by_method.items():
            w.writerow([method] + [_fmt(vals.get(c)) for c in CCA_TASK_COLUMNS])


def cca_markdown(by_method: dict[str, dict[str, float]]) -> str:
    lines = ["| method | " + " | ".join(CCA_TASK_COLUMNS) + " |",
             "| --- |" + " --- |" * len(CCA_TASK_COLUMNS)]
    for method, vals in by_method.items():
        cells = [_fmt(vals.get(c)) for c in CCA_TASK_COLUMNS]
        lines.append(f"| {method} | " + " | ".join(cells) + " |")
    return "\n".join(lines)


def _fmt(v) -> str:
    return "—" if v is None else f"{v:.4f}"


# -- latent-similarity retrieval ------------------------------------------------------


def nearest_latent_pairs(policy: Policy, store: EpisodeStore, top_k: int = 8,
                         out_dir=None) -> list[dict]:
    """Top cross-episode frame pairs by cosine similarity of flattened latent
    chunks; optionally writes a side-by-side contact sheet per pair."""
    if len(store) < 2:
        raise ValueError("retrieval needs at least two episodes")
    Z, _, eps, ts = latent_actions_for_store(policy, store, flatten_chunk=True)
    norms = np.linalg.norm(Z, axis=1)
    norms[norms == 0] = 1.0
    U = Z / norms[:, None]
    n = U.shape[0]
    best: list[tuple[float, int, int]] = []
    block = 512
    for i0 in range(0, n, block):
        sims = U[i0 : i0 + block] @ U.T
        for i in range(sims.shape[0]):
            gi = i0 + i
            sims_i = sims[i]
            sims_i[eps == eps[gi]] = -2.0  # cross-episode only; excludes self
            sims_i[:gi] = -2.0  # count each unordered pair once
            j = int(np.argmax(sims_i))
            if sims_i[j] > -2.0:
                best.append((float(sims_i[j]), gi, j))
    best.sort(reverse=True)
    pairs = []
    for rank, (sim, i, j) in enumerate(best[:top_k]):
        ida, idb = store.episode_ids[eps[i]], store.episode_ids[eps[j]]
        rec = {"rank": rank, "similarity": sim,
               "episode_a": ida, "t_a": int(ts[i]), "episode_b": idb, "t_b": int(ts[j])}
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            fa = store.read_frames(ida)[ts[i]]
            fb = store.read_frames(idb)[ts[j]]
            sheet = np.concatenate([fa, np.full((fa.shape[0], 2, 3), 255, np.uint8), fb], axis=1)
            p = out_dir / f"pair_{rank:02d}.png"
            Image.fromarray(sheet).save(p)
            rec["image"] = str(p)
        pairs.append(rec)
    return pairs


# -- results.csv + report rendering ----------------------------------------------------

RESULTS_COLUMNS = ("experiment", "metric", "task", "seed", "value")


def write_results_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=RESULTS_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in RESULTS_COLUMNS})


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [dict(r) for r in csv.DictReader(f)]


def render_report_md(rows: list[dict]) -> str:
    """Deterministic markdown rendering of long-format result rows."""
    lines = ["# Results", ""]
    experiments = sorted({r["experiment"] for r in rows})
    for exp in experiments:
        lines.append(f"## {exp}")
        lines.append("")
        lines.append("| metric | task | seed | value |")
        lines.append("| --- | --- | --- | --- |")
        sub = [r for r in rows if r["experiment"] == exp]
        sub.sort(key=lambda r: (r["metric"], r["task"], str(r["seed"])))
        for r in sub:
            val = r["value"]
            val = "—" if val in ("", None) else val
            lines.append(f"| {r['metric']} | {r['task'] or '—'} | {r['seed']} | {val} |")
        lines.append("")
    return "\n".join(lines)


def emit_report(results_dir, out_dir=None) -> dict:
    """Render report.md and plots from a results.csv directory."""
    results_dir = Path(results_dir)
    out_dir = Path(out_dir) if out_dir else results_dir
    csv_path = results_dir / "results.csv"
    if not csv_path.exists():
        raise FileNotFoundError(f"{results_dir} has no results.csv")
    rows = read_results_csv(csv_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    md = render_report_md(rows)
    (out_dir / "report.md").write_text(md, encoding="utf-8")
    plots_dir = out_dir / "plots"
    plots_dir.mkdir(exist_ok=True)
    emitted = {"report": str(out_dir / "report.md"), "plots": []}

    sr_rows = [r for r in rows if r["metric"] == "success_rate" and r["experiment"] == "e1"]
    if sr_rows:
        p = plots_dir / "e1_success_by_strategy.png"
        _bar_plot_by_task(sr_rows, "pretraining strategy", p)
        emitted["plots"].append(str(p))
    sweep_rows = [r for r in rows if r["experiment"] == "wm_sweep" and r["metric"] == "success_rate"]
    if sweep_rows:
        p = plots_dir / "wm_size_sweep.png"
        _sweep_plot(sweep_rows, p)
        emitted["plots"].append(str(p))
    return emitted


def _bar_plot_by_task(rows: list[dict], xlabel: str, path) -> None:
    groups: dict[str, list[float]] = {}
    for r in rows:
        groups.setdefault(r["task"], []).append(float(r["value"]))
    names = sorted(groups)
    means = [float(np.mean(groups[k])) for k in names]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(names, means, color="#4878b0")
    for i, (k, m) in enumerate(zip(names, means)):
        for v in groups[k]:
            ax.plot(i, v, "k.", ms=4)
    ax.set_ylabel("success rate (%)")
    ax.set_xlabel(xlabel)
    ax.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _sweep_plot(rows: list[dict], path) -> None:
    presets: dict[str, list[float]] = {}
    for r in rows:
        presets.setdefault(r["task"], []).append(float(r["value"]))
    names = [n for n in ("small", "medium", "large") if n in presets] or sorted(presets)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = np.arange(len(names))
    means = [float(np.mean(presets[k])) for k in names]
    for i, k in enumerate(names):
        ax.plot([i] * len(presets[k]), presets[k], "k.", ms=5)
    ax.plot(xs, means, "o-", color="#b04848")
    ax.set_xticks(xs)
    ax.set_xticklabels(names)
    ax.set_xlabel("world-model preset")
    ax.set_ylabel("success rate (%)")
    ax.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# -- world-model size sweep --------------------------------------------------------------


def wm_size_sweep(cfg, presets: list[str], seeds: list[int], pretrain_store: EpisodeStore,
                  finetune_store: EpisodeStore, eval_tasks: list[TaskSpec], out_dir) -> list[dict]:
    """Pretrain -> finetune -> evaluate for each (preset, seed); returns
    long-format success-rate rows and writes results.csv + plot."""
    from .evaluate import actor_for_policy, evaluate_success_rate
    from .training import finetune, load_policy, pretrain
    from .worldmodel import wm_config

    if len(presets) < 2 or len(seeds) < 2:
        raise ValueError("sweep needs at least two presets and two seeds")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for preset in presets:
        for seed in seeds:
            run_cfg = replace(cfg)
            run_cfg.worldmodel = wm_config(preset, image_hw=cfg.env.image_hw)
            run_cfg.train = replace(cfg.train, seed=seed, stage="pretrain")
            run_dir = out_dir / f"{preset}_s{seed}"
            pre = pretrain(run_cfg, pretrain_store, run_dir / "pretrain")
            ft_cfg = replace(run_cfg)
            ft_cfg.train = replace(run_cfg.train, stage="finetune_nll")
            ft = finetune(ft_cfg, finetune_store, run_dir / "finetune", head="nll",
                          init_ckpt=pre["policy"])
            policy, _ = load_policy(ft["policy"])
            report = evaluate_success_rate(
                actor_for_policy(policy), eval_tasks, trials=cfg.eval.trials,
                seed=cfg.eval.seed, image_hw=cfg.env.image_hw,
                max_steps=cfg.env.max_episode_steps, n_exec=cfg.eval.n_exec,
                distractors=cfg.env.distractors,
            )
            rows.append({"experiment": "wm_sweep", "metric": "success_rate", "task": preset,
                         "seed": seed, "value": round(report.mean_success_rate, 3),
                         "finetune_fingerprint": finetune_store.fingerprint})
    csv_rows = [{k: r[k] for k in RESULTS_COLUMNS} for r in rows]
    write_results_csv(out_dir / "results.csv", csv_rows)
    emit_report(out_dir)
    return rows
