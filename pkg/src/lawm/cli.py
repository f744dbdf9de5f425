"""Command-line entry point.

Subcommands wire configs to the pipeline: gen-data, pretrain, finetune, eval,
cca, sweep, report, config-ref. Exit codes: 0 success, 2 usage/config error,
3 runtime/numeric failure. Paths are resolved against --workdir (default:
current directory; the LAWM_WORKDIR environment variable overrides that
default).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, config_reference, default_config, load_config
from .datagen import generate_dataset
from .envsim import CATEGORIES, COLORS, ConfigurationError, KINDS, TaskSpec
from .policy import StageError
from .store import EpisodeStore, StoreError, UnlabeledStoreError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lawm", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--workdir", default=None,
                    help="base directory for relative paths (default: $LAWM_WORKDIR or CWD)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate an episode dataset with the scripted expert")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--unlabeled", action="store_true", help="omit actions/proprioception")
    p.add_argument("--force", action="store_true", help="overwrite an existing non-empty directory")
    p.add_argument("--seed", type=int, default=None, help="override [data] seed")

    p = sub.add_parser("pretrain", help="stage 1: joint latent-action + world-model training")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override [train] seed")

    p = sub.add_parser("finetune", help="stage 2: supervised action finetuning")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--init", default="none", help="pretrained policy checkpoint, or 'none' for scratch")
    p.add_argument("--head", choices=("nll", "diffusion"), default="nll")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override [train] seed")

    p = sub.add_parser("eval", help="success-rate rollouts of a finetuned policy")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tasks", required=True, help="comma list of category:subject:target names")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-exec", type=int, default=1)
    p.add_argument("--out", default=None, help="directory for results.csv/report.md")

    p = sub.add_parser("cca", help="per-task CCA between latent and expert actions")
    p.add_argument("--ckpt", required=True, help="pretrain-stage policy checkpoint")
    p.add_argument("--data", required=True, help="labeled episode store")
    p.add_argument("--out", default=None)
    p.add_argument("--flatten-chunk", action="store_true",
                   help="use the flattened chunk instead of the first latent action")

    p = sub.add_parser("sweep", help="world-model size sweep: pretrain/finetune/eval per preset")
    p.add_argument("--config", required=True)
    p.add_argument("--pretrain-data", required=True)
    p.add_argument("--finetune-data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="render report.md + plots from a results.csv directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", default=None)

    sub.add_parser("config-ref", help="print the config reference (all keys and defaults)")
    return ap


def _resolve(workdir: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    path = Path(p)
    return path if path.is_absolute() else workdir / path


def _load_cfg(path: Path) -> RunConfig:
    return load_config(path)


def _parse_tasks(raw: str) -> list[TaskSpec]:
    tasks = []
    for name in [t for t in raw.split(",") if t.strip()]:
        try:
            tasks.append(TaskSpec.from_name(name.strip()))
        except ConfigurationError as e:
            valid = f"categories: {', '.join(CATEGORIES)}; ids are <color>_<kind> with colors {', '.join(COLORS)} and kinds {', '.join(KINDS)}"
            raise ConfigurationError(f"invalid task {name!r} ({e}); {valid}") from e
    if not tasks:
        raise ConfigurationError("no tasks given")
    return tasks


def _cmd_gen_data(args, workdir: Path) -> int:
    cfg = _load_cfg(_resolve(workdir, args.config))
    if args.seed is not None:
        cfg.data.seed = args.seed
    out = _resolve(workdir, args.out)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            print(f"error: {out} exists and is not empty (use --force)", file=sys.stderr)
            return EXIT_USAGE
        import shutil

        shutil.rmtree(out)
    labeled = cfg.data.labeled and not args.unlabeled
    store = generate_dataset(cfg.dataset_config(labeled=labeled), out)
    print(f"store: {out}")
    print(f"episodes: {len(store)}")
    print(f"fingerprint: {store.fingerprint}")
    return EXIT_OK


def _cmd_pretrain(args, workdir: Path) -> int:
    from .training import pretrain

    cfg = _load_cfg(_resolve(workdir, args.config))
    if args.seed is not None:
        cfg.train.seed = args.seed
    if cfg.train.stage != "pretrain":
        print(f"error: [train] stage={cfg.train.stage!r} is a finetuning stage; "
              "pretrain requires stage=pretrain", file=sys.stderr)
        return EXIT_USAGE
    store = EpisodeStore.open(_resolve(workdir, args.data))
    paths = pretrain(cfg, store, _resolve(workdir, args.out))
    print(json.dumps(paths, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_finetune(args, workdir: Path) -> int:
    from .training import finetune

    cfg = _load_cfg(_resolve(workdir, args.config))
    if args.seed is not None:
        cfg.train.seed = args.seed
    cfg.apply_head_default(args.head)
    store = EpisodeStore.open(_resolve(workdir, args.data))
    init = None if args.init == "none" else str(_resolve(workdir, args.init))
    res = finetune(cfg, store, _resolve(workdir, args.out), head=args.head, init_ckpt=init)
    print(json.dumps({k: res[k] for k in ("policy", "log", "init")}, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_eval(args, workdir: Path) -> int:
    from .analysis import write_results_csv
    from .evaluate import actor_for_policy, evaluate_success_rate
    from .training import load_policy

    tasks = _parse_tasks(args.tasks)
    policy, header = load_policy(_resolve(workdir, args.ckpt))
    actor = actor_for_policy(policy)
    report = evaluate_success_rate(
        actor, tasks, trials=args.trials, seed=args.seed,
        image_hw=policy.cfg.image_hw, n_exec=args.n_exec,
    )
    print(report.table())
    if args.out:
        out = _resolve(workdir, args.out)
        out.mkdir(parents=True, exist_ok=True)
        rows = [
            {"experiment": "eval", "metric": "success_rate", "task": r.task,
             "seed": args.seed, "value": round(r.success_rate, 3)}
            for r in report.results
        ]
        write_results_csv(out / "results.csv", rows)
        (out / "report.md").write_text(report.table() + "\n", encoding="utf-8")
        print(f"wrote {out}/results.csv")
    return EXIT_OK


def _cmd_cca(args, workdir: Path) -> int:
    from .analysis import cca_by_task, cca_markdown, write_cca_csv
    from .training import load_policy

    policy, _ = load_policy(_resolve(workdir, args.ckpt))
    store = EpisodeStore.open(_resolve(workdir, args.data))
    table = cca_by_task(policy, store, flatten_chunk=args.flatten_chunk)
    by_method = {"latent_pretrained": table}
    print(cca_markdown(by_method))
    if args.out:
        out = _resolve(workdir, args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_cca_csv(out / "cca_by_task.csv", by_method)
        (out / "cca_by_task.md").write_text(cca_markdown(by_method) + "\n", encoding="utf-8")
        print(f"wrote {out}/cca_by_task.csv")
    return EXIT_OK


def _cmd_sweep(args, workdir: Path) -> int:
    from .analysis import wm_size_sweep

    cfg = _load_cfg(_resolve(workdir, args.config))
    pre_store = EpisodeStore.open(_resolve(workdir, args.pretrain_data))
    ft_store = EpisodeStore.open(_resolve(workdir, args.finetune_data))
    tasks = [TaskSpec.from_name(n) for n in cfg.eval.tasks] if cfg.eval.tasks else [
        TaskSpec.from_name(n) for n in ft_store.manifest["config"].get("tasks", [])
    ]
    if not tasks:
        print("error: no eval tasks in [eval] tasks or the finetune store manifest", file=sys.stderr)
        return EXIT_USAGE
    rows = wm_size_sweep(cfg, list(cfg.eval.sweep_presets), [int(s) for s in cfg.eval.sweep_seeds],
                         pre_store, ft_store, tasks, _resolve(workdir, args.out))
    print(f"{len(rows)} sweep rows written to {args.out}/results.csv")
    return EXIT_OK


def _cmd_report(args, workdir: Path) -> int:
    from .analysis import emit_report

    in_dir = _resolve(workdir, args.in_dir)
    try:
        emitted = emit_report(in_dir, _resolve(workdir, args.out))
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(emitted, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    workdir = Path(args.workdir or os.environ.get("LAWM_WORKDIR") or os.getcwd())
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args, workdir)
        if args.command == "pretrain":
            return _cmd_pretrain(args, workdir)
        if args.command == "finetune":
            return _cmd_finetune(args, workdir)
        if args.command == "eval":
            return _cmd_eval(args, workdir)
        if args.command == "cca":
            return _cmd_cca(args, workdir)
        if args.command == "sweep":
            return _cmd_sweep(args, workdir)
        if args.command == "report":
            return _cmd_report(args, workdir)
        if args.command == "config-ref":
            print(config_reference())
            return EXIT_OK
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, ConfigurationError, StoreError, StageError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # numeric/runtime failures
        from .training import TrainingDiverged

        if isinstance(e, TrainingDiverged):
            print(f"error: {e}", file=sys.stderr)
            return EXIT_RUNTIME
        raise


if __name__ == "__main__":
    sys.exit(main())
