"""Run configuration: INI-style files with [env] [data] [policy] [worldmodel]
[train] [eval] sections. Every key mirrors a config dataclass field; unknown
keys or sections fail fast."""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .datagen import DatasetConfig
from .policy import PolicyConfig
from .worldmodel import WMConfig, wm_config, PRESETS


class ConfigError(ValueError):
    pass


@dataclass
class EnvConfig:
    image_hw: int = 64
    max_episode_steps: int = 100
    distractors: int = 2
    success_radius: float = 0.10


@dataclass
class TrainSettings:
    stage: str = "pretrain"
    steps: int = 2000
    batch: int = 4
    lr: float = 3e-4
    clip_norm: float = 100.0
    seed: int = 0
    eval_every: int = 500
    log_every: int = 10
    diffusion_k: int = 50
    noise_schedule: str = "cosine"
    noising: str = "ddpm"

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune_nll", "finetune_diffusion"):
            raise ConfigError(f"unknown train stage {self.stage!r}")
        if min(self.steps, self.batch, self.eval_every, self.log_every) <= 0:
            raise ConfigError("steps, batch, eval_every, log_every must be positive")


@dataclass
class EvalSettings:
    trials: int = 10
    n_exec: int = 1
    seed: int = 0
    tasks: tuple = ()
    sweep_presets: tuple = ("small", "medium")
    sweep_seeds: tuple = (0, 1)


@dataclass
class DataSettings:
    categories: tuple = ("put", "move", "remove", "take")
    tasks_per_category: int = 1
    episodes_per_task: int = 50
    seed: int = 0
    labeled: bool = True


DIFFUSION_DEFAULT_CHUNK = 16


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    data: DataSettings = field(default_factory=DataSettings)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    worldmodel: WMConfig = field(default_factory=lambda: wm_config("small"))
    train: TrainSettings = field(default_factory=TrainSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    # keys explicitly present in the config file, per section
    explicit: dict = field(default_factory=dict)

    def apply_head_default(self, head: str) -> None:
        """Diffusion runs default to a 16-step chunk unless n was set explicitly."""
        if head == "diffusion" and "n" not in self.explicit.get("policy", set()):
            self.policy.n = DIFFUSION_DEFAULT_CHUNK

    def dataset_config(self, labeled: bool | None = None) -> DatasetConfig:
        return DatasetConfig(
            categories=tuple(self.data.categories),
            tasks_per_category=self.data.tasks_per_category,
            episodes_per_task=self.data.episodes_per_task,
            seed=self.data.seed,
            labeled=self.data.labeled if labeled is None else labeled,
            image_hw=self.env.image_hw,
            max_episode_steps=self.env.max_episode_steps,
            distractors=self.env.distractors,
            success_radius=self.env.success_radius,
        )


_SECTIONS = {
    "env": EnvConfig,
    "data": DataSettings,
    "policy": PolicyConfig,
    "worldmodel": WMConfig,
    "train": TrainSettings,
    "eval": EvalSettings,
}
# derived by the loader, not settable from files
_BLOCKED = {
    "policy": ("image_hw", "d_action"),
    "worldmodel": ("image_hw", "action_dim"),
}


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if default and isinstance(default[0], int):
            return tuple(int(s) for s in items)
        return tuple(items)
    return raw


def load_config(path) -> RunConfig:
    """Parse an INI run config; unknown sections/keys are errors."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive
    cp.read(path)
    kwargs = {}
    explicit: dict[str, set] = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
    for name, cls in _SECTIONS.items():
        valid = {f.name: f for f in fields(cls)}
        values = {}
        if cp.has_section(name):
            explicit[name] = set(cp.options(name))
            for key, raw in cp.items(name):
                if key in _BLOCKED.get(name, ()):
                    raise ConfigError(f"[{name}] {key} is derived and cannot be set directly")
                if key not in valid:
                    raise ConfigError(f"unknown config key [{name}] {key}")
                default = _field_default(valid[key])
                try:
                    values[key] = _parse_value(raw, default)
                except (ValueError, TypeError) as e:
                    raise ConfigError(f"bad value for [{name}] {key}: {e}") from e
        if name == "worldmodel":
            preset = values.pop("preset", "small")
            try:
                kwargs[name] = wm_config(preset, **values)
            except (ValueError, TypeError) as e:
                raise ConfigError(str(e)) from e
        else:
            try:
                kwargs[name] = cls(**values)
            except (ValueError, TypeError) as e:
                raise ConfigError(str(e)) from e
    cfg = RunConfig(**kwargs, explicit=explicit)
    # env owns the frame geometry
    cfg.policy.image_hw = cfg.env.image_hw
    cfg.worldmodel.image_hw = cfg.env.image_hw
    return cfg


def _field_default(f: dataclasses.Field):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()  # type: ignore[misc]


def default_config() -> RunConfig:
    return RunConfig()


def config_reference() -> str:
    """Markdown reference of every section, key, and default."""
    lines = ["# Run configuration reference", ""]
    for name, cls in _SECTIONS.items():
        lines.append(f"## [{name}]")
        lines.append("")
        lines.append("| key | default | type |")
        lines.append("| --- | --- | --- |")
        for f in fields(cls):
            if f.name in _BLOCKED.get(name, ()):
                continue
            d = _field_default(f)
            if isinstance(d, tuple):
                shown = ",".join(str(x) for x in d)
            else:
                shown = str(d)
            lines.append(f"| {f.name} | `{shown}` | {type(d).__name__} |")
        lines.append("")
    lines.append(f"World-model presets: {', '.join(sorted(PRESETS))}.")
    lines.append("")
    return "\n".join(lines)
