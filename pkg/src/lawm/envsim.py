"""Deterministic 2.5-D tabletop manipulation environment.

The table is the unit square, seen from above. The end-effector is a point
with full 6-DoF pose plus a 1-DoF gripper; objects rest on the table or on
top of each other. `step` and `render` are pure functions, so a (seed, task,
action sequence) triple reproduces a trajectory bit for bit.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .seeding import stream

# -- constants ----------------------------------------------------------------

ACTION_DIM = 7
POS_SCALE = 0.05  # table units per unit action
ROT_SCALE = 0.2  # radians per unit action
GRIP_RATE = 0.5  # gripper fraction per unit command
GRASP_RADIUS = 0.08
DEFAULT_SUCCESS_RADIUS = 0.10
MAX_EPISODE_STEPS = 100
PLACE_MARGIN = 0.10  # keep placements away from table edges
MIN_SEPARATION = 0.28  # subject-to-target spawn distance
HELD_DROP = 0.02  # held object center sits this far below the ee
EE_START_Z = 0.35

KINDS = ("block", "cup", "plate", "bowl", "pot")
COLORS = ("red", "green", "blue", "yellow", "white", "purple")
CATEGORIES = ("put", "move", "remove", "take", "stack", "pick_place")

# (footprint radius, height) per kind, in table units
KIND_SIZE = {
    "block": (0.030, 0.045),
    "cup": (0.036, 0.060),
    "plate": (0.085, 0.012),
    "bowl": (0.065, 0.035),
    "pot": (0.055, 0.055),
}

GRASPABLE = ("block", "cup")
SUPPORTS = ("plate", "bowl", "pot")

_TEMPLATES = {
    "put": "put the {s} on the {t}",
    "move": "move the {s} to the {t}",
    "remove": "remove the {s} and set it on the {t}",
    "take": "take the {s} to the {t}",
    "stack": "stack the {s} on the {t}",
    "pick_place": "pick the {s} and place it on the {t}",
}


class ConfigurationError(ValueError):
    """A task or scene references something the inventory cannot provide."""


def object_id(color: str, kind: str) -> str:
    return f"{color}_{kind}"


def parse_object_id(oid: str) -> tuple[str, str]:
    color, _, kind = oid.partition("_")
    if color not in COLORS or kind not in KINDS:
        raise ConfigurationError(f"unknown object id {oid!r}")
    return color, kind


def _phrase(oid: str) -> str:
    color, kind = parse_object_id(oid)
    return f"{color} {kind}"


# -- domain types ---------------------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    category: str
    subject_id: str
    target_id: str
    success_radius: float = DEFAULT_SUCCESS_RADIUS

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ConfigurationError(f"unknown task category {self.category!r}")
        parse_object_id(self.subject_id)
        parse_object_id(self.target_id)
        if self.subject_id == self.target_id:
            raise ConfigurationError("subject and target must differ")

    @property
    def instruction(self) -> str:
        return _TEMPLATES[self.category].format(s=_phrase(self.subject_id), t=_phrase(self.target_id))

    @property
    def name(self) -> str:
        return f"{self.category}:{self.subject_id}:{self.target_id}"

    @staticmethod
    def from_name(name: str) -> "TaskSpec":
        parts = name.split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"task name must be category:subject:target, got {name!r}")
        return TaskSpec(parts[0], parts[1], parts[2])


@dataclass
class ObjectState:
    id: str
    kind: str
    color: str
    pose: np.ndarray  # (3,) center position
    held: bool = False

    def copy(self) -> "ObjectState":
        return ObjectState(self.id, self.kind, self.color, self.pose.copy(), self.held)

    @property
    def radius(self) -> float:
        return KIND_SIZE[self.kind][0]

    @property
    def height(self) -> float:
        return KIND_SIZE[self.kind][1]

    @property
    def top(self) -> float:
        return float(self.pose[2] + self.height / 2)


@dataclass
class WorldState:
    ee_pose: np.ndarray  # (6,) x, y, z, roll, pitch, yaw
    gripper: float  # 0 open .. 1 closed
    objects: list[ObjectState]
    attached: Optional[str]
    step_count: int
    task: TaskSpec
    max_steps: int = MAX_EPISODE_STEPS

    def copy(self) -> "WorldState":
        return WorldState(
            self.ee_pose.copy(),
            self.gripper,
            [o.copy() for o in self.objects],
            self.attached,
            self.step_count,
            self.task,
            self.max_steps,
        )

    def obj(self, oid: str) -> ObjectState:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    @property
    def proprio(self) -> np.ndarray:
        return np.concatenate([self.ee_pose, [self.gripper]]).astype(np.float64)


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# -- reset ----------------------------------------------------------------------


def _place(rng: np.random.Generator, existing: list[np.ndarray], min_dists: list[float]) -> np.ndarray:
    """Rejection-sample an xy spot keeping the given distances to prior spots."""
    for _ in range(200):
        xy = rng.uniform(PLACE_MARGIN, 1.0 - PLACE_MARGIN, size=2)
        ok = True
        for prev, dmin in zip(existing, min_dists):
            if np.hypot(xy[0] - prev[0], xy[1] - prev[1]) < dmin:
                ok = False
                break
        if ok:
            return xy
    return xy  # crowded scene: accept the last draw


def reset(seed: int, task: TaskSpec, distractors: int = 2, max_steps: int = MAX_EPISODE_STEPS) -> WorldState:
    """Build a seeded initial state for the task; identical inputs give identical states."""
    if seed < 0:
        raise ConfigurationError("seed must be non-negative")
    rng = stream(seed, "env_reset")

    s_color, s_kind = parse_object_id(task.subject_id)
    t_color, t_kind = parse_object_id(task.target_id)
    if s_kind not in GRASPABLE:
        raise ConfigurationError(f"subject kind {s_kind!r} is not graspable")

    objects: list[ObjectState] = []
    spots: list[np.ndarray] = []
    dists: list[float] = []

    t_xy = _place(rng, spots, dists)
    t_z = KIND_SIZE[t_kind][1] / 2
    objects.append(ObjectState(task.target_id, t_kind, t_color, np.array([t_xy[0], t_xy[1], t_z])))
    spots.append(t_xy)
    dists.append(MIN_SEPARATION)

    if task.category in ("remove", "take"):
        # subject starts resting on a support object placed away from the target
        sup_kind = SUPPORTS[rng.integers(len(SUPPORTS))]
        sup_color = COLORS[rng.integers(len(COLORS))]
        while object_id(sup_color, sup_kind) in (task.subject_id, task.target_id):
            sup_color = COLORS[rng.integers(len(COLORS))]
        sup_xy = _place(rng, spots, dists)
        sup_z = KIND_SIZE[sup_kind][1] / 2
        objects.append(ObjectState(object_id(sup_color, sup_kind), sup_kind, sup_color,
                                   np.array([sup_xy[0], sup_xy[1], sup_z])))
        s_z = KIND_SIZE[sup_kind][1] + KIND_SIZE[s_kind][1] / 2
        objects.append(ObjectState(task.subject_id, s_kind, s_color,
                                   np.array([sup_xy[0], sup_xy[1], s_z])))
        spots.append(sup_xy)
        dists.append(0.16)
    else:
        s_xy = _place(rng, spots, dists)
        s_z = KIND_SIZE[s_kind][1] / 2
        objects.append(ObjectState(task.subject_id, s_kind, s_color, np.array([s_xy[0], s_xy[1], s_z])))
        spots.append(s_xy)
        dists.append(0.16)

    taken = {o.id for o in objects}
    pool = [object_id(c, k) for c in COLORS for k in KINDS if object_id(c, k) not in taken]
    for _ in range(distractors):
        oid = pool.pop(int(rng.integers(len(pool))))
        color, kind = parse_object_id(oid)
        xy = _place(rng, spots, dists)
        objects.append(ObjectState(oid, kind, color, np.array([xy[0], xy[1], KIND_SIZE[kind][1] / 2])))
        spots.append(xy)
        dists.append(0.14)

    ee_xy = rng.uniform(PLACE_MARGIN, 1.0 - PLACE_MARGIN, size=2)
    ee_pose = np.array([ee_xy[0], ee_xy[1], EE_START_Z, 0.0, 0.0, 0.0])
    return WorldState(ee_pose, 0.0, objects, None, 0, task, max_steps)


# -- dynamics ---------------------------------------------------------------------


def _support_top(state: WorldState, obj: ObjectState) -> float:
    """Resting height for obj's center: table or the tallest object under it."""
    best = 0.0
    for o in state.objects:
        if o.id == obj.id or o.held:
            continue
        if np.hypot(o.pose[0] - obj.pose[0], o.pose[1] - obj.pose[1]) <= o.radius:
            best = max(best, o.top)
    return best + obj.height / 2


def goal_reached(state: WorldState) -> bool:
    subj = state.obj(state.task.subject_id)
    tgt = state.obj(state.task.target_id)
    released = state.attached != state.task.subject_id
    return released and float(np.linalg.norm(subj.pose - tgt.pose)) <= state.task.success_radius


def step(state: WorldState, action: np.ndarray) -> tuple[WorldState, bool, bool]:
    """Advance one step. Returns (next_state, done, success)."""
    a = np.clip(np.asarray(action, dtype=np.float64).reshape(-1), -1.0, 1.0)
    if a.shape[0] != ACTION_DIM:
        raise ValueError(f"action must have dimension {ACTION_DIM}")
    nxt = state.copy()

    nxt.ee_pose[:3] = np.clip(nxt.ee_pose[:3] + POS_SCALE * a[:3], 0.0, 1.0)
    nxt.ee_pose[3:] = _wrap_angle(nxt.ee_pose[3:] + ROT_SCALE * a[3:6])

    prev_grip = nxt.gripper
    nxt.gripper = float(np.clip(nxt.gripper + GRIP_RATE * a[6], 0.0, 1.0))

    # closing step: grab the nearest free object within reach
    if a[6] > 0 and prev_grip <= 0.5 < nxt.gripper and nxt.attached is None:
        best_id, best_d = None, GRASP_RADIUS
        for o in nxt.objects:
            d = float(np.linalg.norm(nxt.ee_pose[:3] - o.pose))
            if d < best_d:
                best_id, best_d = o.id, d
        if best_id is not None:
            nxt.attached = best_id
            nxt.obj(best_id).held = True

    # release: object drops to its resting height
    if nxt.attached is not None and nxt.gripper <= 0.5:
        dropped = nxt.obj(nxt.attached)
        dropped.held = False
        nxt.attached = None
        dropped.pose[2] = _support_top(nxt, dropped)

    if nxt.attached is not None:
        held = nxt.obj(nxt.attached)
        held.pose[0] = nxt.ee_pose[0]
        held.pose[1] = nxt.ee_pose[1]
        held.pose[2] = max(nxt.ee_pose[2] - HELD_DROP, held.height / 2)

    nxt.step_count = state.step_count + 1
    success = goal_reached(nxt)
    done = success or nxt.step_count >= nxt.max_steps
    return nxt, done, success
