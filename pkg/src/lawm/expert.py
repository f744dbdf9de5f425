"""Scripted expert: proportional controller with approach / grasp / transport /
release phases. Orientation targets are smooth functions of the current goal
point so all seven action dimensions carry task-dependent signal."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envsim import (
    GRASP_RADIUS,
    POS_SCALE,
    ROT_SCALE,
    WorldState,
    goal_reached,
)

XY_NEAR = 0.02
TRANSPORT_Z = 0.30
APPROACH_CLEARANCE = 0.10
GRASP_TRIGGER = 0.045
PLACE_CLEARANCE = 0.035


@dataclass
class ExpertDecision:
    action: np.ndarray  # (7,)
    stuck: bool
    phase: str


def _wrap(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def scripted_expert(state: WorldState) -> ExpertDecision:
    """Choose the next action for the state's own task."""
    task = state.task
    if goal_reached(state):
        return ExpertDecision(np.zeros(7), False, "solved")
    if state.attached is not None and state.attached != task.subject_id:
        return ExpertDecision(np.zeros(7), True, "stuck")

    subj = state.obj(task.subject_id)
    tgt = state.obj(task.target_id)
    ee = state.ee_pose[:3]
    grip = 0.0

    if state.attached == task.subject_id:
        place_z = tgt.top + subj.height / 2 + PLACE_CLEARANCE
        xy_err = float(np.hypot(tgt.pose[0] - ee[0], tgt.pose[1] - ee[1]))
        if xy_err > XY_NEAR:
            goal = np.array([tgt.pose[0], tgt.pose[1], TRANSPORT_Z])
            phase = "transport"
            grip = 1.0
        else:
            goal = np.array([tgt.pose[0], tgt.pose[1], place_z])
            phase = "place"
            grip = 1.0
            if xy_err < 0.6 * task.success_radius and abs(ee[2] - place_z) < 0.04:
                grip = -1.0
                phase = "release"
    else:
        grasp_z = subj.pose[2] + 0.01
        xy_err = float(np.hypot(subj.pose[0] - ee[0], subj.pose[1] - ee[1]))
        if xy_err > XY_NEAR:
            goal = np.array([subj.pose[0], subj.pose[1], subj.top + APPROACH_CLEARANCE])
            phase = "approach"
            grip = -1.0
        else:
            goal = np.array([subj.pose[0], subj.pose[1], grasp_z])
            phase = "descend"
            grip = -1.0
            if float(np.linalg.norm(subj.pose - ee)) < min(GRASP_TRIGGER, GRASP_RADIUS):
                grip = 1.0
                phase = "grasp"

    a_pos = np.clip((goal - ee) / POS_SCALE, -1.0, 1.0)
    if phase in ("grasp", "release"):
        a_pos[:] = 0.0  # hold still while the gripper actuates

    gx, gy = float(goal[0]), float(goal[1])
    dx, dy = gx - float(ee[0]), gy - float(ee[1])
    yaw_des = math.atan2(dy, dx) if math.hypot(dx, dy) > 0.01 else float(state.ee_pose[5])
    roll_des = 0.8 * (gx - 0.5)
    pitch_des = 0.8 * (gy - 0.5)
    a_rot = np.clip(
        np.array(
            [
                _wrap(roll_des - state.ee_pose[3]),
                _wrap(pitch_des - state.ee_pose[4]),
                _wrap(yaw_des - state.ee_pose[5]),
            ]
        )
        / ROT_SCALE,
        -1.0,
        1.0,
    )

    return ExpertDecision(np.concatenate([a_pos, a_rot, [grip]]), False, phase)
