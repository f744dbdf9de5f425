"""Flat-shaded top-down rasterizer for WorldState.

Rendering is a pure function of the state. Every action dimension is visible:
x/y move the glyph, z scales the glyph disc, yaw rotates the fins, roll and
pitch set the side/back fin lengths, and the gripper command sets the finger
separation on the next frame.
"""
from __future__ import annotations

import math

import numpy as np

from . import kernels
from .envsim import WorldState

DEFAULT_HW = 64

TABLE_COLOR = (0.47, 0.44, 0.42)
COLOR_RGB = {
    "red": (0.85, 0.15, 0.12),
    "green": (0.10, 0.68, 0.22),
    "blue": (0.15, 0.32, 0.85),
    "yellow": (0.90, 0.84, 0.15),
    "white": (0.93, 0.93, 0.90),
    "purple": (0.60, 0.20, 0.72),
}
GLYPH_COLOR = (0.10, 0.10, 0.12)
FINGER_COLOR = (0.95, 0.55, 0.10)


def _c(rgb) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float32)


def render(state: WorldState, hw: int = DEFAULT_HW) -> np.ndarray:
    """Rasterize to an (hw, hw, 3) uint8 frame."""
    img = np.empty((hw, hw, 3), dtype=np.float32)
    img[:, :] = _c(TABLE_COLOR)
    s = hw / 64.0

    def px(v: float) -> float:
        return float(v) * hw

    # painter's order: lower tops first, held objects above everything
    order = sorted(state.objects, key=lambda o: (o.held, o.top, o.id))
    for o in order:
        cy, cx = px(o.pose[1]), px(o.pose[0])
        r = o.radius * hw
        col = _c(COLOR_RGB[o.color])
        if o.kind == "block":
            kernels.fill_rect(img, cy, cx, r, r, col)
        elif o.kind == "plate":
            kernels.fill_disc(img, cy, cx, r, col)
            kernels.fill_disc(img, cy, cx, r * 0.72, col * np.float32(0.85))
        elif o.kind == "bowl":
            kernels.fill_disc(img, cy, cx, r, col)
            kernels.fill_disc(img, cy, cx, r * 0.55, col * np.float32(0.45))
        elif o.kind == "pot":
            kernels.fill_disc(img, cy, cx, r, col)
            kernels.fill_rect(img, cy, cx - r - 1.2 * s, 1.2 * s, 1.4 * s, col)
            kernels.fill_rect(img, cy, cx + r + 1.2 * s, 1.2 * s, 1.4 * s, col)
        else:  # cup
            kernels.fill_disc(img, cy, cx, r, col)
            kernels.fill_disc(img, cy, cx, r * 0.40, col * np.float32(1.25))

    # end-effector glyph
    x, y, z, roll, pitch, yaw = (float(v) for v in state.ee_pose)
    cy, cx = px(y), px(x)
    disc_r = (1.8 + 7.0 * z) * s
    heading = 10.0 * s
    side = (2.0 + 3.2 * (1.0 + math.sin(roll))) * s
    back = (2.0 + 3.2 * (1.0 + math.sin(pitch))) * s
    wfin = 1.1 * s
    gcol = _c(GLYPH_COLOR)

    def fin(angle: float, length: float) -> None:
        kernels.fill_segment(
            img, cy, cx, cy + length * math.sin(angle), cx + length * math.cos(angle), wfin, gcol
        )

    fin(yaw, heading)
    fin(yaw + math.pi / 2, side)
    fin(yaw + math.pi, back)
    kernels.fill_disc(img, cy, cx, disc_r, gcol)

    # fingers: separation shrinks as the gripper closes
    sep = (2.0 + 4.0 * (1.0 - state.gripper)) * s
    fy, fx = math.cos(yaw), -math.sin(yaw)  # perpendicular to heading
    fcol = _c(FINGER_COLOR)
    kernels.fill_disc(img, cy + sep * fy, cx + sep * fx, 1.3 * s, fcol)
    kernels.fill_disc(img, cy - sep * fy, cx - sep * fx, 1.3 * s, fcol)

    np.clip(img, 0.0, 1.0, out=img)
    return (img * np.float32(255.0) + np.float32(0.5)).astype(np.uint8)
