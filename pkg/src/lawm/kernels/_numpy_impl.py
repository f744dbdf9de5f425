"""Pure-numpy reference implementations of the hot kernels.

These are the fallback path; the numba twins in ``_numba_impl`` must produce
bit-identical output (checked in tests/test_kernels.py).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Extract k×k patches at the given stride.

    x: (B, H, W, C) -> (B, OH, OW, k, k, C), a contiguous copy.
    """
    b, h, w, c = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    sb, sh, sw, sc = x.strides
    view = as_strided(
        x,
        shape=(b, oh, ow, k, k, c),
        strides=(sb, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )
    return np.ascontiguousarray(view)


def col2im_add(cols: np.ndarray, stride: int, h: int, w: int) -> np.ndarray:
    """Scatter-add k×k patch gradients back onto a (B, H, W, C) image."""
    b, oh, ow, k, _, c = cols.shape
    out = np.zeros((b, h, w, c), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += cols[
                :, :, :, i, j, :
            ]
    return out


def adam_step(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    bc1: float,
    bc2: float,
) -> None:
    """One in-place Adam update on flat arrays; bc1/bc2 are bias corrections."""
    one = p.dtype.type(1.0)
    b1 = p.dtype.type(beta1)
    b2 = p.dtype.type(beta2)
    m[:] = b1 * m + (one - b1) * g
    v[:] = b2 * v + (one - b2) * (g * g)
    mhat = m / p.dtype.type(bc1)
    vhat = v / p.dtype.type(bc2)
    p -= p.dtype.type(lr) * mhat / (np.sqrt(vhat) + p.dtype.type(eps))


# ---------------------------------------------------------------------------
# Rasterizer primitives: painter-style overwrites on a float32 (H, W, 3) canvas.
# All geometry is computed in float64 so both backends agree bitwise.
# ---------------------------------------------------------------------------


def _bbox(h: int, w: int, y0: float, y1: float, x0: float, x1: float):
    ry0 = max(int(np.floor(y0)), 0)
    ry1 = min(int(np.ceil(y1)) + 1, h)
    rx0 = max(int(np.floor(x0)), 0)
    rx1 = min(int(np.ceil(x1)) + 1, w)
    return ry0, ry1, rx0, rx1


def fill_disc(img: np.ndarray, cy: float, cx: float, r: float, color: np.ndarray) -> None:
    """Overwrite pixels whose center lies within r of (cy, cx)."""
    h, w = img.shape[:2]
    ry0, ry1, rx0, rx1 = _bbox(h, w, cy - r, cy + r, cx - r, cx + r)
    if ry0 >= ry1 or rx0 >= rx1:
        return
    ys = np.arange(ry0, ry1, dtype=np.float64) + 0.5 - cy
    xs = np.arange(rx0, rx1, dtype=np.float64) + 0.5 - cx
    mask = ys[:, None] * ys[:, None] + xs[None, :] * xs[None, :] <= r * r
    img[ry0:ry1, rx0:rx1][mask] = color


def fill_rect(img: np.ndarray, cy: float, cx: float, hh: float, hw: float, color: np.ndarray) -> None:
    """Overwrite an axis-aligned rectangle with half-extents (hh, hw)."""
    h, w = img.shape[:2]
    ry0, ry1, rx0, rx1 = _bbox(h, w, cy - hh, cy + hh, cx - hw, cx + hw)
    if ry0 >= ry1 or rx0 >= rx1:
        return
    ys = np.abs(np.arange(ry0, ry1, dtype=np.float64) + 0.5 - cy)
    xs = np.abs(np.arange(rx0, rx1, dtype=np.float64) + 0.5 - cx)
    mask = (ys[:, None] <= hh) & (xs[None, :] <= hw)
    img[ry0:ry1, rx0:rx1][mask] = color


def fill_segment(
    img: np.ndarray,
    y0: float,
    x0: float,
    y1: float,
    x1: float,
    halfwidth: float,
    color: np.ndarray,
) -> None:
    """Overwrite pixels within halfwidth of the segment (y0,x0)-(y1,x1)."""
    h, w = img.shape[:2]
    lo_y, hi_y = min(y0, y1) - halfwidth, max(y0, y1) + halfwidth
    lo_x, hi_x = min(x0, x1) - halfwidth, max(x0, x1) + halfwidth
    ry0, ry1, rx0, rx1 = _bbox(h, w, lo_y, hi_y, lo_x, hi_x)
    if ry0 >= ry1 or rx0 >= rx1:
        return
    dy = y1 - y0
    dx = x1 - x0
    den = dy * dy + dx * dx
    ys = np.arange(ry0, ry1, dtype=np.float64) + 0.5 - y0
    xs = np.arange(rx0, rx1, dtype=np.float64) + 0.5 - x0
    py = np.broadcast_to(ys[:, None], (ry1 - ry0, rx1 - rx0))
    px = np.broadcast_to(xs[None, :], (ry1 - ry0, rx1 - rx0))
    if den == 0.0:
        t = np.zeros_like(py)
    else:
        t = np.clip((py * dy + px * dx) / den, 0.0, 1.0)
    ey = py - t * dy
    ex = px - t * dx
    mask = ey * ey + ex * ex <= halfwidth * halfwidth
    img[ry0:ry1, rx0:rx1][mask] = color
