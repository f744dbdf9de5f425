"""Numba twins of the kernels in ``_numpy_impl``.

Loop orders and scalar casts are chosen so results match the numpy fallback
bit for bit. Kernels are serial on purpose: accumulation order stays fixed,
which keeps training runs byte-reproducible.
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def _im2col_jit(x, k, stride, out):
    b, h, w, c = x.shape
    oh = out.shape[1]
    ow = out.shape[2]
    for bi in prange(b):
        for oy in range(oh):
            for ox in range(ow):
                for i in range(k):
                    # rows x[bi, y, x0:x0+k, :] are contiguous blocks
                    out[bi, oy, ox, i] = x[bi, oy * stride + i, ox * stride : ox * stride + k]


def im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    b, h, w, c = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    out = np.empty((b, oh, ow, k, k, c), dtype=x.dtype)
    _im2col_jit(np.ascontiguousarray(x), k, stride, out)
    return out


@njit(cache=True, parallel=True)
def _col2im_jit(cols, stride, out):
    # batch partitions are disjoint, so parallelizing over bi keeps the
    # per-pixel accumulation order fixed: ascending (i, j), as in the
    # numpy fallback's slice-add loop
    b, oh, ow, k, _, c = cols.shape
    for bi in prange(b):
        for i in range(k):
            for j in range(k):
                for oy in range(oh):
                    for ox in range(ow):
                        for ci in range(c):
                            out[bi, oy * stride + i, ox * stride + j, ci] += cols[bi, oy, ox, i, j, ci]


def col2im_add(cols: np.ndarray, stride: int, h: int, w: int) -> np.ndarray:
    b = cols.shape[0]
    c = cols.shape[5]
    out = np.zeros((b, h, w, c), dtype=cols.dtype)
    _col2im_jit(np.ascontiguousarray(cols), stride, out)
    return out


@njit(cache=True)
def _adam_jit(p, g, m, v, lr, b1, omb1, b2, omb2, eps, bc1, bc2):
    for i in range(p.size):
        m[i] = b1 * m[i] + omb1 * g[i]
        v[i] = b2 * v[i] + omb2 * (g[i] * g[i])
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] = p[i] - (lr * mhat) / (np.sqrt(vhat) + eps)


def adam_step(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2) -> None:
    t = p.dtype.type
    _adam_jit(
        p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
        t(lr), t(beta1), t(1.0) - t(beta1), t(beta2), t(1.0) - t(beta2),
        t(eps), t(bc1), t(bc2),
    )


@njit(cache=True)
def _bbox_jit(h, w, y0, y1, x0, x1):
    ry0 = max(int(np.floor(y0)), 0)
    ry1 = min(int(np.ceil(y1)) + 1, h)
    rx0 = max(int(np.floor(x0)), 0)
    rx1 = min(int(np.ceil(x1)) + 1, w)
    return ry0, ry1, rx0, rx1


@njit(cache=True)
def fill_disc(img, cy, cx, r, color):
    h, w = img.shape[:2]
    ry0, ry1, rx0, rx1 = _bbox_jit(h, w, cy - r, cy + r, cx - r, cx + r)
    for y in range(ry0, ry1):
        dy = y + 0.5 - cy
        for x in range(rx0, rx1):
            dx = x + 0.5 - cx
            if dy * dy + dx * dx <= r * r:
                for ch in range(3):
                    img[y, x, ch] = color[ch]


@njit(cache=True)
def fill_rect(img, cy, cx, hh, hw, color):
    h, w = img.shape[:2]
    ry0, ry1, rx0, rx1 = _bbox_jit(h, w, cy - hh, cy + hh, cx - hw, cx + hw)
    for y in range(ry0, ry1):
        dy = abs(y + 0.5 - cy)
        for x in range(rx0, rx1):
            dx = abs(x + 0.5 - cx)
            if dy <= hh and dx <= hw:
                for ch in range(3):
                    img[y, x, ch] = color[ch]


@njit(cache=True)
def fill_segment(img, y0, x0, y1, x1, halfwidth, color):
    h, w = img.shape[:2]
    lo_y = min(y0, y1) - halfwidth
    hi_y = max(y0, y1) + halfwidth
    lo_x = min(x0, x1) - halfwidth
    hi_x = max(x0, x1) + halfwidth
    ry0, ry1, rx0, rx1 = _bbox_jit(h, w, lo_y, hi_y, lo_x, hi_x)
    dy = y1 - y0
    dx = x1 - x0
    den = dy * dy + dx * dx
    for y in range(ry0, ry1):
        py = y + 0.5 - y0
        for x in range(rx0, rx1):
            px = x + 0.5 - x0
            if den == 0.0:
                t = 0.0
            else:
                t = (py * dy + px * dx) / den
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            ey = py - t * dy
            ex = px - t * dx
            if ey * ey + ex * ex <= halfwidth * halfwidth:
                for ch in range(3):
                    img[y, x, ch] = color[ch]
