"""Parameter containers, initializers, and layer forward helpers."""
from __future__ import annotations

import hashlib

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Params(dict):
    """Flat name -> Tensor map; all entries require gradients."""

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.ascontiguousarray(array), requires_grad=True)
        self[name] = t
        return t

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.data.size for t in self.values())


def params_hash(params: Params, include=None, exclude_prefix: str | None = None) -> str:
    """sha256 over sorted (name, dtype, shape, bytes) of the selected params."""
    h = hashlib.sha256()
    for name in sorted(params):
        if include is not None and name not in include:
            continue
        if exclude_prefix is not None and name.startswith(exclude_prefix):
            continue
        arr = params[name].data
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


# -- initializers -------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


def head_init(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    # small so freshly (re)initialized heads start near zero output
    return (0.02 * rng.standard_normal(size=shape)).astype(dtype)


# -- layers -------------------------------------------------------------------


def add_linear(p: Params, name: str, rng, fan_in: int, fan_out: int, dtype, head: bool = False) -> None:
    if head:
        p.add(f"{name}.w", head_init(rng, (fan_in, fan_out), dtype))
    else:
        p.add(f"{name}.w", glorot_uniform(rng, (fan_in, fan_out), fan_in, fan_out, dtype))
    p.add(f"{name}.b", np.zeros(fan_out, dtype=dtype))


def linear(p: Params, name: str, x: Tensor) -> Tensor:
    return ad.linear(x, p[f"{name}.w"], p[f"{name}.b"])


def add_conv(p: Params, name: str, rng, k: int, cin: int, cout: int, dtype) -> None:
    fan_in = k * k * cin
    p.add(f"{name}.w", glorot_uniform(rng, (fan_in, cout), fan_in, k * k * cout, dtype))
    p.add(f"{name}.b", np.zeros(cout, dtype=dtype))


def conv(p: Params, name: str, x: Tensor, stride: int, pad: int) -> Tensor:
    return ad.conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride, pad=pad)


def add_gru(p: Params, name: str, rng, in_dim: int, hidden: int, dtype) -> None:
    for gate in ("r", "u", "c"):
        p.add(f"{name}.wx{gate}", glorot_uniform(rng, (in_dim, hidden), in_dim, hidden, dtype))
        p.add(f"{name}.wh{gate}", glorot_uniform(rng, (hidden, hidden), hidden, hidden, dtype))
        p.add(f"{name}.b{gate}", np.zeros(hidden, dtype=dtype))


def gru(p: Params, name: str, x: Tensor, h: Tensor) -> Tensor:
    r = ad.sigmoid(ad.linear(x, p[f"{name}.wxr"]) + ad.linear(h, p[f"{name}.whr"]) + p[f"{name}.br"])
    u = ad.sigmoid(ad.linear(x, p[f"{name}.wxu"]) + ad.linear(h, p[f"{name}.whu"]) + p[f"{name}.bu"])
    c = ad.tanh(ad.linear(x, p[f"{name}.wxc"]) + ad.linear(ad.mul(r, h), p[f"{name}.whc"]) + p[f"{name}.bc"])
    return u * h + (1.0 - u) * c


# -- conv stacks ---------------------------------------------------------------


def encoder_levels(hw: int) -> int:
    """Number of stride-2 stages taking hw down to a 4x4 grid."""
    n = int(np.log2(hw)) - 2
    if 4 * (2**n) != hw or n < 1:
        raise ValueError(f"frame size must be 4*2^k with k>=1, got {hw}")
    return n


def add_frame_encoder(p: Params, prefix: str, rng, hw: int, channels, out_dim: int, dtype) -> None:
    levels = encoder_levels(hw)
    chs = list(channels)[:levels]
    cin = 3
    for i, ch in enumerate(chs):
        add_conv(p, f"{prefix}.conv{i}", rng, 4, cin, ch, dtype)
        cin = ch
    add_linear(p, f"{prefix}.out", rng, 16 * cin, out_dim, dtype)


def frame_encoder(p: Params, prefix: str, x: Tensor, hw: int, channels) -> Tensor:
    levels = encoder_levels(hw)
    h = x
    for i in range(levels):
        h = ad.silu(conv(p, f"{prefix}.conv{i}", h, stride=2, pad=1))
    b = h.shape[0]
    flat = ad.reshape(h, (b, int(np.prod(h.shape[1:]))))
    return linear(p, f"{prefix}.out", flat)


def depth_to_space2(x: Tensor) -> Tensor:
    """Pixel shuffle: (B, H, W, 4C) -> (B, 2H, 2W, C)."""
    b, h, w, c4 = x.shape
    c = c4 // 4
    y = ad.reshape(x, (b, h, w, 2, 2, c))
    y = ad.transpose(y, (0, 1, 3, 2, 4, 5))
    return ad.reshape(y, (b, 2 * h, 2 * w, c))


def add_frame_decoder(p: Params, prefix: str, rng, hw: int, channels, in_dim: int, dtype) -> None:
    # subpixel decoder: every conv runs at half the target resolution and a
    # pixel shuffle doubles it, which keeps im2col buffers small
    levels = encoder_levels(hw)
    chs = list(channels)[:levels]
    top = chs[-1]
    add_linear(p, f"{prefix}.in", rng, in_dim, 16 * top, dtype)
    cin = top
    for i, ch in enumerate(reversed(chs[:-1])):
        add_conv(p, f"{prefix}.conv{i}", rng, 3, cin, 4 * ch, dtype)
        cin = ch
    add_conv(p, f"{prefix}.out", rng, 3, cin, 12, dtype)
    # final bias starts mid-gray so an untrained decoder predicts a
    # plausible constant image
    p[f"{prefix}.out.b"].data[:] = np.asarray(0.5, dtype=dtype)


def frame_decoder(p: Params, prefix: str, z: Tensor, hw: int, channels) -> Tensor:
    levels = encoder_levels(hw)
    chs = list(channels)[:levels]
    b = z.shape[0]
    h = ad.silu(linear(p, f"{prefix}.in", z))
    h = ad.reshape(h, (b, 4, 4, chs[-1]))
    for i in range(levels - 1):
        h = ad.silu(depth_to_space2(conv(p, f"{prefix}.conv{i}", h, stride=1, pad=1)))
    return depth_to_space2(conv(p, f"{prefix}.out", h, stride=1, pad=1))
