"""Benchmark the numba kernels against the pure-numpy fallbacks.

Usage::

    python -m lawm.bench [--repeats 20] [--json out.json]

Imports both kernel backends directly (ignoring LAWM_KERNELS) and reports
per-kernel timings plus speedups on shapes representative of training.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from .kernels import _numpy_impl

try:
    from .kernels import _numba_impl
except ImportError:
    _numba_impl = None


def _time(fn, *args, repeats: int) -> float:
    fn(*args)  # warmup (and JIT compile for numba)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(rng):
    x = rng.standard_normal((8, 64, 64, 16)).astype(np.float32)
    cols = rng.standard_normal((8, 32, 32, 4, 4, 16)).astype(np.float32)
    p = rng.standard_normal(400_000).astype(np.float32)
    g = rng.standard_normal(400_000).astype(np.float32)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    img = np.zeros((64, 64, 3), dtype=np.float32)
    color = np.array([0.8, 0.2, 0.1], dtype=np.float32)
    return [
        ("im2col 8x64x64x16 k4s2", lambda impl: impl.im2col(x, 4, 2)),
        ("col2im 8x32x32x4x4x16", lambda impl: impl.col2im_add(cols, 2, 64, 64)),
        ("adam 400k params", lambda impl: impl.adam_step(
            p.copy(), g, m.copy(), v.copy(), 3e-4, 0.9, 0.999, 1e-8, 0.1, 0.001)),
        ("rasterize disc+rect+segment", lambda impl: (
            impl.fill_disc(img, 32.0, 32.0, 9.0, color),
            impl.fill_rect(img, 10.0, 50.0, 4.0, 6.0, color),
            impl.fill_segment(img, 5.0, 5.0, 60.0, 40.0, 1.2, color),
        )),
    ]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--json", default=None, help="also dump results to this JSON file")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':34s} {'numpy (ms)':>12s} {'numba (ms)':>12s} {'speedup':>9s}")
    print("-" * 70)
    for name, call in _cases(rng):
        t_np = _time(lambda: call(_numpy_impl), repeats=args.repeats) * 1e3
        if _numba_impl is not None:
            t_nb = _time(lambda: call(_numba_impl), repeats=args.repeats) * 1e3
            speedup = t_np / t_nb if t_nb > 0 else float("inf")
            print(f"{name:34s} {t_np:12.3f} {t_nb:12.3f} {speedup:8.1f}x")
            rows.append({"kernel": name, "numpy_ms": t_np, "numba_ms": t_nb, "speedup": speedup})
        else:
            print(f"{name:34s} {t_np:12.3f} {'n/a':>12s} {'n/a':>9s}")
            rows.append({"kernel": name, "numpy_ms": t_np, "numba_ms": None, "speedup": None})
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)
        print(f"\nwrote {args.json}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
