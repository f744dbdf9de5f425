"""Canonical correlation analysis via whitening + SVD.

Both views are centered, whitened with the symmetric inverse square root of
their (ridge-regularized) covariances, and the singular values of the
whitened cross-covariance are the canonical correlations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla


@dataclass
class CCAResult:
    weights_a: np.ndarray  # (p, m)
    weights_b: np.ndarray  # (q, m)
    correlations: np.ndarray  # (m,), non-increasing, in [0, 1]
    u: np.ndarray  # (n, m) canonical variates of Z
    v: np.ndarray  # (n, m) canonical variates of Y


def pearson(u: np.ndarray, v: np.ndarray) -> float:
    """Pearson correlation cov(u, v) / (std(u) std(v))."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError("u and v must have the same length")
    uc = u - u.mean()
    vc = v - v.mean()
    vu = float(uc @ uc)
    vv = float(vc @ vc)
    if vu == 0.0 or vv == 0.0:
        raise ValueError("pearson undefined for zero-variance input")
    return float((uc @ vc) / np.sqrt(vu * vv))


def _inv_sqrt(cov: np.ndarray, ridge: float) -> np.ndarray:
    dim = cov.shape[0]
    eps = ridge * np.trace(cov) / dim if ridge > 0 else 0.0
    w, vec = np.linalg.eigh(cov + eps * np.eye(dim))
    tiny = 1e-12 * max(float(w[-1]), 1.0)
    if w[0] <= tiny:
        raise np.linalg.LinAlgError(
            "covariance is rank deficient; pass a positive ridge (e.g. cca(Z, Y, ridge=1e-6))"
        )
    return (vec / np.sqrt(w)) @ vec.T


def cca(Z: np.ndarray, Y: np.ndarray, ridge: float = 1e-6) -> CCAResult:
    """Canonical correlations between row-paired views Z (n x p) and Y (n x q).

    ridge scales a diagonal loading of trace/dim on each covariance; pass 0
    to disable (full-rank inputs only).
    """
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Z.ndim != 2 or Y.ndim != 2 or Z.shape[0] != Y.shape[0]:
        raise ValueError("Z and Y must be 2-D with the same number of rows")
    n, p = Z.shape
    q = Y.shape[1]
    if n <= max(p, q):
        raise ValueError(f"need more samples than features: n={n}, p={p}, q={q}")
    Zc = Z - Z.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    czz = Zc.T @ Zc / (n - 1)
    cyy = Yc.T @ Yc / (n - 1)
    czy = Zc.T @ Yc / (n - 1)
    wz = _inv_sqrt(czz, ridge)
    wy = _inv_sqrt(cyy, ridge)
    m = min(p, q)
    uu, s, vt = np.linalg.svd(wz @ czy @ wy)
    a = wz @ uu[:, :m]
    b = wy @ vt[:m].T
    return CCAResult(
        weights_a=a,
        weights_b=b,
        correlations=np.clip(s[:m], 0.0, 1.0),
        u=Zc @ a,
        v=Yc @ b,
    )


def cca_eig_oracle(Z: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Independent check: canonical correlations from the generalized
    eigenproblem  Czy Cyy^-1 Cyz a = rho^2 Czz a."""
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n = Z.shape[0]
    Zc = Z - Z.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    czz = Zc.T @ Zc / (n - 1)
    cyy = Yc.T @ Yc / (n - 1)
    czy = Zc.T @ Yc / (n - 1)
    lhs = czy @ np.linalg.solve(cyy, czy.T)
    vals = sla.eigh(lhs, czz, eigvals_only=True)
    vals = np.clip(vals, 0.0, 1.0)
    m = min(Z.shape[1], Y.shape[1])
    return np.sqrt(vals[::-1][:m])
