"""CCA against hand values, the generalized-eigenproblem oracle, and its
invariances."""
from __future__ import annotations

import numpy as np
import pytest

from lawm.cca import cca, cca_eig_oracle, pearson

RNG = np.random.default_rng(0)


def test_pearson_hand_values():
    u = np.array([1.0, 2.0, 3.0])
    assert pearson(u, u) == pytest.approx(1.0)
    assert pearson(u, -u) == pytest.approx(-1.0)
    assert pearson(u, np.array([1.0, 2.0, 4.0])) == pytest.approx(0.98198, abs=1e-5)


def test_pearson_zero_variance_error():
    with pytest.raises(ValueError):
        pearson(np.ones(5), np.arange(5.0))


def test_self_correlation_all_ones():
    z = RNG.standard_normal((100, 7))
    res = cca(z, z.copy(), ridge=0.0)
    np.testing.assert_allclose(res.correlations, np.ones(7), atol=1e-6)


def test_invertible_map_all_ones():
    z = RNG.standard_normal((100, 7))
    a = RNG.standard_normal((7, 7)) + 3 * np.eye(7)
    res = cca(z, z @ a, ridge=0.0)
    np.testing.assert_allclose(res.correlations, np.ones(7), atol=1e-6)


def test_independent_null_level():
    z = RNG.standard_normal((10_000, 7))
    y = RNG.standard_normal((10_000, 7))
    res = cca(z, y, ridge=0.0)
    assert res.correlations[0] < 0.1


def test_oracle_equivalence_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(50):
        z = rng.standard_normal((50, 5))
        y = rng.standard_normal((50, 4))
        got = cca(z, y, ridge=0.0).correlations
        want = cca_eig_oracle(z, y)
        np.testing.assert_allclose(got, want, atol=1e-6)


def test_affine_invariance():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((200, 5))
    y = rng.standard_normal((200, 4)) + 0.3 * z[:, :4]
    base = cca(z, y, ridge=0.0).correlations
    az = rng.standard_normal((5, 5)) + 2 * np.eye(5)
    ay = rng.standard_normal((4, 4)) + 2 * np.eye(4)
    got = cca(z @ az + rng.standard_normal(5), y @ ay - 3.0, ridge=0.0).correlations
    np.testing.assert_allclose(got, base, atol=1e-6)


def test_joint_row_permutation_invariant():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((300, 5))
    y = rng.standard_normal((300, 4)) + 0.5 * z[:, :4]
    perm = rng.permutation(300)
    base = cca(z, y, ridge=0.0).correlations
    got = cca(z[perm], y[perm], ridge=0.0).correlations
    np.testing.assert_allclose(got, base, atol=1e-10)


def test_y_only_permutation_destroys_correlation():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((10_000, 7))
    y = z + 0.1 * rng.standard_normal((10_000, 7))
    assert cca(z, y, ridge=0.0).correlations[0] > 0.99
    got = cca(z, y[rng.permutation(10_000)], ridge=0.0).correlations
    assert got[0] < 0.1


def test_result_structure():
    z = RNG.standard_normal((60, 5))
    y = RNG.standard_normal((60, 4))
    res = cca(z, y)
    m = 4
    assert res.correlations.shape == (m,)
    assert np.all(np.diff(res.correlations) <= 1e-12)  # non-increasing
    assert np.all((res.correlations >= 0) & (res.correlations <= 1))
    assert res.weights_a.shape == (5, m) and res.weights_b.shape == (4, m)
    assert res.u.shape == (60, m) and res.v.shape == (60, m)
    np.testing.assert_allclose(res.u.var(axis=0, ddof=1), np.ones(m), rtol=1e-3)
    np.testing.assert_allclose(res.v.var(axis=0, ddof=1), np.ones(m), rtol=1e-3)
    # the reported correlations are the Pearson correlations of the variates
    for i in range(m):
        assert pearson(res.u[:, i], res.v[:, i]) == pytest.approx(res.correlations[i], abs=1e-5)


def test_rank_deficient_errors_mention_ridge():
    z = RNG.standard_normal((50, 4))
    z = np.hstack([z, z[:, :1]])  # duplicated column
    y = RNG.standard_normal((50, 3))
    with pytest.raises(np.linalg.LinAlgError, match="ridge"):
        cca(z, y, ridge=0.0)
    res = cca(z, y, ridge=1e-6)  # regularized path succeeds
    assert np.all(np.isfinite(res.correlations))


def test_too_few_samples():
    with pytest.raises(ValueError):
        cca(RNG.standard_normal((5, 7)), RNG.standard_normal((5, 7)))
