"""RSSM contracts: distributions, sampling, KL, sequence losses, rollouts."""
from __future__ import annotations

import numpy as np
import pytest

import lawm.autodiff as ad
from lawm.autodiff import Tensor
from lawm.policy import Policy
from lawm.worldmodel import (
    CategoricalDist,
    RSSMState,
    WorldModel,
    pixel_variance_baseline,
    wm_config,
)

from .conftest import fd_gradcheck, tiny_policy_config, tiny_wm_config

RNG = np.random.default_rng(0)


@pytest.fixture()
def wm():
    return WorldModel(tiny_wm_config(), seed=0)


def _frames(b=2, t=4, hw=16):
    return RNG.random((b, t, hw, hw, 3)).astype(np.float32)


# -- initial state and transition ----------------------------------------------


def test_initial_state_contract(wm):
    s = wm.initial_state(3, np.random.default_rng(0))
    assert np.array_equal(s.h.data, np.zeros((3, wm.cfg.deter), dtype=np.float32))
    z = s.z.data.reshape(3, wm.cfg.groups, wm.cfg.classes)
    assert np.all((z == 0.0) | (z == 1.0))
    assert np.array_equal(z.sum(-1), np.ones((3, wm.cfg.groups)))
    s2 = wm.initial_state(3, np.random.default_rng(0))
    assert np.array_equal(s.z.data, s2.z.data)


def test_recurrent_step_shape_and_grad(wm):
    s = wm.initial_state(2, np.random.default_rng(0))
    a = Tensor(RNG.uniform(-1, 1, (2, 7)).astype(np.float32), requires_grad=True)
    h = wm.recurrent_step(s, a)
    assert h.shape == (2, wm.cfg.deter)
    ad.tsum(ad.square(h)).backward()
    assert np.linalg.norm(a.grad) > 0


def test_recurrent_step_grad_matches_fd():
    wmd = WorldModel(tiny_wm_config(dtype="float64"), seed=0)
    s = wmd.initial_state(1, np.random.default_rng(0))
    s = RSSMState(Tensor(s.h.data.astype(np.float64)), Tensor(s.z.data.astype(np.float64)))
    a = Tensor(RNG.uniform(-0.5, 0.5, (1, 7)), requires_grad=True)

    def loss():
        a.grad = None
        return ad.tsum(ad.square(wmd.recurrent_step(s, a)))

    worst = fd_gradcheck(loss, [a], np.random.default_rng(1), eps=1e-6, n_per_param=7)
    assert worst < 1e-6


def test_zero_weights_transition_depends_only_on_biases(wm):
    for name, t in wm.params.items():
        if name.startswith("gru.w"):
            t.data[:] = 0.0
    s0 = wm.initial_state(1, np.random.default_rng(0))
    h1 = wm.recurrent_step(s0, np.zeros((1, 7), dtype=np.float32))
    h2 = wm.recurrent_step(RSSMState(s0.h, Tensor(np.roll(s0.z.data, 1, axis=1))),
                           np.ones((1, 7), dtype=np.float32))
    assert np.array_equal(h1.data, h2.data)  # inputs cannot matter with zero weights


def test_action_dim_enforced(wm):
    s = wm.initial_state(1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        wm.recurrent_step(s, np.zeros((1, 5), dtype=np.float32))


# -- posterior / prior --------------------------------------------------------------


def test_dists_normalize(wm):
    h = Tensor(RNG.standard_normal((3, wm.cfg.deter)).astype(np.float32))
    frames = RNG.random((3, 16, 16, 3)).astype(np.float32)
    for dist in (wm.posterior(h, frames), wm.prior(h)):
        probs = dist.probs.data
        np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-6)
        assert probs.min() >= wm.cfg.unimix / wm.cfg.classes - 1e-7  # unimix floor


def test_posterior_sees_frames_prior_does_not(wm):
    h = Tensor(np.zeros((1, wm.cfg.deter), dtype=np.float32))
    f1 = RNG.random((1, 16, 16, 3)).astype(np.float32)
    f2 = RNG.random((1, 16, 16, 3)).astype(np.float32)
    p1 = wm.posterior(h, f1).log_probs.data
    p2 = wm.posterior(h, f2).log_probs.data
    assert not np.allclose(p1, p2)
    # prior's signature has no frame input; same h -> same dist
    assert np.array_equal(wm.prior(h).log_probs.data, wm.prior(h).log_probs.data)


# -- sampling -------------------------------------------------------------------------


def test_sample_argmax_at_zero_temperature(wm):
    probs = np.array([[[0.1, 0.6, 0.2, 0.1], [0.3, 0.3, 0.35, 0.05]]])
    dist = CategoricalDist.from_probs(probs)
    z = wm.sample(dist, np.random.default_rng(0), temperature=0.0)
    z = z.data.reshape(1, 2, 4)
    assert z[0, 0].argmax() == 1 and z[0, 1].argmax() == 2


def test_sample_forward_exactly_onehot(wm):
    h = Tensor(RNG.standard_normal((5, wm.cfg.deter)).astype(np.float32))
    z = wm.sample(wm.prior(h), np.random.default_rng(0)).data
    zz = z.reshape(5, wm.cfg.groups, wm.cfg.classes)
    assert set(np.unique(zz)) <= {0.0, 1.0}
    assert np.array_equal(zz.sum(-1), np.ones((5, wm.cfg.groups)))


def test_sample_frequencies_match_probs(wm):
    probs = np.array([[[0.5, 0.25, 0.15, 0.1]]])
    dist = CategoricalDist.from_probs(probs)
    rng = np.random.default_rng(0)
    n = 10_000
    counts = np.zeros(4)
    for _ in range(n):
        counts += wm.sample(dist, rng).data.reshape(4)
    for c in range(4):
        p = probs[0, 0, c]
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(counts[c] - n * p) < 3 * sigma


def test_straight_through_gradient_equals_soft_path(wm):
    logits = Tensor(RNG.standard_normal((1, 2, 4)), requires_grad=True)
    dist = CategoricalDist.from_logits(logits)
    w = RNG.standard_normal((8, 1))
    z = wm.sample(dist, np.random.default_rng(0))
    ad.tsum(ad.matmul(z, Tensor(w))).backward()
    g_st = logits.grad.copy()
    logits2 = Tensor(logits.data.copy(), requires_grad=True)
    soft = ad.reshape(ad.texp(ad.log_softmax(logits2, axis=-1)), (1, 8))
    ad.tsum(ad.matmul(soft, Tensor(w))).backward()
    # for a linear readout the straight-through gradient equals the soft path
    np.testing.assert_allclose(g_st, logits2.grad, rtol=1e-6, atol=1e-9)


# -- KL ---------------------------------------------------------------------------------


def test_kl_identity_is_zero(wm):
    logits = Tensor(RNG.standard_normal((4, 2, 4)))
    q = CategoricalDist.from_logits(logits)
    assert abs(float(wm.kl_divergence(q, q).data)) < 1e-7


def test_kl_hand_values():
    q = CategoricalDist.from_probs(np.array([[[0.999, 0.001]]]))
    p = CategoricalDist.from_probs(np.array([[[0.5, 0.5]]]))
    assert float(WorldModel.kl_divergence(q, p).data) == pytest.approx(0.6851, abs=1e-3)
    assert float(WorldModel.kl_divergence(p, q).data) == pytest.approx(2.7612, abs=1e-3)


def test_kl_nonnegative_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(200):
        q = CategoricalDist.from_logits(Tensor(rng.standard_normal((1, 3, 5))))
        p = CategoricalDist.from_logits(Tensor(rng.standard_normal((1, 3, 5))))
        assert float(WorldModel.kl_divergence(q, p).data) >= 0.0


def test_kl_shape_mismatch(wm):
    q = CategoricalDist.from_probs(np.ones((1, 2, 3)) / 3)
    p = CategoricalDist.from_probs(np.ones((1, 2, 4)) / 4)
    with pytest.raises(ValueError):
        wm.kl_divergence(q, p)


# -- decode / observe ---------------------------------------------------------------------


def test_decode_shape(wm):
    s = wm.initial_state(2, np.random.default_rng(0))
    x = wm.decode(s)
    assert x.shape == (2, 16, 16, 3)
    assert float(np.mean((x.data - x.data) ** 2)) == 0.0


def test_untrained_decode_mse_near_pixel_variance(small_unlabeled_store):
    frames = np.concatenate(
        [small_unlabeled_store.read_frames(i) for i in small_unlabeled_store.episode_ids]
    )
    baseline = pixel_variance_baseline(frames)
    wm = WorldModel(tiny_wm_config(), seed=0)
    rng = np.random.default_rng(0)
    x = frames[:8].astype(np.float32) / 255.0
    h = Tensor(np.zeros((8, wm.cfg.deter), dtype=np.float32))
    z = wm.sample(wm.posterior(h, x), rng)
    xhat = wm.decode(RSSMState(h, z)).data
    mse = float(np.mean((xhat - x) ** 2))
    # same order of magnitude as the constant-predictor oracle
    assert 0.2 * baseline < mse < 5.0 * baseline


def test_observe_sequence_losses(wm):
    frames = _frames(b=2, t=4)
    chunk = Tensor(RNG.uniform(-1, 1, (2, 3, 7)).astype(np.float32), requires_grad=True)
    states, losses = wm.observe_sequence(frames, chunk, np.random.default_rng(0))
    assert len(states) == 3
    assert len(losses.step_recon) == 3 and len(losses.step_kl) == 3
    assert losses.kl >= 0 and losses.kl_raw >= 0
    assert losses.total_value == pytest.approx(losses.recon + losses.beta * losses.kl, rel=1e-6)
    # free-bits floor: clamped kl >= groups * free_bits per step
    assert losses.kl >= 3 * wm.cfg.groups * wm.cfg.free_bits - 1e-5


def test_observe_sequence_ten_targets():
    wm = WorldModel(tiny_wm_config(hw=8), seed=0)
    frames = RNG.random((1, 11, 8, 8, 3)).astype(np.float32)
    chunk = Tensor(RNG.uniform(-1, 1, (1, 10, 7)).astype(np.float32))
    _, losses = wm.observe_sequence(frames, chunk, np.random.default_rng(0))
    assert len(losses.step_recon) == 10  # reconstruction targets x_{t+1..t+10}


def test_observe_sequence_length_mismatch(wm):
    frames = _frames(b=1, t=4)
    chunk = Tensor(np.zeros((1, 5, 7), dtype=np.float32))
    with pytest.raises(ValueError):
        wm.observe_sequence(frames, chunk, np.random.default_rng(0))


def test_observe_grad_wrt_chunk_matches_fd():
    wmd = WorldModel(tiny_wm_config(hw=8, dtype="float64"), seed=0)
    frames = RNG.random((1, 3, 8, 8, 3))
    chunk = Tensor(RNG.uniform(-0.5, 0.5, (1, 2, 7)), requires_grad=True)

    def loss():
        chunk.grad = None
        _, losses = wmd.observe_sequence(frames, chunk, np.random.default_rng(5),
                                         sample_mode="soft")
        return losses.total

    worst = fd_gradcheck(loss, [chunk], np.random.default_rng(2), eps=1e-6, n_per_param=10)
    assert worst < 1e-4


def test_gradient_flows_into_policy():
    pol = Policy(tiny_policy_config(), seed=0)
    wm = WorldModel(tiny_wm_config(), seed=0)
    frames = _frames(b=2, t=4)
    chunk = pol.forward_latent(frames[:, 0], ["x", "y"])
    _, losses = wm.observe_sequence(frames, chunk, np.random.default_rng(0))
    pol.params.zero_grad()
    losses.total.backward()
    norm = np.sqrt(sum(float((t.grad ** 2).sum()) for t in pol.params.values() if t.grad is not None))
    assert norm > 0.0


def test_decode_from_prior_flag():
    wm = WorldModel(tiny_wm_config(decode_from="prior"), seed=0)
    frames = _frames(b=1, t=3)
    chunk = Tensor(np.zeros((1, 2, 7), dtype=np.float32))
    _, losses = wm.observe_sequence(frames, chunk, np.random.default_rng(0))
    assert np.isfinite(losses.total_value)


# -- imagination ---------------------------------------------------------------------------


def test_imagine_rollout_contract(wm):
    start = wm.initial_state(2, np.random.default_rng(0))
    chunk = RNG.uniform(-1, 1, (2, 4, 7)).astype(np.float32)
    r1 = wm.imagine_rollout(start, chunk, np.random.default_rng(3))
    r2 = wm.imagine_rollout(start, chunk, np.random.default_rng(3))
    assert r1.shape == (2, 4, 16, 16, 3)
    assert np.array_equal(r1, r2)
    r3 = wm.imagine_rollout(start, chunk, np.random.default_rng(4))
    assert not np.array_equal(r1, r3)


def test_config_presets():
    small = wm_config("small")
    medium = wm_config("medium")
    large = wm_config("large")
    assert small.deter < medium.deter < large.deter
    assert wm_config("small", deter=99).deter == 99  # explicit override wins
    with pytest.raises(ValueError):
        wm_config("gigantic")
    with pytest.raises(ValueError):
        wm_config("small", decode_from="both")
