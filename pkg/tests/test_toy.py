import json

import numpy as np
import pytest

from scenforge.checks import euler_gaussian_factor, gradient_check, run_edm_checks
from scenforge.edm import SigmaSchedule, coeffs, dsm_loss
from scenforge.toy import (DenoiserParams, GaussianData, GaussianMixture, TrainingDiverged,
                           forward_backward, make_denoiser, sample_model, train)


def test_gradient_matches_central_differences():
    assert gradient_check(configs=5) <= 1e-4


def test_zero_output_layer_gives_bias():
    p = DenoiserParams.init(np.random.default_rng(0))
    q = p.with_theta(p.theta.copy())
    _, _, W2q, b2q = q.unpack()  # views into q.theta
    W2q[:] = 0.0
    b2q[:] = [1.0, -2.0]
    y = np.random.default_rng(1).standard_normal((6, 2))
    sig = np.linspace(0.1, 3.0, 6)
    c = coeffs(sig)
    want = c.c_skip[:, None] * y + c.c_out[:, None] * np.array([1.0, -2.0])
    assert np.allclose(make_denoiser(q)(y, sig), want, rtol=1e-15)
    # with W2 = 0 nothing flows back through tanh; one update later it does
    n = np.random.default_rng(2).standard_normal((6, 2)) * sig[:, None]
    _, _, g = forward_backward(q, y, n, sig)
    k1 = 32 * 3 + 32
    assert not g[:k1].any() and g[k1:].any()
    _, _, g2 = forward_backward(q.with_theta(q.theta - 0.02 * g), y, n, sig)
    assert np.abs(g2[:32 * 3]).max() > 0


def test_forward_matches_dsm_loss():
    """The hand-written forward pass agrees with the generic loss on the same draws."""
    p = DenoiserParams.init(np.random.default_rng(2))
    y = np.random.default_rng(3).standard_normal((64, 2))
    rng = np.random.default_rng(4)
    loss, per = dsm_loss(make_denoiser(p), y, rng)
    rng = np.random.default_rng(4)
    sig = np.exp(-1.2 + 1.2 * rng.standard_normal(64))
    n = rng.standard_normal(y.shape) * sig[:, None]
    _, loss2, _ = forward_backward(p, y, n, sig)
    assert loss == pytest.approx(loss2, rel=1e-12)


def test_duplicated_batch_same_loss_and_gradient():
    p = DenoiserParams.init(np.random.default_rng(5))
    rng = np.random.default_rng(6)
    y = rng.standard_normal((8, 2))
    sig = np.exp(rng.standard_normal(8))
    n = rng.standard_normal((8, 2)) * sig[:, None]
    _, l1, g1 = forward_backward(p, y, n, sig)
    _, l2, g2 = forward_backward(p, np.tile(y, (3, 1)), np.tile(n, (3, 1)), np.tile(sig, 3))
    assert l1 == pytest.approx(l2, rel=1e-12) and np.allclose(g1, g2, rtol=1e-10, atol=1e-14)


def test_zero_learning_rate_keeps_eval_loss():
    res = train(steps=5, lr=0.0, batch=32, eval_size=64)
    assert len(res.eval_loss) == 6 and len(set(res.eval_loss)) == 1


def test_training_reduces_loss_short_run():
    res = train(steps=200, batch=256, eval_size=1024)
    assert res.eval_loss[-1] < 0.8 * res.eval_loss[0]
    assert res.train_loss == train(steps=200, batch=256, eval_size=1024).train_loss


def test_divergence_raises():
    with pytest.raises(TrainingDiverged) as ei:
        train(steps=100, lr=1e6, batch=64, eval_size=64)
    assert 0 <= ei.value.step < 100


def test_train_validates_steps():
    with pytest.raises(ValueError):
        train(steps=0)


def test_mixture_data():
    gm = GaussianMixture()
    x = gm.draw(np.random.default_rng(0), 40_000)
    assert x.shape == (40_000, 2)
    assert np.mean(x[:, 0] > 0) == pytest.approx(0.5, abs=0.01)
    assert x[x[:, 0] > 0, 0].mean() == pytest.approx(2.0, abs=0.02)
    for bad in ({"s": 0.0}, {"weights": (0.7, 0.7)}, {"means": ((0, 0),)}):
        with pytest.raises(ValueError):
            GaussianMixture(**bad)
    res = train(gm, steps=100, batch=256, eval_size=512)
    assert res.eval_loss[-1] < res.eval_loss[0]


def test_gaussian_data_validation():
    with pytest.raises(ValueError):
        GaussianData(s=-1.0)
    x = GaussianData().draw(np.random.default_rng(0), 100_000)
    assert np.allclose(x.mean(axis=0), [3.0, -1.0], atol=0.01)


def test_params_json_round_trip():
    p = DenoiserParams.init(np.random.default_rng(0))
    q = DenoiserParams.from_json(json.loads(json.dumps(p.to_json())))
    assert np.array_equal(p.theta, q.theta) and q.size == len(q.theta) == 32 * 3 + 32 + 64 + 2
    bad = p.to_json()
    bad["theta"] = bad["theta"][:-1]
    with pytest.raises(ValueError):
        DenoiserParams.from_json(bad)


def test_sample_model_shape_and_determinism():
    p = DenoiserParams.init(np.random.default_rng(0))
    a = sample_model(p, 50, seed=1, schedule=SigmaSchedule(steps=10))
    assert a.shape == (50, 2) and np.array_equal(a, sample_model(p, 50, 1, SigmaSchedule(steps=10)))


def test_euler_factor_matches_direct_recursion():
    sched = SigmaSchedule()
    sig = sched.sigmas()
    D = lambda y, s: (0.25 * y + s * s * 3.0) / (0.25 + s * s)
    y = 1.0 + 3.0
    for a, b in zip(sig[:-1], sig[1:]):
        y = y + (b - a) * (y - D(y, a)) / a
    assert (y - 3.0) == pytest.approx(euler_gaussian_factor(sig, 0.5), rel=1e-10)


def test_edm_checks_default_and_fault():
    rows = run_edm_checks(draws=4000)
    gating = [r for r in rows if r.gating]
    assert all(r.passed for r in gating), [r for r in gating if not r.passed]
    faulty = {r.name: r.passed for r in run_edm_checks(noise_scale=0.5, draws=1000)}
    assert not faulty["exp(4 c_noise) = sigma"]
