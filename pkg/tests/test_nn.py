import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dqe.errors import DataError, TrainingDivergedError
from dqe.nn import (
    AdaBelief,
    Architecture,
    EmulatorNet,
    NormalizationStats,
    TrainConfig,
    adabelief_step,
    backward,
    forward,
    mish,
    mse_loss,
    predict,
    train,
)
from dqe.nn.layers import batchnorm_backward, batchnorm_train, mish_with_grad
from dqe.selftest import gradient_check_error


def softplus(x):
    return np.logaddexp(0.0, x)


# --- layers -----------------------------------------------------------------

def test_mish_matches_definition():
    x = np.linspace(-30, 30, 601)
    np.testing.assert_allclose(mish(x), x * np.tanh(softplus(x)), rtol=1e-14, atol=1e-300)
    y, dy = mish_with_grad(x)
    np.testing.assert_allclose(y, x * np.tanh(softplus(x)), rtol=1e-14, atol=1e-300)
    h = 1e-6
    fd = (mish(x + h) - mish(x - h)) / (2 * h)
    np.testing.assert_allclose(dy, fd, rtol=1e-7, atol=1e-8)


def test_mish_extreme_inputs_are_finite():
    x = np.array([-1e4, -800.0, 800.0, 1e4])
    y, dy = mish_with_grad(x)
    assert np.all(np.isfinite(y)) and np.all(np.isfinite(dy))
    np.testing.assert_array_equal(y[2:], x[2:])


def test_batchnorm_training_statistics():
    rng = np.random.default_rng(0)
    x = rng.normal(3.0, 5.0, size=(257, 6))
    out, (xhat, _), mean, var = batchnorm_train(x, np.ones(6), np.zeros(6), 1e-5)
    assert np.max(np.abs(xhat.mean(axis=0))) < 1e-7
    assert np.max(np.abs(xhat.var(axis=0) - 1)) < 1e-5
    np.testing.assert_allclose(mean, x.mean(axis=0), rtol=1e-13)
    np.testing.assert_allclose(var, x.var(axis=0), rtol=1e-12)


def test_batchnorm_backward_matches_reference_formula():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(33, 5))
    scale, shift = rng.normal(size=5), rng.normal(size=5)
    dout = rng.normal(size=(33, 5))
    _, cache, _, _ = batchnorm_train(x, scale, shift, 1e-5)
    dx, dscale, dshift = batchnorm_backward(dout, cache, scale)
    xhat, inv_std = cache
    B = x.shape[0]
    dxhat = dout * scale
    ref = (inv_std / B) * (B * dxhat - dxhat.sum(0) - xhat * (dxhat * xhat).sum(0))
    np.testing.assert_allclose(dx, ref, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(dscale, (dout * xhat).sum(0), rtol=1e-12)
    np.testing.assert_allclose(dshift, dout.sum(0), rtol=1e-12)


# --- model ------------------------------------------------------------------

def tiny_net(seed=0, dtype=np.float64, **arch):
    arch = {"n_features": 3, "width": 4, "n_blocks": 2, **arch}
    return EmulatorNet(Architecture(**arch), seed=seed, dtype=dtype)


def test_glorot_initialization():
    net = EmulatorNet(seed=3, dtype=np.float64)
    W = net.params["block0.fc1.W"]
    limit = math.sqrt(6 / 128)
    assert np.all(np.abs(W) <= limit) and W.std() == pytest.approx(limit / math.sqrt(3), rel=0.05)
    assert np.all(net.params["block0.fc1.b"] == 0)
    assert np.all(net.params["block0.bn1.scale"] == 1) and np.all(net.params["block0.bn1.shift"] == 0)


def test_residual_blocks_are_identity_with_zero_transform():
    net = tiny_net(seed=2, n_blocks=3)
    for name in net.params:
        if ".fc" in name or "shift" in name:
            net.params[name][...] = 0
    net.touch()
    x = np.random.default_rng(0).normal(size=(5, 3))
    P = net.params
    h = x @ P["proj.W"].T + P["proj.b"]
    expected = h @ P["head.W"].T + P["head.b"]
    for training in (False, True):
        y, _ = forward(net, x, training=training)
        np.testing.assert_allclose(y, expected, rtol=1e-14, atol=1e-15)


def test_hand_coded_forward_tiny_net():
    net = EmulatorNet(Architecture(n_features=2, width=3, n_blocks=1), seed=5, dtype=np.float64)
    rng = np.random.default_rng(5)
    for p in net.params.values():
        p += rng.normal(size=p.shape)
    net.buffers["block0.bn1.running_mean"][:] = [0.1, -0.2, 0.3]
    net.buffers["block0.bn1.running_var"][:] = [1.5, 0.5, 2.0]
    net.touch()
    x = rng.normal(size=(4, 2))
    P, Bf = net.params, net.buffers

    def bn(h, k, train):
        name = f"block0.bn{k}"
        if train:
            mu, var = h.mean(0), h.var(0)
        else:
            mu, var = Bf[f"{name}.running_mean"], Bf[f"{name}.running_var"]
        return (h - mu) / np.sqrt(var + 1e-5) * P[f"{name}.scale"] + P[f"{name}.shift"]

    def hand(train):
        h0 = x @ P["proj.W"].T + P["proj.b"]
        a = bn(h0, 1, train)
        h = (a * np.tanh(softplus(a))) @ P["block0.fc1.W"].T + P["block0.fc1.b"]
        a = bn(h, 2, train)
        h = (a * np.tanh(softplus(a))) @ P["block0.fc2.W"].T + P["block0.fc2.b"] + h0
        return h @ P["head.W"].T + P["head.b"]

    np.testing.assert_allclose(forward(net, x, training=False)[0], hand(False), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(forward(net, x, training=True)[0], hand(True), rtol=1e-12, atol=1e-12)


def test_running_statistics_update():
    net = tiny_net()
    x = np.random.default_rng(0).normal(2.0, 3.0, size=(50, 3))
    P = net.params
    h = x @ P["proj.W"].T + P["proj.b"]
    forward(net, x, training=True)
    np.testing.assert_allclose(net.buffers["block0.bn1.running_mean"], 0.1 * h.mean(0), rtol=1e-12)
    np.testing.assert_allclose(net.buffers["block0.bn1.running_var"], 0.9 + 0.1 * h.var(0, ddof=1),
                               rtol=1e-12)


def test_inference_is_pure_and_repeatable():
    net = tiny_net(seed=4)
    x = np.random.default_rng(1).normal(size=(9, 3))
    before = {k: v.copy() for k, v in {**net.params, **net.buffers}.items()}
    y1, y2 = predict(net, x), predict(net, x)
    np.testing.assert_array_equal(y1, y2)
    for k, v in {**net.params, **net.buffers}.items():
        np.testing.assert_array_equal(v, before[k])


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_predict_matches_row_by_row(dtype):
    net = EmulatorNet(seed=7, dtype=dtype)
    x = np.random.default_rng(2).normal(size=(300, 10)) * 20
    forward(net, x[:64], training=True)  # non-trivial running statistics
    net.touch()
    full = predict(net, x)
    rows = np.array([predict(net, x[i:i + 1])[0] for i in range(x.shape[0])])
    np.testing.assert_array_equal(full, rows)
    y, _ = forward(net, x, training=False)
    np.testing.assert_array_equal(full, y[:, 0].astype(np.float64) * net.stats.target_std
                                  + net.stats.target_mean)


def test_zero_features_give_constant_bias_response():
    net = EmulatorNet(seed=1)
    net.set_stats(NormalizationStats(np.zeros(10), np.ones(10), 0.3, 2.0))
    out = predict(net, np.zeros((17, 10)))
    assert np.all(out == out[0])
    assert out[0] == predict(net, np.zeros((1, 10)))[0]


def test_predict_rejects_wrong_width():
    with pytest.raises(ValueError, match="feature width"):
        predict(EmulatorNet(), np.zeros((3, 9)))


def test_training_batch_of_one_rejected():
    with pytest.raises(ValueError):
        forward(tiny_net(), np.zeros((1, 3)), training=True)


def test_stale_cache_and_inference_cache_rejected():
    net = tiny_net()
    x = np.random.default_rng(0).normal(size=(6, 3))
    y, cache = forward(net, x, training=True)
    net.touch()
    with pytest.raises(ValueError, match="stale"):
        backward(net, cache, np.ones_like(y))
    _, cache = forward(net, x, training=False)
    with pytest.raises(ValueError):
        backward(net, cache, np.ones_like(y))


def test_zero_loss_gradient_gives_zero_gradients():
    net = tiny_net()
    x = np.random.default_rng(0).normal(size=(6, 3))
    y, cache = forward(net, x, training=True)
    grads = backward(net, cache, np.zeros_like(y))
    assert set(grads) == set(net.params)
    for g in grads.values():
        assert not np.any(g)


def test_gradient_check_all_parameters():
    assert gradient_check_error(seed=0) < 1e-4


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(1, 10_000))
def test_gradient_check_random_networks(seed):
    assert gradient_check_error(seed=seed) < 1e-4


def test_skip_path_contributes_identity():
    """With linear transforms removed, d loss / d proj.W equals that of head(proj(x))."""
    net = tiny_net(seed=3)
    for name in net.params:
        if ".fc" in name:
            net.params[name][...] = 0
    net.touch()
    rng = np.random.default_rng(1)
    x, t = rng.normal(size=(8, 3)), rng.normal(size=(8, 1))
    y, cache = forward(net, x, training=True)
    _, dy = mse_loss(y, t)
    grads = backward(net, cache, dy)
    P = net.params
    expected = (dy @ P["head.W"]).T @ x
    np.testing.assert_allclose(grads["proj.W"], expected, rtol=1e-12, atol=1e-14)


def test_normalization_stats_reject_degenerate_std():
    with pytest.raises(DataError):
        NormalizationStats(np.zeros(2), np.array([1.0, 0.0]), 0.0, 1.0)
    with pytest.raises(DataError):
        NormalizationStats(np.zeros(2), np.ones(2), 0.0, 0.0)


# --- optimizer ----------------------------------------------------------------

def test_adabelief_scalar_trace():
    # m = 0.1, s = 0.001 * 0.9^2 + 1e-16, m_hat = 1, s_hat = 0.81 + 1e-13,
    # theta = -0.1 / (sqrt(0.81 + 1e-13) + 1e-16)
    theta = {"w": np.zeros(1)}
    adabelief_step(theta, {"w": np.ones(1)}, AdaBelief(), lr=0.1)
    assert abs(theta["w"][0] - (-0.11111111111110426)) < 1e-12
    assert abs(theta["w"][0] - (-0.1 / (math.sqrt(0.81 + 1e-13) + 1e-16))) < 1e-12


def test_adabelief_zero_gradient_keeps_parameters():
    theta = {"w": np.array([1.0, -2.0])}
    AdaBelief().step(theta, {"w": np.zeros(2)}, lr=1.0)
    np.testing.assert_array_equal(theta["w"], [1.0, -2.0])


def test_adabelief_identical_gradients_give_identical_updates():
    theta = {"a": np.array([0.5]), "b": np.array([0.5])}
    opt = AdaBelief()
    rng = np.random.default_rng(0)
    for _ in range(5):
        g = rng.normal(size=1)
        opt.step(theta, {"a": g.copy(), "b": g.copy()}, lr=0.01)
    assert theta["a"][0] == theta["b"][0]


def test_adabelief_shape_mismatch():
    with pytest.raises(ValueError):
        AdaBelief().step({"w": np.zeros(2)}, {"w": np.zeros(3)}, lr=0.1)


# --- training -----------------------------------------------------------------

def regression_data(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 4))
    y = np.sin(x[:, 0]) + 0.5 * x[:, 1] * x[:, 2]
    return x, y


def test_constant_target_is_learned_quickly():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(512, 3))
    y = np.full(512, 2.5)
    net = EmulatorNet(Architecture(n_features=3, width=8, n_blocks=1), seed=0)
    net.set_stats(NormalizationStats(np.zeros(3), np.ones(3), 0.0, 1.0))
    log = train(net, x, y, cfg=TrainConfig(epochs=50, lr=0.01, batch_size=128))
    assert log.train_loss[-1] < 1e-2 * log.train_loss[0]
    assert np.max(np.abs(predict(net, x) - 2.5)) < 0.25


def test_training_is_bit_reproducible():
    x, y = regression_data()
    finals = []
    for _ in range(2):
        net = EmulatorNet(Architecture(n_features=4, width=16, n_blocks=2), seed=3)
        net.set_stats(NormalizationStats(x.mean(0), x.std(0), y.mean(), y.std()))
        log = train(net, x[:1600], y[:1600], x[1600:], y[1600:],
                    TrainConfig(epochs=5, lr=0.01, batch_size=256, seed=11))
        finals.append((log.final_loss, log.val_loss[-1], predict(net, x[:50]).tobytes()))
    assert finals[0] == finals[1]


def test_training_reduces_loss_and_logs_schedule():
    x, y = regression_data()
    net = EmulatorNet(Architecture(n_features=4, width=16, n_blocks=2), seed=0)
    net.set_stats(NormalizationStats(x.mean(0), x.std(0), y.mean(), y.std()))
    cfg = TrainConfig(epochs=30, lr=0.01, drop_epoch=20, drop_factor=10, batch_size=256)
    log = train(net, x[:1600], y[:1600], x[1600:], y[1600:], cfg)
    assert log.lr[:20] == [0.01] * 20 and log.lr[20:] == [0.001] * 10
    assert log.train_loss[-1] < log.train_loss[0] / 5
    assert len(log.val_loss) == 30 and all(math.isfinite(v) for v in log.val_loss)
    lines = log.to_csv().splitlines()
    assert lines[0] == "epoch,lr,train_loss,val_loss" and len(lines) == 31


def test_divergence_is_reported_with_epoch():
    x = np.random.default_rng(0).normal(size=(64, 3))
    y = np.full(64, 1e4)
    net = EmulatorNet(Architecture(n_features=3, width=4, n_blocks=1))
    net.set_stats(NormalizationStats(np.zeros(3), np.ones(3), 0.0, 1.0))
    with pytest.raises(TrainingDivergedError) as info:
        train(net, x, y, cfg=TrainConfig(epochs=3, batch_size=32))
    assert info.value.epoch == 0


def test_learning_rate_schedule():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.lr, cfg.drop_epoch, cfg.drop_factor) == (2000, 1.0, 1500, 10.0)
    assert cfg.lr_at(1499) == 1.0 and cfg.lr_at(1500) == pytest.approx(0.1)
