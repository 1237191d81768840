import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from egoheight.nncore import (
    Adam,
    SGD,
    ModelFileError,
    Network,
    ShapeError,
    conv2d_forward,
    conv3d_backward,
    conv3d_forward,
    gradcheck,
    layers as L,
    load_model,
    maxpool_backward,
    maxpool_forward,
    mse_loss,
    save_model,
    softmax_cross_entropy,
)
from egoheight.nncore.ops import conv_out_dim
from egoheight.nncore.serialize import load_model_bytes, model_bytes


def brute_conv3d(x, w, b, stride):
    """Direct nested-loop valid correlation (independent of the FFT path)."""
    B, H, W, D = x.shape
    K, kh, kw, kd = w.shape
    sh, sw, sd = stride
    oh, ow, od = (H - kh) // sh + 1, (W - kw) // sw + 1, (D - kd) // sd + 1
    y = np.empty((B, oh, ow, od, K))
    for i, j, k in itertools.product(range(oh), range(ow), range(od)):
        patch = x[:, i * sh : i * sh + kh, j * sw : j * sw + kw, k * sd : k * sd + kd]
        y[:, i, j, k, :] = np.einsum("bxyz,kxyz->bk", patch, w) + b
    return y


class TestConv3d:
    @settings(max_examples=25, deadline=None)
    @given(
        dims=st.tuples(st.integers(4, 9), st.integers(4, 9), st.integers(4, 12)),
        kern=st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5)),
        stride=st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4)),
        seed=st.integers(0, 10_000),
    )
    def test_matches_direct_loops(self, dims, kern, stride, seed):
        r = np.random.default_rng(seed)
        x = r.standard_normal((2,) + dims)
        w = r.standard_normal((3,) + kern)
        b = r.standard_normal(3)
        y, _ = conv3d_forward(x, w, b, stride)
        np.testing.assert_allclose(y, brute_conv3d(x, w, b, stride), rtol=1e-10, atol=1e-10)

    def test_temporal_first_layer_shape(self, rng):
        x = rng.uniform(size=(1, 32, 32, 120)).astype(np.float32)
        w = rng.uniform(size=(30, 17, 17, 20)).astype(np.float32)
        y, _ = conv3d_forward(x, w, np.zeros(30, np.float32), (2, 2, 4))
        assert y.shape == (1, 8, 8, 26, 30)
        assert y.dtype == np.float32

    def test_backward_is_adjoint(self, rng):
        # <conv(x), dy> is bilinear: its derivatives are the backward outputs
        x = rng.standard_normal((2, 7, 6, 9))
        w = rng.standard_normal((2, 3, 2, 4))
        b = rng.standard_normal(2)
        y, cache = conv3d_forward(x, w, b, (2, 1, 2))
        dy = rng.standard_normal(y.shape)
        dx, dw, db = conv3d_backward(cache, dy)
        y0, _ = conv3d_forward(x, w, np.zeros(2), (2, 1, 2))
        assert np.isclose(np.sum(y0 * dy), np.sum(x * dx))
        assert np.isclose(np.sum(y0 * dy), np.sum(w * dw))
        np.testing.assert_allclose(db, dy.sum(axis=(0, 1, 2, 3)))

    def test_skip_input_gradient(self, rng):
        x = rng.standard_normal((1, 5, 5, 5))
        y, cache = conv3d_forward(x, rng.standard_normal((1, 2, 2, 2)), np.zeros(1), (1, 1, 1))
        dx, dw, _ = conv3d_backward(cache, np.ones_like(y), need_dx=False)
        assert dx is None and dw.shape == (1, 2, 2, 2)


def test_conv2d_matches_scipy(rng):
    x = rng.standard_normal((2, 7, 8, 3))
    w = rng.standard_normal((4, 3, 2, 3))
    b = rng.standard_normal(4)
    y, _ = conv2d_forward(x, w, b)
    for n, k in itertools.product(range(2), range(4)):
        ref = sum(signal.correlate2d(x[n, :, :, c], w[k, :, :, c], mode="valid") for c in range(3)) + b[k]
        np.testing.assert_allclose(y[n, :, :, k], ref, atol=1e-12)


def test_maxpool_matches_reshape_max(rng):
    x = rng.standard_normal((2, 8, 8, 26, 3))
    y, cache = maxpool_forward(x, (2, 2, 13))
    ref = x.reshape(2, 4, 2, 4, 2, 2, 13, 3).max(axis=(2, 4, 6))
    np.testing.assert_array_equal(y, ref)
    dx = maxpool_backward(cache, np.ones_like(y))
    # exactly one winner per window receives the gradient
    assert dx.sum() == y.size
    np.testing.assert_array_equal(dx.reshape(2, 4, 2, 4, 2, 2, 13, 3).sum(axis=(2, 4, 6)), 1.0)


def test_conv_out_dim():
    assert conv_out_dim(32, 17, 2) == 8
    assert conv_out_dim(120, 20, 4) == 26
    assert conv_out_dim(60, 10, 2) == 26
    with pytest.raises(ShapeError):
        conv_out_dim(3, 5, 1)


class TestLayers:
    def test_batchnorm_train_normalizes_and_updates_stats(self, rng):
        net = Network([L.batchnorm(momentum=0.1)], (3,)).init(0, np.float64)
        x = rng.normal(5.0, 2.0, (64, 3))
        y, _ = net.forward(x, training=True)
        np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-10)
        np.testing.assert_allclose(y.var(axis=0), 1, atol=1e-3)
        np.testing.assert_allclose(net.state[0]["running_mean"], 0.1 * x.mean(axis=0))
        np.testing.assert_allclose(net.state[0]["running_var"], 0.9 + 0.1 * x.var(axis=0))

    def test_batchnorm_needs_two_samples_in_training(self):
        net = Network([L.batchnorm()], (3,)).init(0)
        with pytest.raises(ValueError):
            net.forward(np.ones((1, 3), np.float32), training=True)

    def test_elu_and_relu_values(self):
        x = np.array([[-2.0, 0.0, 3.0]])
        relu = Network([L.relu()], (3,))
        elu = Network([L.elu()], (3,))
        np.testing.assert_allclose(relu.forward(x)[0], [[0, 0, 3]])
        np.testing.assert_allclose(elu.forward(x)[0], [[np.expm1(-2.0), 0, 3]])

    def test_softmax_rows_sum_to_one(self, rng):
        y = L.softmax_fn(rng.standard_normal((5, 4)) * 50)
        np.testing.assert_allclose(y.sum(axis=1), 1.0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            L.LayerSpec("lstm")

    def test_spec_json_round_trip(self):
        spec = L.conv3d(30, (17, 17, 20), (2, 2, 4))
        assert L.LayerSpec.from_json(spec.to_json()) == spec

    def test_he_init_bound(self):
        net = Network([L.conv3d(30, (17, 17, 20), (2, 2, 4))], (32, 32, 120)).init(0)
        assert net.n_params() == 173_430
        assert np.abs(net.params[0]["w"]).max() <= np.sqrt(6 / (17 * 17 * 20))
        assert not net.params[0]["b"].any()


class TestNetwork:
    def test_shape_error_names_layer(self):
        with pytest.raises(ShapeError, match="layer 2"):
            Network([L.dense(4), L.relu(), L.reshape((3,))], (5,))

    def test_wrong_input_shape(self):
        net = Network([L.dense(2)], (4,)).init(0)
        with pytest.raises(ShapeError):
            net.forward(np.zeros((3, 5), np.float32))

    def test_truncated_shares_parameters(self):
        net = Network([L.dense(4), L.relu(), L.dense(1)], (3,)).init(0)
        head = net.truncated(2)
        head.params[0]["w"][0, 0] = 42.0
        assert net.params[0]["w"][0, 0] == 42.0

    def test_copy_is_independent(self):
        net = Network([L.dense(2)], (3,)).init(0)
        cp = net.copy()
        cp.params[0]["w"][...] = 0
        assert net.params[0]["w"].any()


class TestLosses:
    def test_mse_value_and_gradient(self):
        pred = np.array([[1.0], [3.0]])
        target = np.array([[0.0], [1.0]])
        loss, d = mse_loss(pred, target)
        assert loss == pytest.approx(2.5)
        np.testing.assert_allclose(d, [[1.0], [2.0]])

    def test_softmax_ce_against_log_softmax(self, rng):
        logits = rng.standard_normal((4, 3))
        labels = np.array([0, 2, 1, 2])
        loss, d = softmax_cross_entropy(logits, labels)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        assert loss == pytest.approx(-logp[np.arange(4), labels].mean())
        np.testing.assert_allclose(d.sum(axis=1), 0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((2, 1)), np.zeros((2,)))


class TestOptimizers:
    def test_adam_first_step_is_lr_times_sign(self):
        p = np.array([1.0, -2.0, 0.5])
        g = np.array([0.3, -4.0, 1e-3])
        Adam(lr=0.01).step([p], [g])
        np.testing.assert_allclose(p, [0.99, -1.99, 0.49], atol=1e-6)

    def test_sgd_step(self):
        p = np.array([1.0, 2.0])
        SGD(lr=0.5).step([p], [np.array([2.0, -2.0])])
        np.testing.assert_allclose(p, [0.0, 3.0])

    def test_adam_shape_check(self):
        opt = Adam()
        opt.step([np.zeros(3)], [np.zeros(3)])
        with pytest.raises(ValueError):
            opt.step([np.zeros(4)], [np.zeros(4)])


class TestGradcheck:
    def test_passes_on_correct_network(self, rng):
        net = Network([L.dense(4), L.elu(), L.dense(1), L.linear_out()], (3,)).init(0)
        rep = gradcheck(net, rng.standard_normal((2, 3)))
        assert rep.passed and rep.max_rel_err < 1e-6
        assert "dense" in rep.format_table()

    def test_detects_wrong_gradient(self, rng, monkeypatch):
        original = L.backward

        def broken(spec, params, cache, dy, need_dx=True):
            dx, grads = original(spec, params, cache, dy, need_dx)
            if spec.kind == "dense":
                grads = {k: v * 1.01 for k, v in grads.items()}
            return dx, grads

        monkeypatch.setattr(L, "backward", broken)
        net = Network([L.dense(3), L.dense(1)], (2,)).init(0)
        rep = gradcheck(net, rng.standard_normal((2, 2)))
        assert not rep.passed
        assert 0 in rep.per_layer() and rep.per_layer()[0] > 1e-3


class TestSerialize:
    def _net(self):
        return Network([L.dense(3), L.batchnorm(), L.elu(), L.dense(1)], (4,)).init(5)

    def test_round_trip(self, tmp_path):
        net = self._net()
        net.state[1]["running_mean"][...] = [1, 2, 3]
        path = save_model(tmp_path / "m.egm", {"arch": "x"}, (85.0, 188.0), {"main": net})
        meta, scale, nets = load_model(path)
        assert meta == {"arch": "x"} and scale == (85.0, 188.0)
        got = nets["main"]
        assert got.specs == net.specs
        for (i, n, a), (j, m, b) in zip(net.named_arrays(), got.named_arrays()):
            assert (i, n) == (j, m)
            np.testing.assert_array_equal(a, b)
            assert a.dtype == b.dtype

    def test_deterministic_bytes(self):
        assert model_bytes({}, (0, 1), {"main": self._net()}) == model_bytes({}, (0, 1), {"main": self._net()})

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda b: b"XXXX" + b[4:],
            lambda b: b[:4] + b"\x09\x00" + b[6:],
            lambda b: b[:-3],
            lambda b: b + b"\x00",
        ],
        ids=["magic", "version", "truncated", "trailing"],
    )
    def test_corrupt_files_rejected(self, mutate):
        data = model_bytes({}, (0, 1), {"main": self._net()})
        with pytest.raises(ModelFileError):
            load_model_bytes(mutate(data))
