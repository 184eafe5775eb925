import math

import numpy as np
import pytest

from cassavaseg import nn
from cassavaseg.errors import InsufficientBatch, MissingGradient, ShapeError
from cassavaseg.nn import Tensor, checkpoint
from cassavaseg.nn.ops import BN_EPS

from helpers import check_op_gradients, conv2d_loop, upconv2d_loop

GRAD_TOL = 1e-2


def _distinct(rng, shape, lo=-2.0, hi=2.0):
    """Values spaced far apart so max/ReLU kinks are not crossed by finite differences."""
    n = int(np.prod(shape))
    vals = np.linspace(lo, hi, n) + 0.01
    return rng.permutation(vals).reshape(shape).astype(np.float32)


class TestConv2d:
    def test_identity_kernel(self):
        x = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
        w = np.zeros((1, 1, 3, 3), np.float32)
        w[0, 0, 1, 1] = 1
        out = nn.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)), padding=1)
        np.testing.assert_array_equal(out.data, x)

    def test_zero_input_gives_bias(self):
        out = nn.conv2d(Tensor(np.zeros((2, 3, 5, 4))), Tensor(np.ones((2, 3, 3, 3))), Tensor([0.5, -1.5]))
        assert (out.data[:, 0] == 0.5).all() and (out.data[:, 1] == -1.5).all()

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 2, 4, 4)).astype(np.float32)
        w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
        b = rng.normal(size=3).astype(np.float32)
        out = nn.conv2d(Tensor(x), Tensor(w), Tensor(b), padding=1)
        np.testing.assert_allclose(out.data, conv2d_loop(x, w, b, 1), atol=1e-5)

    def test_valid_and_1x1(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 6, 5)).astype(np.float32)
        for k, p in [(3, 0), (1, 0), (5, 2)]:
            w = rng.normal(size=(4, 3, k, k)).astype(np.float32)
            out = nn.conv2d(Tensor(x), Tensor(w), None, padding=p)
            np.testing.assert_allclose(out.data, conv2d_loop(x, w, None, p), atol=1e-4)

    @pytest.mark.parametrize("h,w", [(1, 1), (2, 3), (5, 4), (7, 7), (8, 6)])
    def test_padding_one_preserves_size(self, h, w):
        out = nn.conv2d(Tensor(np.ones((1, 2, h, w))), Tensor(np.ones((3, 2, 3, 3))), padding=1)
        assert out.shape == (1, 3, h, w)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            nn.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((3, 4, 3, 3))))

    def test_gradients(self):
        rng = np.random.default_rng(2)
        errs = check_op_gradients(lambda x, w, b: nn.conv2d(x, w, b, padding=1),
                                  [rng.normal(size=(2, 2, 4, 3)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)])
        assert max(errs) < GRAD_TOL, errs


class TestBatchNorm:
    def _bn(self, x, gamma, beta, training=True, rm=None, rv=None):
        c = x.shape[1]
        rm = np.zeros(c, np.float32) if rm is None else rm
        rv = np.ones(c, np.float32) if rv is None else rv
        return nn.batchnorm2d(x, gamma, beta, rm, rv, training)

    def test_train_mode_standardizes(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(3.0, 2.5, size=(4, 3, 5, 5)))
        out = self._bn(x, Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-4)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)

    def test_zero_gamma_gives_beta(self):
        x = Tensor(np.random.default_rng(1).normal(size=(2, 2, 3, 3)))
        out = self._bn(x, Tensor(np.zeros(2)), Tensor([0.25, -4.0])).data
        assert (out[:, 0] == 0.25).all() and (out[:, 1] == -4.0).all()

    def test_eval_mode_scalar_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 3, 2, 2)).astype(np.float32)
        mu = np.array([0.5, -1.0, 2.0], np.float32)
        var = np.array([1.5, 0.25, 4.0], np.float32)
        gamma = np.array([1.0, 2.0, -0.5], np.float32)
        beta = np.array([0.0, 0.1, 3.0], np.float32)
        out = self._bn(Tensor(x), Tensor(gamma), Tensor(beta), False, mu.copy(), var.copy()).data
        for idx in np.ndindex(x.shape):
            c = idx[1]
            expected = (float(x[idx]) - float(mu[c])) / math.sqrt(float(var[c]) + BN_EPS) * float(gamma[c]) + float(beta[c])
            assert out[idx] == pytest.approx(expected, abs=1e-5)

    def test_running_stats_update(self):
        x = np.random.default_rng(3).normal(1.0, 2.0, size=(2, 1, 4, 4)).astype(np.float32)
        rm, rv = np.zeros(1, np.float32), np.ones(1, np.float32)
        nn.batchnorm2d(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, True)
        assert rm[0] == pytest.approx(0.1 * x.mean(), rel=1e-5)
        assert rv[0] == pytest.approx(0.9 + 0.1 * x.var(ddof=1), rel=1e-5)

    def test_insufficient_batch(self):
        with pytest.raises(InsufficientBatch):
            self._bn(Tensor(np.ones((1, 2, 1, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)))

    @pytest.mark.parametrize("training", [True, False])
    def test_gradients(self, training):
        rng = np.random.default_rng(4)
        rm0 = rng.normal(size=2).astype(np.float32)
        rv0 = rng.uniform(0.5, 2, size=2).astype(np.float32)

        def op(x, g, b):
            return nn.batchnorm2d(x, g, b, rm0.copy(), rv0.copy(), training)

        errs = check_op_gradients(op, [rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2), rng.normal(size=2)])
        assert max(errs) < GRAD_TOL, errs


class TestElementwise:
    def test_relu(self):
        assert nn.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]

    def test_relu_gradient(self):
        rng = np.random.default_rng(0)
        assert check_op_gradients(nn.relu, [_distinct(rng, (2, 3, 2, 2))])[0] < GRAD_TOL

    def test_maxpool_block(self):
        x = np.array([[1, 3], [2, 0]], np.float32).reshape(1, 1, 2, 2)
        assert nn.maxpool2d(Tensor(x), 2).data.reshape(-1).tolist() == [3]

    def test_maxpool_tie_goes_to_first(self):
        x = Tensor(np.full((1, 1, 2, 2), 5.0), requires_grad=True)
        out = nn.maxpool2d(x, 2)
        out.backward(np.ones(out.shape, np.float32))
        assert x.grad.reshape(-1).tolist() == [1, 0, 0, 0]

    def test_maxpool_odd_dims(self):
        with pytest.raises(ShapeError):
            nn.maxpool2d(Tensor(np.ones((1, 1, 3, 4))), 2)

    def test_maxpool_gradient(self):
        rng = np.random.default_rng(1)
        assert check_op_gradients(lambda x: nn.maxpool2d(x, 2), [_distinct(rng, (2, 2, 4, 4))])[0] < GRAD_TOL

    def test_softmax_normalizes(self):
        x = Tensor(np.random.default_rng(2).normal(0, 5, size=(3, 4, 5, 6)))
        s = nn.softmax_channels(x).data
        assert (s > 0).all() and (s < 1).all()
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)

    def test_softmax_gradient(self):
        rng = np.random.default_rng(3)
        assert check_op_gradients(nn.softmax_channels, [rng.normal(size=(2, 3, 3, 3))])[0] < GRAD_TOL

    def test_concat(self):
        a, b = Tensor(np.zeros((2, 1, 3, 3))), Tensor(np.ones((2, 2, 3, 3)))
        out = nn.concat_channels(a, b).data
        assert out.shape == (2, 3, 3, 3) and out[:, 0].sum() == 0 and out[:, 1:].min() == 1

    def test_concat_mismatch(self):
        with pytest.raises(ShapeError):
            nn.concat_channels(Tensor(np.zeros((2, 1, 3, 3))), Tensor(np.zeros((2, 1, 4, 3))))

    def test_concat_gradient(self):
        rng = np.random.default_rng(4)
        errs = check_op_gradients(nn.concat_channels, [rng.normal(size=(1, 2, 2, 3)), rng.normal(size=(1, 3, 2, 3))])
        assert max(errs) < GRAD_TOL


class TestUpconv:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 2, 2, 2)).astype(np.float32)
        w = rng.normal(size=(2, 1, 2, 2)).astype(np.float32)
        out = nn.upconv2d(Tensor(x), Tensor(w))
        assert out.shape == (1, 1, 4, 4)
        np.testing.assert_allclose(out.data, upconv2d_loop(x, w), atol=1e-5)

    def test_halves_channels_with_bias(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 4, 3, 2)).astype(np.float32)
        w = rng.normal(size=(4, 2, 2, 2)).astype(np.float32)
        b = rng.normal(size=2).astype(np.float32)
        out = nn.upconv2d(Tensor(x), Tensor(w), Tensor(b))
        assert out.shape == (2, 2, 6, 4)
        np.testing.assert_allclose(out.data, upconv2d_loop(x, w, b), atol=1e-5)

    def test_gradients(self):
        rng = np.random.default_rng(2)
        errs = check_op_gradients(nn.upconv2d, [rng.normal(size=(2, 2, 2, 3)), rng.normal(size=(2, 3, 2, 2)),
                                                rng.normal(size=3)])
        assert max(errs) < GRAD_TOL, errs


class TestXavier:
    def test_bound(self):
        t = nn.xavier_init((1000,), 3, 3, seed=0)
        assert np.abs(t.data).max() <= 1.0

    def test_variance(self):
        fan_in, fan_out = 20, 30
        t = nn.xavier_init((100_000,), fan_in, fan_out, seed=1)
        target = 2.0 / (fan_in + fan_out)
        assert abs(t.data.var() - target) / target < 0.1

    def test_deterministic(self):
        a = nn.xavier_init((4, 3, 3, 3), 27, 36, seed=5)
        b = nn.xavier_init((4, 3, 3, 3), 27, 36, seed=5)
        assert a.data.tobytes() == b.data.tobytes()
        assert a.requires_grad

    def test_bad_fan(self):
        with pytest.raises(ValueError):
            nn.xavier_init((2,), 0, 1, seed=0)


def _adam_oracle(p, grads, lr=3e-4, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
    return p


class TestAdam:
    def test_zero_gradient(self):
        p = Tensor(np.array([0.3, -1.2]), requires_grad=True)
        state = nn.AdamState()
        p.grad = np.zeros(2, np.float32)
        nn.adam_step([p], state)
        assert p.data.tolist() == pytest.approx([0.3, -1.2]) and state.step == 1
        np.testing.assert_array_equal(p.data, np.array([0.3, -1.2], np.float32))

    @pytest.mark.parametrize("g", [2.0, -0.5])
    def test_moves_against_gradient(self, g):
        p = Tensor(np.array([1.0]), requires_grad=True)
        state = nn.AdamState()
        prev = float(p.data[0])
        for _ in range(50):
            p.grad = np.array([g], np.float32)
            nn.adam_step([p], state)
            cur = float(p.data[0])
            assert (cur - prev) * g < 0
            prev = cur

    def test_three_steps_vs_recurrence(self):
        grads = [0.7, -1.3, 0.2]
        p = Tensor(np.array([0.5]), requires_grad=True)
        state = nn.AdamState()
        for g in grads:
            p.grad = np.array([g], np.float32)
            nn.adam_step([p], state)
        assert abs(float(p.data[0]) - _adam_oracle(0.5, [float(np.float32(g)) for g in grads])) < 1e-7
        assert state.step == 3

    def test_missing_gradient(self):
        with pytest.raises(MissingGradient):
            nn.adam_step([Tensor(np.ones(2), requires_grad=True)], nn.AdamState())

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValueError):
            nn.AdamState(lr=0)
        with pytest.raises(ValueError):
            nn.AdamState(beta1=1.0)


class TestTape:
    def test_shared_input_accumulates(self):
        x = Tensor(np.array([[[[1.0, -2.0]]]]), requires_grad=True)
        out = nn.concat_channels(nn.relu(x), x)
        out.backward(np.ones(out.shape, np.float32))
        assert x.grad.reshape(-1).tolist() == [2.0, 1.0]

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with nn.no_grad():
            y = nn.relu(x)
        assert not y.requires_grad

    def test_backward_needs_scalar_or_grad(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with pytest.raises(RuntimeError):
            nn.relu(x).backward()


class TestCheckpoint:
    def test_round_trip_is_byte_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"b.weight": rng.normal(size=(3, 2, 3, 3)).astype(np.float32),
                   "a.bias": rng.normal(size=3).astype(np.float32),
                   "scalar": np.array(1.5, np.float32)}
        checkpoint.save(tensors, tmp_path / "x.ckpt")
        loaded = checkpoint.load(tmp_path / "x.ckpt")
        for k, v in tensors.items():
            assert loaded[k].tobytes() == v.tobytes() and loaded[k].shape == v.shape
        checkpoint.save(loaded, tmp_path / "y.ckpt")
        assert (tmp_path / "x.ckpt").read_bytes() == (tmp_path / "y.ckpt").read_bytes()

    def test_header_layout(self):
        import json
        import struct
        blob = checkpoint.dumps({"w": np.array([1.0, 2.0], np.float32)})
        (hlen,) = struct.unpack("<Q", blob[:8])
        header = json.loads(blob[8:8 + hlen])
        assert header == {"format_version": 1, "tensors": [{"name": "w", "shape": [2], "offset": 0}]}
        assert blob[8 + hlen:] == np.array([1.0, 2.0], "<f4").tobytes()
