import numpy as np
import pytest

from ppgemo.errors import ConfigError, ShapeError, StateError
from ppgemo.nn import (
    BatchNorm1d,
    BatchNorm1dSpec,
    Conv1d,
    Conv1dSpec,
    Dense,
    DenseSpec,
    Dropout,
    DropoutSpec,
    GlobalMaxPool,
    MaxPool1d,
    MaxPool1dSpec,
    softmax,
)


class TestConv1d:
    def test_same_padding_output_length(self, rng):
        conv = Conv1d(1, Conv1dSpec(8, 64, stride=4, padding="same", activation="relu"), rng)
        out = conv.forward(rng.standard_normal((1, 6000, 1)))
        assert out.shape == (1, 1500, 8)

    def test_same_padding_length_property(self, rng):
        for _ in range(200):
            t = int(rng.integers(1, 60))
            k = int(rng.integers(1, 9))
            s = int(rng.integers(1, 5))
            conv = Conv1d(2, Conv1dSpec(3, k, stride=s), rng)
            out = conv.forward(rng.standard_normal((1, t, 2)))
            assert out.shape[1] == -(-t // s)

    def test_identity_kernel(self, rng):
        conv = Conv1d(1, Conv1dSpec(1, 1, stride=1), rng)
        conv.params["W"][...] = 1.0
        conv.params["b"][...] = 0.0
        x = rng.standard_normal((2, 10, 1))
        np.testing.assert_allclose(conv.forward(x), x)

    def test_zero_input_relu_bias(self, rng):
        conv = Conv1d(2, Conv1dSpec(4, 3, activation="relu"), rng)
        conv.params["b"][...] = [-1.0, 2.0, 0.5, -0.1]
        out = conv.forward(np.zeros((1, 8, 2)))
        expected = np.maximum(conv.params["b"], 0.0)
        np.testing.assert_allclose(out, np.broadcast_to(expected, out.shape))

    def test_causal_never_sees_future(self, rng):
        conv = Conv1d(1, Conv1dSpec(2, 3, padding="causal", dilation=2), rng)
        x = rng.standard_normal((1, 20, 1))
        base = conv.forward(x)
        bumped = x.copy()
        bumped[0, 12, 0] += 5.0
        out = conv.forward(bumped)
        np.testing.assert_array_equal(out[:, :12, :], base[:, :12, :])
        assert not np.allclose(out[:, 12:, :], base[:, 12:, :])

    def test_shape_error_names_expectation(self, rng):
        conv = Conv1d(3, Conv1dSpec(2, 3), rng)
        with pytest.raises(ShapeError, match="3"):
            conv.forward(np.zeros((1, 10, 2)))

    def test_causal_requires_stride_one(self):
        with pytest.raises(ConfigError, match="stride"):
            Conv1dSpec(2, 3, stride=2, padding="causal")


class TestMaxPool1d:
    def test_basic(self):
        pool = MaxPool1d(MaxPool1dSpec(2))
        x = np.array([1.0, 3.0, 2.0, 5.0]).reshape(1, 4, 1)
        np.testing.assert_array_equal(pool.forward(x).ravel(), [3.0, 5.0])

    def test_odd_length_drops_remainder(self, rng):
        pool = MaxPool1d(MaxPool1dSpec(2))
        out = pool.forward(rng.standard_normal((1, 375, 16)))
        assert out.shape == (1, 187, 16)

    def test_constant_input(self):
        pool = MaxPool1d(MaxPool1dSpec(3))
        out = pool.forward(np.full((2, 9, 2), 7.0))
        np.testing.assert_array_equal(out, np.full((2, 3, 2), 7.0))

    def test_length_property(self, rng):
        for _ in range(200):
            t = int(rng.integers(1, 50))
            p = int(rng.integers(1, min(t, 6) + 1))
            pool = MaxPool1d(MaxPool1dSpec(p))
            out = pool.forward(rng.standard_normal((1, t, 1)))
            assert out.shape[1] == t // p

    def test_too_short(self):
        with pytest.raises(ShapeError):
            MaxPool1d(MaxPool1dSpec(4)).forward(np.zeros((1, 3, 1)))


class TestBatchNorm1d:
    def test_train_normalizes_per_channel(self, rng):
        bn = BatchNorm1d(3, BatchNorm1dSpec())
        x = rng.standard_normal((4, 50, 3)) * 5.0 + 2.0
        out = bn.forward(x, "train")
        np.testing.assert_allclose(out.mean(axis=(0, 1)), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=(0, 1)), 1.0, atol=2e-3)

    def test_infer_uses_running_stats(self):
        bn = BatchNorm1d(1, BatchNorm1dSpec(epsilon=1e-12))
        bn.running_mean[...] = 1.0
        bn.running_var[...] = 4.0
        bn.seen_batch = True
        bn.params["gamma"][...] = 2.0
        bn.params["beta"][...] = 3.0
        out = bn.forward(np.full((1, 1, 1), 5.0), "infer")
        assert out.ravel()[0] == pytest.approx(7.0, abs=1e-9)

    def test_already_normalized_input_nearly_unchanged(self, rng):
        bn = BatchNorm1d(2, BatchNorm1dSpec())
        x = rng.standard_normal((8, 100, 2))
        x = (x - x.mean(axis=(0, 1))) / x.std(axis=(0, 1))
        out = bn.forward(x, "train")
        np.testing.assert_allclose(out, x, atol=3e-3)

    def test_infer_before_any_batch_raises(self):
        bn = BatchNorm1d(2, BatchNorm1dSpec())
        with pytest.raises(StateError):
            bn.forward(np.zeros((1, 4, 2)), "infer")

    def test_first_batch_seeds_running_stats(self, rng):
        bn = BatchNorm1d(2, BatchNorm1dSpec())
        x = rng.standard_normal((4, 30, 2)) * 3.0 + 1.0
        bn.forward(x, "train")
        np.testing.assert_allclose(bn.running_mean, x.mean(axis=(0, 1)))
        np.testing.assert_allclose(bn.running_var, x.var(axis=(0, 1)))


class TestDropout:
    def test_rate_zero_is_identity(self, rng):
        drop = Dropout(DropoutSpec(0.0))
        x = rng.standard_normal((3, 5))
        np.testing.assert_array_equal(drop.forward(x, "train", rng), x)
        np.testing.assert_array_equal(drop.forward(x, "infer"), x)

    def test_infer_is_exact_identity(self, rng):
        drop = Dropout(DropoutSpec(0.3))
        x = rng.standard_normal((4, 7))
        assert drop.forward(x, "infer") is not None
        np.testing.assert_array_equal(drop.forward(x, "infer"), x)

    def test_train_needs_rng(self):
        with pytest.raises(StateError):
            Dropout(DropoutSpec(0.3)).forward(np.zeros((2, 2)), "train")

    def test_monte_carlo_expectation(self, rng):
        # inverted dropout: E[out] == in, checked over 10000 masks
        drop = Dropout(DropoutSpec(0.3))
        x = rng.uniform(0.5, 2.0, size=(3, 7))
        total = np.zeros_like(x)
        for _ in range(10000):
            total += drop.forward(x, "train", rng)
        np.testing.assert_allclose(total / 10000, x, rtol=0.02)


class TestDense:
    def _identity_dense(self, rng, activation):
        dense = Dense(2, DenseSpec(2, activation), rng)
        dense.params["W"][...] = np.eye(2)
        dense.params["b"][...] = 0.0
        return dense

    def test_softmax_symmetry(self, rng):
        dense = self._identity_dense(rng, "softmax")
        out = dense.forward(np.array([[0.0, 0.0]]))
        np.testing.assert_allclose(out, [[0.5, 0.5]])

    def test_softmax_log_two(self, rng):
        dense = self._identity_dense(rng, "softmax")
        out = dense.forward(np.array([[np.log(2.0), 0.0]]))
        np.testing.assert_allclose(out, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-12)

    def test_softmax_rows_sum_to_one(self, rng):
        z = rng.standard_normal((40, 2)) * 30.0  # stress the max-subtraction
        p = softmax(z)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_softmax_open_interval(self, rng):
        p = softmax(rng.standard_normal((40, 2)) * 5.0)
        assert np.all(p > 0.0) and np.all(p < 1.0)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            Dense(4, DenseSpec(2), rng).forward(np.zeros((1, 3)))


class TestGlobalMaxPool:
    def test_picks_time_maximum(self):
        x = np.array([[[1.0, 9.0], [5.0, 2.0], [3.0, 4.0]]])
        out = GlobalMaxPool().forward(x)
        np.testing.assert_array_equal(out, [[5.0, 9.0]])

    def test_backward_routes_to_argmax(self):
        gpool = GlobalMaxPool()
        x = np.array([[[1.0], [5.0], [3.0]]])
        gpool.forward(x)
        dx = gpool.backward(np.array([[2.0]]))
        np.testing.assert_array_equal(dx, [[[0.0], [2.0], [0.0]]])


class TestSpecValidation:
    def test_dropout_rate_range(self):
        with pytest.raises(ConfigError, match="rate"):
            DropoutSpec(1.0)
        with pytest.raises(ConfigError, match="rate"):
            DropoutSpec(-0.1)

    def test_pool_size_positive(self):
        with pytest.raises(ConfigError, match="pool_size"):
            MaxPool1dSpec(0)

    def test_batchnorm_momentum_range(self):
        with pytest.raises(ConfigError, match="momentum"):
            BatchNorm1dSpec(momentum=1.0)

    def test_conv_sizes_positive(self):
        with pytest.raises(ConfigError, match="filters"):
            Conv1dSpec(0, 3)
        with pytest.raises(ConfigError, match="kernel_size"):
            Conv1dSpec(2, 0)

    def test_lstm_shape_mismatch(self, rng):
        from ppgemo.nn import Lstm, LstmSpec

        lstm = Lstm(3, LstmSpec(2), rng)
        with pytest.raises(ShapeError):
            lstm.forward(np.zeros((1, 5, 4)))


class TestFiniteOutputs:
    def test_all_layers_finite_on_finite_input(self, rng):
        x = rng.standard_normal((2, 24, 3)) * 10.0
        layers = [
            Conv1d(3, Conv1dSpec(4, 5, stride=2, activation="relu"), rng),
            MaxPool1d(MaxPool1dSpec(2)),
            BatchNorm1d(3, BatchNorm1dSpec()),
            Dropout(DropoutSpec(0.5)),
        ]
        for layer in layers:
            out = layer.forward(x, "train", rng)
            assert np.isfinite(out).all()
