import numpy as np
import pytest

from capsnet import tensor as T
from capsnet.errors import ShapeError
from capsnet.layers import Conv2d, Linear, PoolSpec, flatten, pool2d
from capsnet.tensor import Tensor

from helpers import assert_grads_match


class TestLinear:
    def test_identity(self):
        layer = Linear(3, 3, rng=np.random.default_rng(0))
        layer.weight.data = np.eye(3, dtype=np.float32)
        layer.bias.data[:] = 0.0
        x = Tensor([1.0, -2.0, 3.0])
        assert np.allclose(layer(x).data, x.data)

    @pytest.mark.parametrize(
        "n_in,n_out,expected", [(160, 512, 82_432), (512, 1024, 525_312), (1024, 784, 803_600)]
    )
    def test_decoder_row_parameter_counts(self, n_in, n_out, expected):
        assert Linear(n_in, n_out, rng=np.random.default_rng(0)).parameter_count() == expected

    def test_matches_matmul_plus_add(self):
        rng = np.random.default_rng(1)
        layer = Linear(5, 4, rng=rng)
        x = rng.normal(size=(3, 5)).astype(np.float32)
        out = layer(Tensor(x))
        expected = x @ layer.weight.data.T + layer.bias.data
        assert np.allclose(out.data, expected, atol=1e-6)

    def test_extent_mismatch(self):
        with pytest.raises(ShapeError):
            Linear(4, 2, rng=np.random.default_rng(0))(Tensor([1.0, 2.0]))

    def test_gradients(self):
        layer = Linear(4, 3, rng=np.random.default_rng(2))
        x = T.uniform((2, 4), -1, 1, seed=3, requires_grad=True)
        assert_grads_match(
            lambda: T.tsum(T.square(layer(x))), [x, layer.weight, layer.bias]
        )


class TestPool2d:
    def test_max_single_window(self):
        out = pool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), PoolSpec("max", 2, 2))
        assert out.data.tolist() == [[[4.0]]]

    def test_average_single_window(self):
        out = pool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), PoolSpec("average", 2, 2))
        assert out.data.tolist() == [[[2.5]]]

    def test_shape_algebra(self):
        out = pool2d(T.uniform((2, 6, 6), 0, 1, seed=4), PoolSpec("max", 2, 2))
        assert out.shape == (2, 3, 3)

    def test_window_larger_than_input(self):
        with pytest.raises(ShapeError):
            pool2d(T.zeros((1, 2, 2)), PoolSpec("max", 3, 1))

    def test_max_backward_hits_argmax_only(self):
        x = Tensor([[[1.0, 5.0], [3.0, 4.0]]], requires_grad=True)
        T.tsum(pool2d(x, PoolSpec("max", 2, 2))).backward()
        assert x.grad.tolist() == [[[0.0, 1.0], [0.0, 0.0]]]

    def test_max_tie_break_first_row_major(self):
        x = Tensor([[[2.0, 2.0], [2.0, 2.0]]], requires_grad=True)
        T.tsum(pool2d(x, PoolSpec("max", 2, 2))).backward()
        assert x.grad.tolist() == [[[1.0, 0.0], [0.0, 0.0]]]

    def test_gradient_mass_conserved_per_window(self):
        x = T.uniform((3, 4, 4), -1, 1, seed=5, requires_grad=True)
        T.tsum(pool2d(x, PoolSpec("max", 2, 2))).backward()
        # 4 windows per channel, one unit of gradient each
        assert np.isclose(x.grad.sum(), 3 * 4.0)
        assert ((x.grad == 0) | (x.grad == 1)).all()

    @pytest.mark.parametrize("kind", ["max", "average"])
    def test_gradients(self, kind):
        # values spaced well apart so finite differences never cross an argmax tie
        rng = np.random.default_rng(6)
        n = 2 * 2 * 6 * 6
        spread = ((rng.permutation(n) - n / 2) * 0.005).astype(np.float32).reshape(2, 2, 6, 6)
        x = Tensor(spread, requires_grad=True)
        assert_grads_match(lambda: T.tsum(T.square(pool2d(x, PoolSpec(kind, 2, 2)))), [x])

    def test_average_overlapping_windows_gradients(self):
        x = T.uniform((1, 5, 5), -1, 1, seed=7, requires_grad=True)
        assert_grads_match(lambda: T.tsum(T.square(pool2d(x, PoolSpec("average", 3, 2)))), [x])


class TestFlatten:
    def test_length(self):
        assert flatten(T.zeros((2, 3, 4))).shape == (24,)

    def test_roundtrip_identity(self):
        x = T.uniform((2, 3, 4), -1, 1, seed=8)
        back = T.reshape(flatten(x), (2, 3, 4))
        assert np.array_equal(back.data, x.data)

    def test_gradient_is_ones_in_original_shape(self):
        x = T.uniform((2, 3), -1, 1, seed=9, requires_grad=True)
        T.tsum(flatten(x)).backward()
        assert np.array_equal(x.grad, np.ones((2, 3), dtype=np.float32))


class TestConv2dLayer:
    def test_parameter_count(self):
        conv = Conv2d(1, 256, 9, rng=np.random.default_rng(0))
        assert conv.parameter_count() == 20_992

    def test_forward_shape(self):
        conv = Conv2d(3, 5, 3, stride=1, padding=1, rng=np.random.default_rng(1))
        out = conv(T.uniform((2, 3, 8, 8), 0, 1, seed=10))
        assert out.shape == (2, 5, 8, 8)
