import numpy as np
import pytest

from capsnet import tensor as T
from capsnet.errors import ContractError, ShapeError
from capsnet.tensor import ConvSpec, Tensor

from helpers import assert_grads_match, conv2d_oracle, matmul_oracle


class TestCreate:
    def test_zeros(self):
        t = T.zeros((2, 3))
        assert t.shape == (2, 3)
        assert t.size == 6
        assert not t.data.any()

    def test_constant(self):
        t = T.full((1,), 0.9)
        assert t.data.tolist() == [np.float32(0.9)]

    def test_uniform_reproducible(self):
        a = T.uniform((4,), -1, 1, seed=7)
        b = T.uniform((4,), -1, 1, seed=7)
        assert a.data.tobytes() == b.data.tobytes()

    @pytest.mark.parametrize("shape", [(0,), (2, 0), (-1, 3)])
    def test_bad_extent(self, shape):
        with pytest.raises(ShapeError):
            T.zeros(shape)

    def test_dtype_is_float32(self):
        assert T.uniform((5,), 0, 1, seed=0).data.dtype == np.float32


class TestElementwise:
    def test_relu(self):
        out = T.relu(Tensor([-1.0, 0.0, 2.0]))
        assert out.data.tolist() == [0.0, 0.0, 2.0]

    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_max_with_threshold(self):
        out = T.max_with(Tensor([-0.3, 0.4]), 0.0)
        assert np.allclose(out.data, [0.0, 0.4])

    def test_square(self):
        assert T.square(Tensor([3.0, -2.0])).data.tolist() == [9.0, 4.0]

    def test_add_sub_mul_scale(self):
        a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
        assert T.add(a, b).data.tolist() == [4.0, 7.0]
        assert T.sub(a, b).data.tolist() == [-2.0, -3.0]
        assert T.mul(a, b).data.tolist() == [3.0, 10.0]
        assert T.scale(a, 2.0).data.tolist() == [2.0, 4.0]

    def test_scalar_broadcast(self):
        assert T.add(Tensor([1.0, 2.0]), 1.0).data.tolist() == [2.0, 3.0]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


class TestReduce:
    def test_softmax_uniform_logits(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, [1 / 3] * 3, atol=1e-7)

    def test_softmax_matches_oracle(self):
        logits = [1.0, 2.0, 3.0]
        out = T.softmax(Tensor(logits))
        expected = np.exp(logits) / np.exp(logits).sum()
        assert np.allclose(out.data, expected, atol=1e-6)

    def test_softmax_rows_sum_to_one_and_positive(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(0, 5, (6, 9)).astype(np.float32))
        out = T.softmax(x, axis=1).data
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)
        assert (out > 0).all()

    def test_l2_norm_345(self):
        assert T.l2_norm(Tensor([3.0, 4.0])).item() == 5.0

    def test_sum_mean(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert T.tsum(x).item() == 10.0
        assert T.tsum(x, axis=0).data.tolist() == [4.0, 6.0]
        assert T.tmean(x, axis=1).data.tolist() == [1.5, 3.5]

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            T.tsum(Tensor([1.0, 2.0]), axis=2)
        with pytest.raises(ShapeError):
            T.softmax(Tensor([1.0, 2.0]), axis=1)


class TestShapeOps:
    def test_reshape_preserves_bytes(self):
        x = T.uniform((2, 3, 4), -1, 1, seed=5)
        y = T.reshape(x, (6, 4))
        assert y.data.tobytes() == x.data.tobytes()

    def test_reshape_bad_product(self):
        with pytest.raises(ShapeError):
            T.reshape(T.zeros((2, 3)), (7,))

    def test_transpose_roundtrip(self):
        x = T.uniform((2, 3, 4), -1, 1, seed=6)
        y = T.transpose(T.transpose(x, (2, 0, 1)), (1, 2, 0))
        assert np.array_equal(y.data, x.data)


class TestMatmul:
    def test_identity(self):
        x = T.uniform((3, 5), -1, 1, seed=1)
        out = T.matmul(Tensor(np.eye(3, dtype=np.float32)), x)
        assert np.allclose(out.data, x.data)

    def test_hand_arithmetic(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(5, 4)).astype(np.float32)
        b = rng.normal(size=(4, 3)).astype(np.float32)
        out = T.matmul(Tensor(a), Tensor(b))
        assert np.allclose(out.data, matmul_oracle(a, b), atol=1e-6)

    def test_batched(self):
        rng = np.random.default_rng(12)
        a = rng.normal(size=(3, 2, 4)).astype(np.float32)
        b = rng.normal(size=(3, 4, 5)).astype(np.float32)
        out = T.matmul(Tensor(a), Tensor(b))
        for i in range(3):
            assert np.allclose(out.data[i], matmul_oracle(a[i], b[i]), atol=1e-6)

    def test_inner_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(T.zeros((2, 3)), T.zeros((4, 2)))


class TestConv2d:
    def test_table_shapes(self):
        stem = ConvSpec(1, 256, 9, 9, 1, 0)
        assert stem.out_hw(28, 28) == (20, 20)
        primary = ConvSpec(256, 256, 9, 9, 2, 0)
        assert primary.out_hw(20, 20) == (6, 6)

    def test_stem_shape_forward(self):
        spec = ConvSpec(1, 256, 9, 9, 1, 0)
        x = T.uniform((1, 28, 28), 0, 1, seed=0)
        w = T.uniform((256, 1, 9, 9), -0.1, 0.1, seed=1)
        out = T.conv2d(x, w, T.zeros((256,)), spec)
        assert out.shape == (256, 20, 20)

    def test_primary_spatial_shape(self):
        spec = ConvSpec(256, 4, 9, 9, 2, 0)
        x = T.uniform((256, 20, 20), 0, 1, seed=2)
        w = T.uniform((4, 256, 9, 9), -0.05, 0.05, seed=3)
        out = T.conv2d(x, w, T.zeros((4,)), spec)
        assert out.shape == (4, 6, 6)

    def test_one_by_one_kernel(self):
        spec = ConvSpec(1, 1, 1, 1, 1, 0)
        out = T.conv2d(Tensor([[[2.0]]]), Tensor([[[[3.0]]]]), Tensor([0.5]), spec)
        assert out.data.reshape(()) == np.float32(6.5)

    @pytest.mark.parametrize("stride,padding,cin,cout", [(1, 0, 3, 2), (2, 1, 4, 3), (1, 2, 1, 2)])
    def test_matches_seven_loop_oracle(self, stride, padding, cin, cout):
        rng = np.random.default_rng(stride * 10 + padding)
        x = rng.normal(size=(2, cin, 8, 8)).astype(np.float32)
        w = rng.normal(size=(cout, cin, 3, 3)).astype(np.float32)
        b = rng.normal(size=(cout,)).astype(np.float32)
        spec = ConvSpec(cin, cout, 3, 3, stride, padding)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), spec)
        assert np.allclose(out.data, conv2d_oracle(x, w, b, stride, padding), atol=1e-5)

    def test_channel_mismatch(self):
        spec = ConvSpec(3, 2, 3, 3, 1, 0)
        with pytest.raises(ShapeError):
            T.conv2d(T.zeros((2, 8, 8)), T.zeros((2, 3, 3, 3)), T.zeros((2,)), spec)

    def test_output_extent_too_small(self):
        with pytest.raises(ShapeError):
            ConvSpec(1, 1, 9, 9, 1, 0).out_hw(4, 4)


class TestBackward:
    def test_sum_gives_ones(self):
        x = T.uniform((2, 3), -1, 1, seed=4, requires_grad=True)
        T.tsum(x).backward()
        assert np.array_equal(x.grad, np.ones((2, 3), dtype=np.float32))

    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        T.tsum(T.square(x)).backward()
        assert x.grad.tolist() == [2.0, 4.0]

    def test_backward_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        T.tsum(x).backward()
        T.tsum(x).backward()
        assert x.grad.tolist() == [2.0, 2.0]

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            T.square(x).backward()

    def test_graph_freed_after_backward(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = T.tsum(T.square(x))
        loss.backward()
        assert loss._parents == () and loss._grad_fn is None

    def test_no_grad_skips_tape(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with T.no_grad():
            out = T.square(x)
        assert out._grad_fn is None


def _rand(shape, seed, lo=-1.0, hi=1.0, requires_grad=True):
    return T.uniform(shape, lo, hi, seed=seed, requires_grad=requires_grad)


class TestGradientsMatchFiniteDifferences:
    """Per-op analytic vs central finite differences, rel. error < 1e-3."""

    def test_add_broadcast(self):
        a, b = _rand((3, 4), 1), _rand((4,), 2)
        assert_grads_match(lambda: T.tsum(T.mul(T.add(a, b), T.add(a, b))), [a, b])

    def test_sub(self):
        a, b = _rand((5,), 3), _rand((5,), 4)
        assert_grads_match(lambda: T.tsum(T.square(T.sub(a, b))), [a, b])

    def test_mul(self):
        a, b = _rand((2, 3), 5), _rand((2, 3), 6)
        assert_grads_match(lambda: T.tsum(T.mul(a, b)), [a, b])

    def test_scale_neg(self):
        a = _rand((7,), 7)
        assert_grads_match(lambda: T.tsum(T.scale(T.neg(a), 2.5)), [a])

    def test_relu_away_from_kink(self):
        a = Tensor(np.array([-0.8, -0.3, 0.4, 1.2], dtype=np.float32), requires_grad=True)
        assert_grads_match(lambda: T.tsum(T.relu(a)), [a])

    def test_max_with_away_from_kink(self):
        a = Tensor(np.array([0.3, 0.6, 0.95], dtype=np.float32), requires_grad=True)
        assert_grads_match(lambda: T.tsum(T.square(T.max_with(a, 0.5))), [a])

    def test_sigmoid(self):
        a = _rand((6,), 8, -2, 2)
        assert_grads_match(lambda: T.tsum(T.square(T.sigmoid(a))), [a])

    def test_square(self):
        a = _rand((4, 2), 9)
        assert_grads_match(lambda: T.tsum(T.square(a)), [a])

    def test_sum_axis(self):
        a = _rand((3, 4), 10)
        assert_grads_match(lambda: T.tsum(T.square(T.tsum(a, axis=1))), [a])

    def test_mean(self):
        a = _rand((3, 4), 11)
        assert_grads_match(lambda: T.tsum(T.square(T.tmean(a, axis=0))), [a])

    def test_l2_norm(self):
        a = _rand((3, 5), 12, 0.2, 1.0)
        assert_grads_match(lambda: T.tsum(T.l2_norm(a, axis=1)), [a])

    def test_softmax(self):
        a = _rand((2, 6), 13, -2, 2)
        w = Tensor(np.arange(12, dtype=np.float32).reshape(2, 6))
        assert_grads_match(lambda: T.tsum(T.mul(T.softmax(a, axis=1), w)), [a])

    def test_log_softmax(self):
        a = _rand((2, 5), 14, -2, 2)
        w = Tensor(np.arange(10, dtype=np.float32).reshape(2, 5) / 10)
        assert_grads_match(lambda: T.tsum(T.mul(T.log_softmax(a, axis=1), w)), [a])

    def test_matmul(self):
        a, b = _rand((3, 4), 15), _rand((4, 2), 16)
        assert_grads_match(lambda: T.tsum(T.square(T.matmul(a, b))), [a, b])

    def test_batched_matmul(self):
        a, b = _rand((2, 3, 4), 17), _rand((2, 4, 2), 18)
        assert_grads_match(lambda: T.tsum(T.square(T.matmul(a, b))), [a, b])

    def test_reshape_transpose(self):
        a = _rand((2, 3, 4), 19)
        assert_grads_match(
            lambda: T.tsum(T.square(T.reshape(T.transpose(a, (2, 0, 1)), (4, 6)))), [a]
        )

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1)])
    def test_conv2d(self, stride, padding):
        x = _rand((2, 2, 5, 5), 20)
        w = _rand((3, 2, 3, 3), 21, -0.5, 0.5)
        b = _rand((3,), 22)
        spec = ConvSpec(2, 3, 3, 3, stride, padding)
        assert_grads_match(lambda: T.tsum(T.square(T.conv2d(x, w, b, spec))), [x, w, b])

    def test_finite_outputs(self):
        a = _rand((50,), 23, -3, 3)
        for op in (T.relu, T.sigmoid, T.square, lambda t: T.softmax(t, axis=0)):
            assert np.isfinite(op(a).data).all()
