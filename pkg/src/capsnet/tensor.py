"""Dense float32 tensors with reverse-mode automatic differentiation.

Every computation in the package flows through this module. A ``Tensor``
wraps a row-major ``numpy.float32`` array; operations record a tape of
closures so that ``backward()`` on a scalar result accumulates gradients
into every reachable tensor created with ``requires_grad=True``. The tape
is released once the backward pass finishes, so each forward pass owns its
own graph and threads never share mutable state.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError

DTYPE = np.float32

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that skips tape construction (inference only)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """Dense n-dimensional float32 array with an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.size == 0:
            raise ShapeError(f"tensor extents must all be >= 1, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar into all requires_grad leaves.

        Gradients add onto any existing ``grad`` arrays; call ``zero_grad``
        between steps. The tape is freed afterwards, so a second ``backward``
        needs a fresh forward pass.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(order):
            fn = node._grad_fn
            if fn is not None:
                fn(node.grad)
            # free the tape; leaves keep their accumulated gradient
            node._grad_fn = None
            node._parents = ()
            if not node.requires_grad:
                node.grad = None

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._grad_fn is not None


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def make_op(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    """Build an op result tensor, attaching the tape closure when needed.

    ``grad_fn(out_grad)`` must accumulate into the parents via
    ``accumulate_grad``. This is the extension point other modules use to
    register fused differentiable operations.
    """
    out = Tensor(data)
    if grad_enabled() and any(_needs_grad(p) for p in parents):
        out._parents = tuple(p for p in parents if _needs_grad(p))
        out._grad_fn = grad_fn
    return out


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    if _needs_grad(t):
        _accumulate(t, g)


# ---------------------------------------------------------------------------
# creation
# ---------------------------------------------------------------------------


def _check_extents(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"tensor extents must all be >= 1, got {list(shape)}")
    return shape


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(_check_extents(shape), dtype=DTYPE), requires_grad=requires_grad)


def full(shape, value: float, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(_check_extents(shape), value, dtype=DTYPE), requires_grad=requires_grad)


def uniform(shape, low: float, high: float, rng=None, seed=None, requires_grad: bool = False) -> Tensor:
    """Uniform init, reproducible given (seed, shape, order of draws from rng)."""
    shape = _check_extents(shape)
    if rng is None:
        rng = np.random.default_rng(seed)
    data = rng.uniform(low, high, size=shape).astype(DTYPE)
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=DTYPE))


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_check(a: Tensor, b: Tensor, opname: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {list(a.shape)} and {list(b.shape)} do not broadcast") from None


def add(a: Tensor, b) -> Tensor:
    b = as_tensor(b)
    _broadcast_check(a, b, "add")
    out_data = a.data + b.data

    def grad_fn(g):
        accumulate_grad(a, _unbroadcast(g, a.shape))
        accumulate_grad(b, _unbroadcast(g, b.shape))

    return make_op(out_data, (a, b), grad_fn)


def sub(a: Tensor, b) -> Tensor:
    b = as_tensor(b)
    _broadcast_check(a, b, "sub")
    out_data = a.data - b.data

    def grad_fn(g):
        accumulate_grad(a, _unbroadcast(g, a.shape))
        accumulate_grad(b, _unbroadcast(-g, b.shape))

    return make_op(out_data, (a, b), grad_fn)


def mul(a: Tensor, b) -> Tensor:
    b = as_tensor(b)
    _broadcast_check(a, b, "mul")
    out_data = a.data * b.data

    def grad_fn(g):
        accumulate_grad(a, _unbroadcast(g * b.data, a.shape))
        accumulate_grad(b, _unbroadcast(g * a.data, b.shape))

    return make_op(out_data, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    def grad_fn(g):
        accumulate_grad(a, -g)

    return make_op(-a.data, (a,), grad_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = DTYPE(factor)

    def grad_fn(g):
        accumulate_grad(a, g * factor)

    return make_op(a.data * factor, (a,), grad_fn)


def relu(a: Tensor) -> Tensor:
    return max_with(a, 0.0)


def max_with(a: Tensor, threshold: float) -> Tensor:
    """Elementwise max(x, threshold); subgradient at the kink is 0."""
    threshold = DTYPE(threshold)
    mask = a.data > threshold

    def grad_fn(g):
        accumulate_grad(a, g * mask)

    return make_op(np.maximum(a.data, threshold), (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def grad_fn(g):
        accumulate_grad(a, g * out_data * (1.0 - out_data))

    return make_op(out_data, (a,), grad_fn)


def square(a: Tensor) -> Tensor:
    def grad_fn(g):
        accumulate_grad(a, g * (2.0 * a.data))

    return make_op(a.data * a.data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _check_axis(a: Tensor, axis: int, opname: str) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"{opname}: axis {axis} out of range for rank {a.ndim}")
    return axis % a.ndim


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        out_data = a.data.sum(dtype=DTYPE).reshape(())

        def grad_fn(g):
            accumulate_grad(a, np.broadcast_to(g, a.shape))

        return make_op(out_data, (a,), grad_fn)

    axis = _check_axis(a, axis, "sum")
    out_data = a.data.sum(axis=axis, dtype=DTYPE)

    def grad_fn(g):
        accumulate_grad(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return make_op(out_data, (a,), grad_fn)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[_check_axis(a, axis, "mean")]
    return scale(tsum(a, axis), 1.0 / n)


def l2_norm(a: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; gradient at an exact zero vector is 0."""
    axis = _check_axis(a, axis, "l2_norm")
    out_data = np.sqrt(np.sum(a.data * a.data, axis=axis, dtype=DTYPE))

    def grad_fn(g):
        n = np.expand_dims(out_data, axis)
        safe = np.where(n > 0, n, 1.0)
        accumulate_grad(a, np.expand_dims(g, axis) * np.where(n > 0, a.data / safe, 0.0))

    return make_op(out_data, (a,), grad_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(a, axis, "softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True, dtype=DTYPE)

    def grad_fn(g):
        dot = np.sum(g * out_data, axis=axis, keepdims=True)
        accumulate_grad(a, out_data * (g - dot))

    return make_op(out_data, (a,), grad_fn)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(a, axis, "log_softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out_data = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True, dtype=DTYPE))

    def grad_fn(g):
        accumulate_grad(a, g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return make_op(out_data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.size} elements as {list(shape)}")
    out_data = a.data.reshape(shape)

    def grad_fn(g):
        accumulate_grad(a, g.reshape(a.shape))

    return make_op(out_data, (a,), grad_fn)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: {list(axes)} is not a permutation of rank {a.ndim}")
    inverse = np.argsort(axes)

    def grad_fn(g):
        accumulate_grad(a, g.transpose(inverse))

    return make_op(a.data.transpose(axes), (a,), grad_fn)


# ---------------------------------------------------------------------------
# matmul and convolution
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2-d operands, or batched over a shared leading index."""
    if a.ndim == b.ndim == 2 or a.ndim == b.ndim == 3:
        pass
    else:
        raise ShapeError(f"matmul: unsupported ranks {a.ndim} and {b.ndim}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {list(a.shape)} x {list(b.shape)}")
    if a.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul: batch extents differ, {a.shape[0]} vs {b.shape[0]}")
    out_data = a.data @ b.data

    def grad_fn(g):
        accumulate_grad(a, g @ b.data.swapaxes(-1, -2))
        accumulate_grad(b, a.data.swapaxes(-1, -2) @ g)

    return make_op(out_data, (a, b), grad_fn)


@dataclass(frozen=True)
class ConvSpec:
    """Shape algebra for a 2-d cross-correlation."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_h, self.kernel_w, self.stride) < 1:
            raise ShapeError(f"conv spec fields must be positive: {self}")
        if self.padding < 0:
            raise ShapeError(f"conv padding must be >= 0, got {self.padding}")

    def out_extent(self, in_extent: int, kernel: int) -> int:
        out = (in_extent + 2 * self.padding - kernel) // self.stride + 1
        if out < 1:
            raise ShapeError(
                f"conv output extent {out} < 1 for input {in_extent}, "
                f"kernel {kernel}, stride {self.stride}, padding {self.padding}"
            )
        return out

    def out_hw(self, h_in: int, w_in: int) -> tuple[int, int]:
        return self.out_extent(h_in, self.kernel_h), self.out_extent(w_in, self.kernel_w)


def _conv_windows(x: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, c, _, _ = x.shape
    s0, s1, s2, s3 = x.strides
    return np.lib.stride_tricks.as_strided(
        x, (b, c, ho, wo, kh, kw), (s0, s1, s2 * stride, s3 * stride, s2, s3), writeable=False
    )


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, spec: ConvSpec) -> Tensor:
    """Cross-correlation of [C,H,W] (or [B,C,H,W]) input with [Co,Ci,Kh,Kw] kernels."""
    single = x.ndim == 3
    if single:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must have rank 3 or 4, got {x.ndim}")
    if weight.shape != (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w):
        raise ShapeError(f"conv2d: weight shape {list(weight.shape)} does not match {spec}")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv2d: bias shape {list(bias.shape)} != [{spec.out_channels}]")
    bsz, c_in, h_in, w_in = x.shape
    if c_in != spec.in_channels:
        raise ShapeError(f"conv2d: input has {c_in} channels, spec expects {spec.in_channels}")
    ho, wo = spec.out_hw(h_in, w_in)

    pad = spec.padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = _conv_windows(xp, spec.kernel_h, spec.kernel_w, spec.stride, ho, wo)
    # [B,C,Ho,Wo,Kh,Kw] x [Co,C,Kh,Kw] -> [B,Ho,Wo,Co]
    out_data = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out_data = np.ascontiguousarray(out_data.transpose(0, 3, 1, 2))
    out_data += bias.data[None, :, None, None]

    xt, wt, bt = x, weight, bias

    def grad_fn(g):
        accumulate_grad(bt, g.sum(axis=(0, 2, 3)))
        if _needs_grad(wt):
            # [B,Co,Ho,Wo] x [B,C,Ho,Wo,Kh,Kw] -> [Co,C,Kh,Kw]
            accumulate_grad(wt, np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])))
        if _needs_grad(xt):
            # [B,Co,Ho,Wo] x [Co,C,Kh,Kw] -> [B,Ho,Wo,C,Kh,Kw]
            gw = np.tensordot(g, wt.data, axes=([1], [0]))
            dxp = np.zeros_like(xp)
            st = spec.stride
            for i in range(spec.kernel_h):
                for j in range(spec.kernel_w):
                    dxp[:, :, i : i + st * ho : st, j : j + st * wo : st] += gw[:, :, :, :, i, j].transpose(
                        0, 3, 1, 2
                    )
            dx = dxp[:, :, pad : pad + h_in, pad : pad + w_in] if pad else dxp
            accumulate_grad(xt, dx)

    out = make_op(out_data, (x, weight, bias), grad_fn)
    return reshape(out, out.shape[1:]) if single else out
