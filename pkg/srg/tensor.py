"""
Dense tensors with reverse-mode automatic differentiation

Values are stored as 32-bit floats; reductions, matrix products and
convolutions accumulate in 64-bit and cast back. Operations run eagerly and,
when a ComputationTape is active and an input requires gradients, record a
node holding the rule that maps the output gradient to input gradients.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from srg.errors import ArgumentError, DimensionError

ACCUMULATOR = np.float64

_state = threading.local()


def default_dtype():
    """dtype used for newly created tensors in the current thread"""
    return getattr(_state, "dtype", np.float32)


@contextmanager
def float64_mode():
    """
    Create tensors as 64-bit values inside the block. Used by gradient checks,
    where 32-bit storage limits how small the finite-difference step can be.
    """
    previous = default_dtype()
    _state.dtype = np.float64
    try:
        yield
    finally:
        _state.dtype = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=default_dtype())
        if array.ndim > 0 and 0 in array.shape:
            raise DimensionError(f"Tensor dimensions must be positive, got {array.shape}", axis="shape")
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.is_leaf = True

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out.is_leaf = False
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


class TapeNode:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


class ComputationTape:
    """
    Ordered record of differentiable operations. Nodes are appended as ops
    execute, so every node's inputs were produced before it. A tape belongs
    to one thread and one training step.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn: Callable):
        self.nodes.append(TapeNode(op, inputs, output, backward_fn))

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tapes.pop()
        return False


def active_tape() -> Optional[ComputationTape]:
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


def _result(op: str, inputs: Sequence[Tensor], data: np.ndarray, backward_fn: Callable) -> Tensor:
    dtype = np.result_type(*[t.data.dtype for t in inputs])
    tape = active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(np.asarray(data, dtype=dtype), tracked)
    if tracked:
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(tape: ComputationTape, loss: Tensor) -> List[Tensor]:
    """
    Propagate d(loss)/d(tensor) through the tape in reverse order and store
    the result in .grad of every leaf tensor that requires gradients.
    Returns those leaves.
    """
    if loss.data.size != 1:
        raise ArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ArgumentError("loss does not depend on any tensor that requires gradients")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=ACCUMULATOR)}
    leaves: Dict[int, Tensor] = {}

    for node in reversed(tape.nodes):
        upstream = grads.pop(id(node.output), None)
        if upstream is None:
            continue
        input_grads = node.backward_fn(upstream)
        for tensor, grad in zip(node.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            grads[key] = grads[key] + grad if key in grads else grad
            if tensor.is_leaf:
                leaves[key] = tensor

    for key, tensor in leaves.items():
        tensor.grad = np.asarray(grads[key], dtype=tensor.data.dtype).reshape(tensor.shape)
    return list(leaves.values())


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not compatible", axis="broadcast")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", (a, b), a.data + b.data, backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _result("sub", (a, b), a.data - b.data, backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result("mul", (a, b), a.data * b.data, backward_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    def backward_fn(g):
        return (g * factor,)

    return _result("scale", (a,), a.data * a.data.dtype.type(factor), backward_fn)


def add_scalar(a: Tensor, value: float) -> Tensor:
    def backward_fn(g):
        return (g,)

    return _result("add_scalar", (a,), a.data + a.data.dtype.type(value), backward_fn)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward_fn(g):
        return (g * mask,)

    return _result("relu", (a,), np.where(mask, a.data, 0), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data.astype(ACCUMULATOR)
    y = np.empty_like(x)
    positive = x >= 0
    y[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    z = np.exp(x[~positive])
    y[~positive] = z / (1.0 + z)

    def backward_fn(g):
        return (g * y * (1.0 - y),)

    return _result("sigmoid", (a,), y, backward_fn)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ArgumentError("log needs strictly positive input")
    x = a.data.astype(ACCUMULATOR)

    def backward_fn(g):
        return (g / x,)

    return _result("log", (a,), np.log(x), backward_fn)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def backward_fn(g):
        return (g * sign,)

    return _result("abs", (a,), np.abs(a.data), backward_fn)


def clamp(a: Tensor, low: float, high: float) -> Tensor:
    inside = (a.data >= low) & (a.data <= high)

    def backward_fn(g):
        return (g * inside,)

    return _result("clamp", (a,), np.clip(a.data, low, high), backward_fn)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis: Optional[int], keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    out = a.data.astype(ACCUMULATOR).sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        return (_expand_reduced(g, a.shape, axis, keepdims),)

    return _result("sum", (a,), out, backward_fn)


def reduce_mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    out = a.data.astype(ACCUMULATOR).mean(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        return (_expand_reduced(g, a.shape, axis, keepdims) / count,)

    return _result("mean", (a,), out, backward_fn)


def reduce_max(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along an axis; the gradient goes to the first maximal entry"""
    index = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, index, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward_fn(g):
        grad = np.zeros(a.shape, dtype=ACCUMULATOR)
        upstream = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(grad, index, upstream, axis=axis)
        return (grad,)

    return _result("max", (a,), out, backward_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along an axis (rows of a matrix by default)"""
    x = a.data.astype(ACCUMULATOR)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result("softmax", (a,), y, backward_fn)


def softmax_rows(a: Tensor) -> Tensor:
    return softmax(a, axis=-1)


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}", axis="shape")

    def backward_fn(g):
        return (g.reshape(a.shape),)

    return _result("reshape", (a,), out, backward_fn)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        return (np.transpose(g, inverse),)

    return _result("transpose", (a,), np.transpose(a.data, axes), backward_fn)


def swap_last(a: Tensor) -> Tensor:
    """Swap the last two axes"""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def take(a: Tensor, key) -> Tensor:
    out = np.array(a.data[key])

    def backward_fn(g):
        grad = np.zeros(a.shape, dtype=ACCUMULATOR)
        np.add.at(grad, key, g)
        return (grad,)

    return _result("take", (a,), out, backward_fn)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ArgumentError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != axis
        ):
            raise DimensionError(
                f"concat: shape {t.shape} does not match {tensors[0].shape}", axis=f"non-concat axes of {axis}"
            )
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=axis), backward_fn)


# ---------------------------------------------------------------------------
# Linear algebra, convolution, pooling, resampling
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D tensors or of stacks with identical leading axes"""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs at least 2-D operands", axis="rank")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}", axis="inner")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch axes {a.shape[:-2]} and {b.shape[:-2]} differ", axis="batch")
    a64 = a.data.astype(ACCUMULATOR)
    b64 = b.data.astype(ACCUMULATOR)

    def backward_fn(g):
        grad_a = g @ np.swapaxes(b64, -1, -2)
        grad_b = np.swapaxes(a64, -1, -2) @ g
        if b.ndim == 2 and grad_b.ndim > 2:
            grad_b = grad_b.reshape(-1, *b.shape).sum(axis=0)
        return grad_a, grad_b

    return _result("matmul", (a, b), a64 @ b64, backward_fn)


def conv1d(
    x: Tensor,
    kernels: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """
    Zero-padded 1-D convolution (cross-correlation) over the last axis.

    x: [..., C_in, T]; kernels: [C_out, C_in, K]; bias: [C_out] or None.
    Output: [..., C_out, floor((T + 2*padding - K) / stride) + 1].
    """
    if x.ndim < 2:
        raise DimensionError(f"conv1d input must be [..., C, T], got {x.shape}", axis="rank")
    if kernels.ndim != 3:
        raise DimensionError(f"conv1d kernels must be [C_out, C_in, K], got {kernels.shape}", axis="rank")
    if stride < 1:
        raise ArgumentError(f"conv1d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ArgumentError(f"conv1d padding must be >= 0, got {padding}")
    c_out, c_in, width = kernels.shape
    if x.shape[-2] != c_in:
        raise DimensionError(
            f"conv1d: input has {x.shape[-2]} channels, kernels expect {c_in}", axis="channel"
        )
    length = x.shape[-1]
    if width > length + 2 * padding:
        raise DimensionError(
            f"conv1d: kernel width {width} exceeds padded length {length + 2 * padding}", axis="time"
        )
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"conv1d: bias shape {bias.shape} != ({c_out},)", axis="channel")

    lead = x.ndim - 2
    pad_spec = [(0, 0)] * (x.ndim - 1) + [(padding, padding)]
    padded = np.pad(x.data.astype(ACCUMULATOR), pad_spec)
    windows = sliding_window_view(padded, width, axis=-1)[..., ::stride, :]  # [..., C_in, T', K]
    out_len = windows.shape[-2]
    w64 = kernels.data.astype(ACCUMULATOR)

    out = np.tensordot(windows, w64, axes=([lead, lead + 2], [1, 2]))  # [..., T', C_out]
    out = np.moveaxis(out, -1, -2)
    if bias is not None:
        out = out + bias.data.astype(ACCUMULATOR)[:, None]

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    summed_axes = list(range(lead)) + [lead + 1]

    def backward_fn(g):
        grad_w = np.tensordot(g, windows, axes=(summed_axes, summed_axes))  # [C_out, C_in, K]
        grad_windows = np.tensordot(g, w64, axes=([lead], [0]))  # [..., T', C_in, K]
        grad_padded = np.zeros(padded.shape, dtype=ACCUMULATOR)
        stop = stride * (out_len - 1) + 1
        for k in range(width):
            grad_padded[..., k:k + stop:stride] += np.swapaxes(grad_windows[..., k], -1, -2)
        grad_x = grad_padded[..., padding:padding + length]
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, g.sum(axis=tuple(summed_axes))

    return _result("conv1d", inputs, out, backward_fn)


def temporal_pool(x: Tensor, kind: str, kernel: int, stride: int) -> Tensor:
    """Average or max pooling over the last axis without padding"""
    if kind not in ("avg", "max"):
        raise ArgumentError(f"unknown pooling kind {kind!r}")
    if kernel < 1 or stride < 1:
        raise ArgumentError(f"pooling kernel and stride must be >= 1, got ({kernel}, {stride})")
    length = x.shape[-1]
    if kernel > length:
        raise DimensionError(f"pooling kernel {kernel} exceeds length {length}", axis="time")

    windows = sliding_window_view(x.data.astype(ACCUMULATOR), kernel, axis=-1)[..., ::stride, :]
    out_len = windows.shape[-2]
    stop = stride * (out_len - 1) + 1

    if kind == "avg":
        out = windows.mean(axis=-1)

        def backward_fn(g):
            grad = np.zeros(x.shape, dtype=ACCUMULATOR)
            share = g / kernel
            for k in range(kernel):
                grad[..., k:k + stop:stride] += share
            return (grad,)
    else:
        arg = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

        def backward_fn(g):
            grad = np.zeros(x.shape, dtype=ACCUMULATOR)
            for k in range(kernel):
                grad[..., k:k + stop:stride] += g * (arg == k)
            return (grad,)

    return _result(f"{kind}_pool", (x,), out, backward_fn)


def interpolation_matrix(source_len: int, target_len: int) -> np.ndarray:
    """
    [source_len, target_len] matrix of endpoint-aligned linear interpolation
    weights; x @ M resamples the last axis of x.
    """
    if target_len < 1:
        raise ArgumentError(f"target length must be >= 1, got {target_len}")
    if source_len < 1:
        raise DimensionError(f"source length must be >= 1, got {source_len}", axis="time")
    if source_len == 1 or target_len == 1:
        positions = np.zeros(target_len, dtype=ACCUMULATOR)
    else:
        positions = np.arange(target_len) * (source_len - 1) / (target_len - 1)
    low = np.minimum(np.floor(positions).astype(int), source_len - 1)
    high = np.minimum(low + 1, source_len - 1)
    frac = positions - low
    columns = np.arange(target_len)
    matrix = np.zeros((source_len, target_len), dtype=ACCUMULATOR)
    np.add.at(matrix, (low, columns), 1.0 - frac)
    np.add.at(matrix, (high, columns), frac)
    return matrix


def linear_upsample(x: Tensor, target_len: int) -> Tensor:
    """Linear interpolation of the last axis to target_len samples, endpoints aligned"""
    if target_len < 1:
        raise ArgumentError(f"target length must be >= 1, got {target_len}")
    matrix = interpolation_matrix(x.shape[-1], target_len)
    out = np.tensordot(x.data.astype(ACCUMULATOR), matrix, axes=([-1], [0]))

    def backward_fn(g):
        return (np.tensordot(g, matrix.T, axes=([-1], [0])),)

    return _result("upsample", (x,), out, backward_fn)


ArrayLike = Union[np.ndarray, Sequence[float], float]


def constant(data: ArrayLike) -> Tensor:
    """Tensor that never receives gradients (labels, masks)"""
    return Tensor(data, requires_grad=False)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)
