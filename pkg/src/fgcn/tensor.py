"""Dense tensors with reverse-mode differentiation on top of numpy.

Every operation that participates in training builds its output ``Tensor``
with a backward closure; :func:`backward` replays the recorded closures in
reverse topological order and accumulates gradients on every tensor that
requires them. Tensors are immutable after creation except for optimizer
updates on leaf parameters, so a recorded graph stays valid until it is
consumed by a backward pass.

Double precision is the default so finite-difference checks stay tight;
single precision is available through :func:`resolve_dtype`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

DTYPES = {"double": np.float64, "single": np.float32}


def resolve_dtype(precision):
    """Map a precision name ("double" | "single") to a numpy dtype."""
    try:
        return DTYPES[precision]
    except KeyError:
        raise ShapeError(f"unknown precision {precision!r}, expected one of {sorted(DTYPES)}")


class Tensor:
    """A dense array plus the bookkeeping needed to backpropagate through it."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_children", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._children = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        """A defensive copy of the underlying array."""
        return np.array(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad}{tag})"


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=dtype)
    return Tensor(arr)


def constant(value, dtype=np.float64):
    """A non-trainable tensor (adjacency matrices, fusion weights, masks of weights)."""
    return Tensor(np.asarray(value, dtype=dtype))


def parameter(value, name, dtype=np.float64):
    """A trainable leaf tensor."""
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=True, name=name)


@dataclass(frozen=True)
class LayerConfig:
    """Kernel geometry of one spatial-temporal layer.

    ``spatial_kernel`` is the number of neighborhood subsets consumed by the
    spatial aggregation, ``temporal_kernel`` the 1-D kernel size along time
    (odd, so padding is symmetric), ``channels`` the output width.
    """

    spatial_kernel: int
    temporal_kernel: int
    channels: int
    stride: int = 1

    def __post_init__(self):
        if self.temporal_kernel % 2 == 0:
            raise ShapeError(f"temporal kernel must be odd, got {self.temporal_kernel}")
        if self.channels < 1:
            raise ShapeError(f"channels must be >= 1, got {self.channels}")
        if self.stride not in (1, 2):
            raise ShapeError(f"stride must be 1 or 2, got {self.stride}")
        if self.spatial_kernel < 1:
            raise ShapeError(f"spatial kernel must be >= 1, got {self.spatial_kernel}")


# ---------------------------------------------------------------------------
# graph plumbing


def _accum(t, g):
    # Rebinding accumulation: gradients are never mutated in place, so views
    # and shared buffers may be handed over safely.
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _result(data, inputs, make_backward):
    out = Tensor(data)
    tracked = tuple(t for t in inputs if t.requires_grad)
    if tracked:
        out.requires_grad = True
        out._children = tracked
        out._backward = make_backward(out)
    return out


def _toposort(root):
    order = []
    seen = {id(root)}
    stack = [(root, iter(root._children))]
    while stack:
        node, children = stack[-1]
        for child in children:
            if id(child) not in seen:
                seen.add(id(child))
                stack.append((child, iter(child._children)))
                break
        else:
            order.append(node)
            stack.pop()
    return order


def backward(loss):
    """Backpropagate from a scalar loss; consumes the recorded graph.

    Gradients are accumulated on every tensor with ``requires_grad`` that is
    reachable from ``loss``. The graph is released afterwards, so a second
    backward pass through the same operations is not possible.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise ShapeError("loss is not connected to any trainable tensor")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()
    for node in order:
        node._children = ()
        node._backward = None


# ---------------------------------------------------------------------------
# elementwise and linear operations


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def make_backward(out):
        def run():
            if a.requires_grad:
                _accum(a, _unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(out.grad, b.data.shape))
        return run

    return _result(data, (a, b), make_backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def make_backward(out):
        def run():
            if a.requires_grad:
                _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))
        return run

    return _result(data, (a, b), make_backward)


def scale(x, factor):
    """Multiply by a plain python scalar."""
    x = as_tensor(x)
    factor = float(factor)

    def make_backward(out):
        def run():
            _accum(x, out.grad * factor)
        return run

    return _result(x.data * factor, (x,), make_backward)


def neg(x):
    return scale(x, -1.0)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def make_backward(out):
        def run():
            _accum(x, out.grad * mask)
        return run

    return _result(np.maximum(x.data, 0), (x,), make_backward)


def matmul(a, b):
    """Matrix product; leading dimensions broadcast, last two contract."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def make_backward(out):
        def run():
            if a.requires_grad:
                ga = out.grad @ np.swapaxes(b.data, -1, -2)
                _accum(a, _unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ out.grad
                _accum(b, _unbroadcast(gb, b.data.shape))
        return run

    return _result(data, (a, b), make_backward)


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def make_backward(out):
        def run():
            _accum(x, out.grad.transpose(inverse))
        return run

    return _result(x.data.transpose(axes), (x,), make_backward)


def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")

    def make_backward(out):
        def run():
            _accum(x, out.grad.reshape(x.data.shape))
        return run

    return _result(data, (x,), make_backward)


def concat_channels(parts):
    """Concatenate along the channel axis (axis 1); gradient splits back."""
    if not parts:
        raise ShapeError("concat_channels: empty input list")
    parts = [as_tensor(p) for p in parts]
    base = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(base) or p.shape[:1] != base[:1] or p.shape[2:] != base[2:]:
            raise ShapeError(
                f"concat_channels: non-channel dims differ: {base} vs {p.shape}")
    sizes = [p.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    data = np.concatenate([p.data for p in parts], axis=1)

    def make_backward(out):
        def run():
            for p, start, size in zip(parts, offsets, sizes):
                if p.requires_grad:
                    _accum(p, out.grad[:, start:start + size])
        return run

    return _result(data, tuple(parts), make_backward)


# ---------------------------------------------------------------------------
# reductions


def sum_axes(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    data = x.data.sum(axis=axes)

    def make_backward(out):
        def run():
            g = np.expand_dims(out.grad, axes)
            _accum(x, np.broadcast_to(g, x.data.shape))
        return run

    return _result(data, (x,), make_backward)


def mean_axes(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    count = 1
    for ax in axes:
        count *= x.shape[ax]
    data = x.data.mean(axis=axes)

    def make_backward(out):
        def run():
            g = np.expand_dims(out.grad, axes) / count
            _accum(x, np.broadcast_to(g, x.data.shape))
        return run

    return _result(data, (x,), make_backward)


def mean_all(x):
    x = as_tensor(x)
    size = x.data.size

    def make_backward(out):
        def run():
            _accum(x, np.broadcast_to(out.grad / size, x.data.shape))
        return run

    return _result(np.asarray(x.data.mean()), (x,), make_backward)


def global_average_pool(x):
    """Mean over the time and vertex axes of a (batch, channel, time, vertex) tensor."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_average_pool expects rank-4 input, got {x.shape}")
    return mean_axes(x, (2, 3))


# ---------------------------------------------------------------------------
# convolution and normalization


def temporal_conv(x, weights, stride=1):
    """Per-vertex 1-D convolution along time with weights shared across vertices.

    ``x`` is (batch, in_ch, time, vertex); ``weights`` is (out_ch, in_ch, k)
    with odd k. Symmetric zero padding of (k-1)/2 keeps the output time
    length at ceil(time / stride).
    """
    x, weights = as_tensor(x), as_tensor(weights)
    if x.ndim != 4:
        raise ShapeError(f"temporal_conv expects rank-4 input, got {x.shape}")
    if weights.ndim != 3:
        raise ShapeError(f"temporal_conv expects rank-3 weights, got {weights.shape}")
    cout, cin, k = weights.shape
    if k % 2 == 0:
        raise ShapeError(f"temporal kernel must be odd, got {k}")
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    if cin != x.shape[1]:
        raise ShapeError(
            f"temporal_conv: input channels {x.shape} do not match weights {weights.shape}")

    batch, _, t, v = x.shape
    pad = (k - 1) // 2
    xp = np.zeros((batch, cin, t + 2 * pad, v), dtype=x.data.dtype)
    xp[:, :, pad:pad + t] = x.data
    tout = (t + 2 * pad - k) // stride + 1
    span = stride * (tout - 1) + 1
    w = weights.data

    data = np.zeros((batch, cout, tout, v), dtype=x.data.dtype)
    for d in range(k):
        seg = xp[:, :, d:d + span:stride]
        data += np.tensordot(w[:, :, d], seg, axes=(1, 1)).transpose(1, 0, 2, 3)

    def make_backward(out):
        def run():
            g = out.grad
            if weights.requires_grad:
                gw = np.zeros_like(w)
                for d in range(k):
                    seg = xp[:, :, d:d + span:stride]
                    gw[:, :, d] = np.tensordot(g, seg, axes=([0, 2, 3], [0, 2, 3]))
                _accum(weights, gw)
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for d in range(k):
                    gxp[:, :, d:d + span:stride] += np.tensordot(
                        w[:, :, d], g, axes=(0, 1)).transpose(1, 0, 2, 3)
                _accum(x, gxp[:, :, pad:pad + t])
        return run

    return _result(data, (x, weights), make_backward)


def channel_norm(x, gamma, beta, running_mean, running_var, train,
                 momentum=0.1, eps=1e-5):
    """Standardize each channel over (batch, time, vertex).

    In train mode the batch statistics are used and the running buffers
    (plain numpy arrays, mutated in place) are updated; in eval mode the
    running statistics are used as constants. Fresh buffers start at mean 0,
    variance 1.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"channel_norm expects rank-4 input, got {x.shape}")
    axes = (0, 2, 3)
    if train:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.copy()
        var = running_var.copy()
    std = np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) / std[None, :, None, None]
    data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def make_backward(out):
        def run():
            g = out.grad
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=axes))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=axes))
            if x.requires_grad:
                gscaled = g * gamma.data[None, :, None, None]
                if train:
                    gx = (gscaled
                          - gscaled.mean(axis=axes, keepdims=True)
                          - xhat * (gscaled * xhat).mean(axis=axes, keepdims=True))
                    gx = gx / std[None, :, None, None]
                else:
                    gx = gscaled / std[None, :, None, None]
                _accum(x, gx)
        return run

    return _result(data, (x, gamma, beta), make_backward)


# ---------------------------------------------------------------------------
# classification tail


def softmax(logits):
    """Row-wise softmax over the last axis, computed with max subtraction."""
    logits = as_tensor(logits)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def make_backward(out):
        def run():
            inner = (out.grad * s).sum(axis=-1, keepdims=True)
            _accum(logits, s * (out.grad - inner))
        return run

    return _result(s, (logits,), make_backward)


def log_clamped(x, floor=1e-12):
    """Natural log with the argument clamped below at ``floor``."""
    x = as_tensor(x)
    clamped = np.maximum(x.data, floor)
    data = np.log(clamped)

    def make_backward(out):
        def run():
            _accum(x, np.where(x.data > floor, out.grad / clamped, 0.0))
        return run

    return _result(data, (x,), make_backward)


def gather_rows(x, index):
    """Pick one entry per row of a (rows, cols) tensor: out[i] = x[i, index[i]]."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if x.ndim != 2:
        raise ShapeError(f"gather_rows expects rank-2 input, got {x.shape}")
    if index.shape != (x.shape[0],):
        raise ShapeError(f"gather_rows: index shape {index.shape} does not fit {x.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[1]):
        raise ShapeError(f"gather_rows: index out of range for {x.shape}")
    rows = np.arange(x.shape[0])
    data = x.data[rows, index]

    def make_backward(out):
        def run():
            buf = np.zeros_like(x.data)
            buf[rows, index] = out.grad
            _accum(x, buf)
        return run

    return _result(data, (x,), make_backward)
