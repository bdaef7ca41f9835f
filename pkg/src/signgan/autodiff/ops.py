"""Differentiable operations.

Each backward rule is written in terms of these same operations so that it
can be recorded and differentiated again.
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from .tensor import GraphError, Tensor, as_tensor, record

# When set to a list, piecewise-linear ops append their branch masks to it,
# letting a gradient checker detect stencils that straddle a kink.
_kink_log = None


class kink_monitor:
    """Collect the branch masks of every relu/leaky_relu evaluated inside."""

    def __enter__(self):
        global _kink_log
        self._prev, self.masks = _kink_log, []
        _kink_log = self.masks
        return self

    def __exit__(self, *exc):
        global _kink_log
        _kink_log = self._prev
        return False


def _unbroadcast_shape_ok(src, dst):
    try:
        return np.broadcast_shapes(src, dst) == src
    except ValueError:
        return False


# ---------------------------------------------------------------- shape ops

def broadcast_to(x, shape):
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape).copy()

    def bw(g, out, needs):
        return (sum_to(g, x.shape),)

    return record("broadcast_to", data, (x,), bw, check=False)


def sum_to(x, shape):
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    x = as_tensor(x)
    shape = tuple(shape)
    if x.shape == shape:
        return x
    if not _unbroadcast_shape_ok(x.shape, shape):
        raise GraphError(f"cannot sum shape {x.shape} to {shape}")
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True).reshape(shape)

    def bw(g, out, needs):
        return (broadcast_to(g, x.shape),)

    return record("sum_to", data, (x,), bw, check=False)


def reshape(x, shape):
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def bw(g, out, needs):
        return (reshape(g, x.shape),)

    return record("reshape", data, (x,), bw, check=False)


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = x.data.transpose(axes)

    def bw(g, out, needs):
        return (transpose(g, inv),)

    return record("transpose", data, (x,), bw, check=False)


def swapaxes(x, a, b):
    axes = list(range(as_tensor(x).ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def slice_axis(x, axis, start, stop):
    x = as_tensor(x)
    axis = axis % x.ndim
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    data = x.data[tuple(idx)].copy()
    before, after = start, x.shape[axis] - stop

    def bw(g, out, needs):
        return (pad_axis(g, axis, before, after),)

    return record("slice_axis", data, (x,), bw, check=False)


def pad_axis(x, axis, before, after):
    x = as_tensor(x)
    axis = axis % x.ndim
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    data = np.pad(x.data, widths)
    n = x.shape[axis]

    def bw(g, out, needs):
        return (slice_axis(g, axis, before, before + n),)

    return record("pad_axis", data, (x,), bw, check=False)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g, out, needs):
        return tuple(
            slice_axis(g, axis, int(bounds[i]), int(bounds[i + 1])) if needs[i] else None
            for i in range(len(tensors))
        )

    return record("concat", data, tensors, bw, check=False)


def take_rows(table, ids):
    """Row lookup ``table[ids]``; ``ids`` is an integer array."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]
    n = table.shape[0]

    def bw(g, out, needs):
        return (scatter_rows(g, ids, n),)

    return record("take_rows", data, (table,), bw, check=False)


def scatter_rows(x, ids, n):
    """Adjoint of :func:`take_rows`: add rows of ``x`` into an ``n``-row table."""
    x = as_tensor(x)
    ids = np.asarray(ids, dtype=np.int64)
    data = np.zeros((n,) + x.shape[1:])
    np.add.at(data, ids, x.data)

    def bw(g, out, needs):
        return (take_rows(g, ids),)

    return record("scatter_rows", data, (x,), bw, check=False)


# ----------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, out, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                sum_to(g, b.shape) if needs[1] else None)

    return record("add", a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, out, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                neg(sum_to(g, b.shape)) if needs[1] else None)

    return record("sub", a.data - b.data, (a, b), bw)


def neg(a):
    a = as_tensor(a)

    def bw(g, out, needs):
        return (neg(g),)

    return record("neg", -a.data, (a,), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, out, needs):
        return (sum_to(mul(g, b), a.shape) if needs[0] else None,
                sum_to(mul(g, a), b.shape) if needs[1] else None)

    return record("mul", a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g, out, needs):
        ga = sum_to(div(g, b), a.shape) if needs[0] else None
        gb = sum_to(neg(div(mul(g, out), b)), b.shape) if needs[1] else None
        return ga, gb

    return record("div", a.data / b.data, (a, b), bw)


def square(x):
    x = as_tensor(x)

    def bw(g, out, needs):
        return (mul(g, mul(x, 2.0)),)

    return record("square", x.data * x.data, (x,), bw)


def sqrt(x):
    x = as_tensor(x)

    def bw(g, out, needs):
        return (div(mul(g, 0.5), out),)

    with np.errstate(invalid="ignore"):
        data = np.sqrt(x.data)
    return record("sqrt", data, (x,), bw)


def safe_reciprocal(x):
    """``1/x`` where ``x != 0``, else 0 (derivative 0 there as well)."""
    x = as_tensor(x)
    nz = x.data != 0
    data = np.divide(1.0, x.data, out=np.zeros_like(x.data), where=nz)

    def bw(g, out, needs):
        return (neg(mul(g, square(out))),)

    return record("safe_reciprocal", data, (x,), bw)


def exp(x):
    x = as_tensor(x)

    def bw(g, out, needs):
        return (mul(g, out),)

    return record("exp", np.exp(x.data), (x,), bw)


def log(x):
    x = as_tensor(x)

    def bw(g, out, needs):
        return (div(g, x),)

    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)
    return record("log", data, (x,), bw)


def tanh(x):
    x = as_tensor(x)

    def bw(g, out, needs):
        return (mul(g, sub(1.0, square(out))),)

    return record("tanh", np.tanh(x.data), (x,), bw)


def relu(x):
    x = as_tensor(x)
    if _kink_log is not None:
        _kink_log.append(x.data > 0)

    def bw(g, out, needs):
        return (mul(g, (x.data > 0).astype(np.float64)),)

    return record("relu", np.maximum(x.data, 0.0), (x,), bw)


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    if _kink_log is not None:
        _kink_log.append(x.data > 0)

    def bw(g, out, needs):
        return (mul(g, np.where(x.data > 0, 1.0, slope)),)

    if 0.0 <= slope <= 1.0:
        data = np.maximum(x.data, x.data * slope)
    else:
        data = np.where(x.data > 0, x.data, x.data * slope)
    return record("leaky_relu", data, (x,), bw)


# ------------------------------------------------------------ reductions

def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)
    kshape = x.data.sum(axis=axis, keepdims=True).shape

    def bw(g, out, needs):
        return (broadcast_to(reshape(g, kshape), x.shape),)

    return record("sum", data, (x,), bw)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def l2_norm(x, axis=None, keepdims=False):
    """Euclidean norm over ``axis``; its gradient at a zero vector is taken as 0."""
    x = as_tensor(x)
    data = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=keepdims))
    kshape = x.data.sum(axis=axis, keepdims=True).shape

    def bw(g, out, needs):
        scale = mul(reshape(g, kshape), safe_reciprocal(reshape(out, kshape)))
        return (mul(x, broadcast_to(scale, x.shape)),)

    return record("l2_norm", data, (x,), bw)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g, out, needs):
        s = sum(mul(g, out), axis=axis, keepdims=True)
        return (mul(out, sub(g, s)),)

    return record("softmax", data, (x,), bw)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))
    data = x.data - lse

    def bw(g, out, needs):
        return (sub(g, mul(exp(out), sum(g, axis=axis, keepdims=True))),)

    return record("log_softmax", data, (x,), bw)


# ---------------------------------------------------------- linear algebra

def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise GraphError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise GraphError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g, out, needs):
        ga = sum_to(matmul(g, swapaxes(b, -1, -2)), a.shape) if needs[0] else None
        gb = sum_to(matmul(swapaxes(a, -1, -2), g), b.shape) if needs[1] else None
        return ga, gb

    return record("matmul", np.matmul(a.data, b.data), (a, b), bw)


# ------------------------------------------------------------ image ops

def im2col(x, k):
    x = as_tensor(x)

    def bw(g, out, needs):
        return (col2im(g, x.shape, k),)

    return record("im2col", kernels.im2col(x.data, k), (x,), bw, check=False)


def col2im(c, shape, k):
    c = as_tensor(c)
    shape = tuple(shape)

    def bw(g, out, needs):
        return (im2col(g, k),)

    return record("col2im", kernels.col2im(c.data, shape, k), (c,), bw, check=False)


def conv2d(x, w, bias=None):
    """Stride-1 convolution with zero same-padding; ``w`` is (O, I, k, k)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise GraphError("conv2d expects x (B,C,H,W) and w (O,I,k,k)")
    B, C, H, W = x.shape
    O, I, k, k2 = w.shape
    if I != C:
        raise GraphError(f"conv2d channel mismatch: input has {C}, weight expects {I}")
    if k != k2 or k % 2 != 1:
        raise GraphError("conv2d supports square odd kernels only")
    cols = reshape(x, (B, C, H * W)) if k == 1 else im2col(x, k)
    y = matmul(reshape(w, (O, I * k * k)), cols)
    y = reshape(y, (B, O, H, W))
    if bias is not None:
        y = add(y, reshape(bias, (1, O, 1, 1)))
    return y


def upsample2x(x):
    """Nearest-neighbour upsampling by 2 on the last two axes."""
    x = as_tensor(x)
    data = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def bw(g, out, needs):
        return (mul(avgpool2x2(g), 4.0),)

    return record("upsample2x", data, (x,), bw, check=False)


def avgpool2x2(x):
    """2x2 average pooling on the last two axes."""
    x = as_tensor(x)
    *lead, H, W = x.shape
    if H % 2 or W % 2:
        raise GraphError(f"avgpool2x2 needs even spatial size, got {H}x{W}")
    data = x.data.reshape(*lead, H // 2, 2, W // 2, 2).mean(axis=(-3, -1))

    def bw(g, out, needs):
        return (mul(upsample2x(g), 0.25),)

    return record("avgpool2x2", data, (x,), bw, check=False)


def flatten(x):
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1))
