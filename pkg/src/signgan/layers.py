"""Differentiable building blocks for the generator and critic."""
from __future__ import annotations

import math

import numpy as np

from .autodiff import GraphError, Tensor, as_tensor
from .autodiff import ops

EPS = 1e-8


class Module:
    """Minimal parameter container.

    Parameters are leaf tensors with ``requires_grad=True`` stored as
    attributes; child modules may be attributes or lists of modules.
    Iteration order is attribute definition order, so names are stable.
    """

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad and val.node is None:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return dict(self.named_parameters())

    def load_parameters(self, arrays):
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()


def count_parameters(net):
    return int(sum(p.size for p in net.parameters().values()))


def _param(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def activate(x, activation):
    if activation == "leaky_relu":
        return ops.leaky_relu(x, 0.2)
    if activation == "relu":
        return ops.relu(x)
    if activation == "tanh":
        return ops.tanh(x)
    if activation == "linear":
        return x
    raise ValueError(f"unknown activation {activation!r}")


def weight_standardize(w):
    """Standardize each row of a 2-D weight matrix.

    Rows are shifted to zero mean and divided by
    ``sqrt(mean(w**2) - mean(w)**2 + EPS)``.
    """
    w = as_tensor(w)
    mu = ops.mean(w, axis=1, keepdims=True)
    var = ops.sub(ops.mean(ops.square(w), axis=1, keepdims=True), ops.square(mu))
    sigma = ops.sqrt(ops.add(var, EPS))
    return ops.div(ops.sub(w, mu), sigma)


def weight_standardize_np(w):
    w = np.asarray(w, dtype=np.float64)
    mu = w.mean(axis=1, keepdims=True)
    sigma = np.sqrt((w * w).mean(axis=1, keepdims=True) - mu * mu + EPS)
    return (w - mu) / sigma


class WSConv2d(Module):
    """Convolution whose raw weights are standardized on every forward pass.

    ``gain`` selects an optional fan-in scale ``sqrt(gain / (I*k*k))`` applied
    to the standardized weights; ``gain=None`` uses them unscaled.
    """

    def __init__(self, in_ch, out_ch, k=3, activation="leaky_relu", gain=None, rng=None, bias=True):
        if k not in (1, 3):
            raise ValueError("kernel size must be 1 or 3")
        rng = np.random.default_rng() if rng is None else rng
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        self.activation = activation
        fan_in = in_ch * k * k
        self.scale = 1.0 if gain is None else math.sqrt(gain / fan_in)
        self.weight = _param(rng.standard_normal((out_ch, in_ch, k, k)))
        self.bias = _param(np.zeros(out_ch)) if bias else None

    def standardized_weight(self):
        flat = ops.reshape(self.weight, (self.out_ch, self.in_ch * self.k * self.k))
        w = weight_standardize(flat)
        if self.scale != 1.0:
            w = ops.mul(w, self.scale)
        return ops.reshape(w, self.weight.shape)

    def __call__(self, x):
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise GraphError(f"WSConv2d expected (B,{self.in_ch},H,W), got {x.shape}")
        y = ops.conv2d(x, self.standardized_weight(), self.bias)
        return activate(y, self.activation)


class Linear(Module):
    """Fully connected layer; weights are N(0,1) scaled at runtime by sqrt(gain/fan_in)."""

    def __init__(self, in_features, out_features, activation="linear", gain=1.0, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.in_features, self.out_features = in_features, out_features
        self.activation = activation
        self.scale = math.sqrt(gain / in_features)
        self.weight = _param(rng.standard_normal((out_features, in_features)))
        self.bias = _param(np.zeros(out_features))

    def __call__(self, x):
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise GraphError(f"Linear expected (B,{self.in_features}), got {x.shape}")
        w = ops.mul(self.weight, self.scale)
        y = ops.add(ops.matmul(x, ops.transpose(w)), self.bias)
        return activate(y, self.activation)


class Embedding(Module):
    def __init__(self, n_classes, dim, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.n_classes, self.dim = n_classes, dim
        self.table = _param(rng.standard_normal((n_classes, dim)))

    def __call__(self, ids):
        ids = np.atleast_1d(np.asarray(ids))
        if ids.dtype.kind not in "iu":
            raise TypeError("class ids must be integers")
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_classes):
            raise IndexError(f"class id out of range [0, {self.n_classes})")
        return ops.take_rows(self.table, ids)


def embed_label(class_id, table):
    """Row ``class_id`` of an embedding ``table`` (K x E) as an E-vector."""
    table = as_tensor(table)
    if not 0 <= int(class_id) < table.shape[0]:
        raise IndexError(f"class id {class_id} out of range [0, {table.shape[0]})")
    return ops.reshape(ops.take_rows(table, [int(class_id)]), (table.shape[1],))


def pixel_norm(x, eps=EPS):
    """Normalize the channel vector at every spatial location to unit RMS."""
    x = as_tensor(x)
    axis = 1 if x.ndim == 4 else 0
    ms = ops.mean(ops.square(x), axis=axis, keepdims=True)
    return ops.div(x, ops.sqrt(ops.add(ms, eps)))


def fade_blend(prev, cur, alpha):
    """``(1 - alpha) * prev + alpha * cur``; ``alpha`` is a float or scalar tensor."""
    prev, cur = as_tensor(prev), as_tensor(cur)
    if prev.shape != cur.shape:
        raise GraphError(f"fade_blend shape mismatch {prev.shape} vs {cur.shape}")
    a = alpha.data if isinstance(alpha, Tensor) else alpha
    a = float(np.asarray(a).reshape(-1)[0])
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {a}")
    if not isinstance(alpha, Tensor):
        if a == 0.0:
            return prev
        if a == 1.0:
            return cur
        return ops.add(ops.mul(prev, 1.0 - a), ops.mul(cur, a))
    return ops.add(ops.mul(prev, ops.sub(1.0, alpha)), ops.mul(cur, alpha))


def minibatch_stddev(x, eps=EPS):
    """Append one feature map holding the batch-averaged per-feature std."""
    x = as_tensor(x)
    B, _, H, W = x.shape
    mu = ops.mean(x, axis=0, keepdims=True)
    var = ops.mean(ops.square(ops.sub(x, mu)), axis=0)
    std = ops.sqrt(ops.add(var, eps))
    s = ops.reshape(ops.mean(std), (1, 1, 1, 1))
    return ops.concat([x, ops.broadcast_to(s, (B, 1, H, W))], axis=1)


class SelfAttention(Module):
    """Self-attention over all spatial positions with a residual gate.

    Query and key are 1x1 projections to C/8 channels, the value a 1x1
    projection to C channels followed by ReLU. The attended values pass an
    output projection and are added back scaled by ``gamma`` (initially 0).
    """

    def __init__(self, channels, rng=None):
        if channels % 8:
            raise ValueError("attention width must be divisible by 8")
        rng = np.random.default_rng() if rng is None else rng
        c8 = channels // 8
        self.channels = channels
        self.query = WSConv2d(channels, c8, 1, "linear", gain=1.0, rng=rng)
        # a key bias adds a per-row constant to the logits, which softmax ignores
        self.key = WSConv2d(channels, c8, 1, "linear", gain=1.0, rng=rng, bias=False)
        self.value = WSConv2d(channels, channels, 1, "relu", gain=2.0, rng=rng)
        self.out = WSConv2d(channels, channels, 1, "linear", gain=1.0, rng=rng)
        self.gamma = _param(np.zeros(1))

    def attention_map(self, x):
        """Row-stochastic (B, N, N) attention weights, N = H*W."""
        x = as_tensor(x)
        B, C, H, W = x.shape
        n = H * W
        f = ops.reshape(self.query(x), (B, C // 8, n))
        g = ops.reshape(self.key(x), (B, C // 8, n))
        return ops.softmax(ops.matmul(ops.swapaxes(f, 1, 2), g), axis=-1)

    def __call__(self, x):
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise GraphError(f"SelfAttention expected (B,{self.channels},H,W), got {x.shape}")
        B, C, H, W = x.shape
        beta = self.attention_map(x)
        h = ops.reshape(self.value(x), (B, C, H * W))
        o = ops.reshape(ops.matmul(h, ops.swapaxes(beta, 1, 2)), (B, C, H, W))
        return ops.add(x, ops.mul(self.gamma, self.out(o)))


def to_rgb(channels, rng=None):
    """1x1 standardized conv from ``channels`` feature maps to 3 linear RGB channels."""
    return WSConv2d(channels, 3, 1, "linear", gain=1.0, rng=rng)


def from_rgb(channels, rng=None):
    """1x1 standardized conv from RGB plus label map (4 channels) to ``channels``."""
    return WSConv2d(4, channels, 1, "leaky_relu", gain=2.0, rng=rng)
