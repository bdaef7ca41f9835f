"""Finite-difference gradient checking and the registry of checkable ops."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .tensor import Tensor, grad


class UnregisteredOpError(KeyError):
    pass


class NonDifferentiablePoint(ValueError):
    """The finite-difference stencil does not resolve the function at this point.

    Raised when a perturbation flips a relu/leaky_relu branch, or when halving
    the step moves the central difference by more than the check can tolerate
    (curvature on the scale of the step, or rounding noise near a zero gradient).
    """


@dataclass(frozen=True)
class OpSpec:
    fn: Callable
    make_point: Callable  # rng -> list of input arrays


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)


REGISTRY: dict[str, OpSpec] = {
    "add": OpSpec(ops.add, lambda r: [r.standard_normal((3, 4)), r.standard_normal((1, 4))]),
    "sub": OpSpec(ops.sub, lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 1))]),
    "mul": OpSpec(ops.mul, lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 4))]),
    "div": OpSpec(ops.div, lambda r: [r.standard_normal((3, 4)), r.uniform(0.5, 2.0, (3, 4))]),
    "neg": OpSpec(ops.neg, lambda r: [r.standard_normal((5,))]),
    "matmul": OpSpec(ops.matmul, lambda r: [r.standard_normal((4, 3)), r.standard_normal((2, 3, 5))]),
    "conv2d": OpSpec(ops.conv2d, lambda r: [r.standard_normal((2, 3, 5, 5)), r.standard_normal((4, 3, 3, 3))]),
    "im2col": OpSpec(lambda x: ops.im2col(x, 3), lambda r: [r.standard_normal((2, 2, 4, 4))]),
    "col2im": OpSpec(lambda c: ops.col2im(c, (2, 2, 4, 4), 3), lambda r: [r.standard_normal((2, 18, 16))]),
    "upsample2x": OpSpec(ops.upsample2x, lambda r: [r.standard_normal((2, 3, 3, 3))]),
    "avgpool2x2": OpSpec(ops.avgpool2x2, lambda r: [r.standard_normal((2, 3, 4, 4))]),
    "leaky_relu": OpSpec(ops.leaky_relu, lambda r: [_away_from_zero(r, (3, 5))]),
    "relu": OpSpec(ops.relu, lambda r: [_away_from_zero(r, (3, 5))]),
    "tanh": OpSpec(ops.tanh, lambda r: [r.standard_normal((3, 5))]),
    "softmax": OpSpec(ops.softmax, lambda r: [r.standard_normal((3, 6))]),
    "log_softmax": OpSpec(ops.log_softmax, lambda r: [r.standard_normal((3, 6))]),
    "exp": OpSpec(ops.exp, lambda r: [r.standard_normal((4,))]),
    "log": OpSpec(ops.log, lambda r: [r.uniform(0.5, 3.0, (4,))]),
    "sum": OpSpec(lambda x: ops.sum(x, axis=1, keepdims=True), lambda r: [r.standard_normal((3, 4))]),
    "mean": OpSpec(lambda x: ops.mean(x, axis=(0, 2)), lambda r: [r.standard_normal((3, 4, 2))]),
    "sqrt": OpSpec(ops.sqrt, lambda r: [r.uniform(0.5, 3.0, (4,))]),
    "square": OpSpec(ops.square, lambda r: [r.standard_normal((4,))]),
    "safe_reciprocal": OpSpec(ops.safe_reciprocal, lambda r: [r.uniform(0.5, 3.0, (4,))]),
    "concat": OpSpec(lambda a, b: ops.concat([a, b], axis=1),
                     lambda r: [r.standard_normal((2, 3, 2)), r.standard_normal((2, 1, 2))]),
    "slice_axis": OpSpec(lambda x: ops.slice_axis(x, 1, 1, 3), lambda r: [r.standard_normal((2, 4))]),
    "pad_axis": OpSpec(lambda x: ops.pad_axis(x, 0, 1, 2), lambda r: [r.standard_normal((2, 3))]),
    "reshape": OpSpec(lambda x: ops.reshape(x, (6, 2)), lambda r: [r.standard_normal((3, 4))]),
    "transpose": OpSpec(lambda x: ops.transpose(x, (2, 0, 1)), lambda r: [r.standard_normal((2, 3, 4))]),
    "broadcast_to": OpSpec(lambda x: ops.broadcast_to(x, (3, 4)), lambda r: [r.standard_normal((1, 4))]),
    "sum_to": OpSpec(lambda x: ops.sum_to(x, (1, 4)), lambda r: [r.standard_normal((3, 4))]),
    "take_rows": OpSpec(lambda t: ops.take_rows(t, [2, 0, 2]), lambda r: [r.standard_normal((4, 3))]),
    "scatter_rows": OpSpec(lambda x: ops.scatter_rows(x, [1, 1, 3], 4), lambda r: [r.standard_normal((3, 2))]),
    "l2_norm": OpSpec(lambda x: ops.l2_norm(x, axis=1), lambda r: [r.standard_normal((3, 4))]),
}


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float((np.abs(a - n) / denom).max()) if a.size else 0.0


def numeric_grad(f, arrays, step=1e-5):
    """Central differences of scalar ``f(*arrays)`` for every input element."""
    out = []
    for i, base in enumerate(arrays):
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + step
            fp = f(*arrays)
            flat[j] = keep - step
            fm = f(*arrays)
            flat[j] = keep
            gflat[j] = (fp - fm) / (2.0 * step)
        out.append(g)
    return out


def grad_check(op, point, step=1e-5, seed=0):
    """Max relative error between analytic and central-difference gradients.

    ``op`` is a registered op tag or any callable mapping tensors to a tensor.
    The checked scalar is ``sum(op(*point) * w)`` for a fixed random ``w``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if isinstance(op, str):
        if op not in REGISTRY:
            raise UnregisteredOpError(f"op not registered: {op}")
        op = REGISTRY[op].fn
    arrays = [np.array(p, dtype=np.float64, copy=True) for p in point]
    probe = op(*[Tensor(a) for a in arrays])
    w = np.random.default_rng(seed).standard_normal(probe.shape)

    def scalar(*arrs):
        return float((op(*[Tensor(a) for a in arrs]).data * w).sum())

    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*ts)
    analytic = grad(ops.sum(ops.mul(out, w)), ts, allow_unused=True)
    analytic = [np.zeros_like(a) if g is None else g.data for a, g in zip(arrays, analytic)]
    numeric = numeric_grad(scalar, arrays, step)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def check_registered(tag, n_points=10, step=1e-5, seed=0):
    rng = np.random.default_rng(seed)
    spec = REGISTRY[tag]
    return max(grad_check(tag, spec.make_point(rng), step) for _ in range(n_points))


def grad_check_leaves(f, leaves, step=1e-5, seed=0, max_elements=None, resolve_tol=None):
    """Like :func:`grad_check` for a closure over existing leaf tensors.

    ``f()`` builds a tensor from ``leaves`` (for example a layer's parameters
    and its input). Leaves are perturbed in place and restored.

    A coordinate is unresolved when its stencil flips a relu/leaky_relu
    branch, or (with ``resolve_tol`` set) when its error reaches
    ``resolve_tol`` and re-differencing at ``step / 2`` moves the estimate by
    ``resolve_tol / 2`` relative or more. An analytic bug leaves both estimates
    in agreement, so it is still reported as an error.

    Without ``max_elements`` every coordinate is compared and any unresolved
    one raises :class:`NonDifferentiablePoint`. With it, up to that many
    random coordinates per leaf are compared, unresolved ones are replaced by
    fresh draws, and the point is rejected only if they outnumber the
    resolved ones.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rng = np.random.default_rng(seed)
    with ops.kink_monitor() as base:
        probe = f()
    w = rng.standard_normal(probe.shape)

    def evaluate():
        with ops.kink_monitor() as mon:
            val = float((f().data * w).sum())
        if any(not np.array_equal(a, b) for a, b in zip(base.masks, mon.masks)):
            raise NonDifferentiablePoint("finite-difference step crosses an activation kink")
        return val

    def central(flat, j, h):
        keep = flat[j]
        try:
            flat[j] = keep + h
            fp = evaluate()
            flat[j] = keep - h
            fm = evaluate()
        finally:
            flat[j] = keep
        return (fp - fm) / (2.0 * h)

    def resolved(flat, j, a):
        """Central difference at ``j`` or None if the stencil cannot be trusted."""
        try:
            num = central(flat, j, step)
            if resolve_tol is not None and relative_error(a, num) >= resolve_tol:
                if relative_error(num, central(flat, j, step / 2)) >= resolve_tol / 2:
                    raise NonDifferentiablePoint("central difference not converged at this step")
        except NonDifferentiablePoint:
            if max_elements is None:
                raise
            return None
        return num

    analytic = grad(ops.sum(ops.mul(f(), w)), leaves, allow_unused=True)
    worst = 0.0
    for leaf, g in zip(leaves, analytic):
        g = np.zeros(leaf.shape) if g is None else g.data.reshape(-1)
        leaf.data = np.ascontiguousarray(leaf.data)
        flat = leaf.data.reshape(-1)
        order = np.arange(flat.size) if max_elements is None else rng.permutation(flat.size)
        want = flat.size if max_elements is None else min(max_elements, flat.size)
        a_list, n_list, skipped = [], [], 0
        for j in order:
            if len(n_list) == want:
                break
            num = resolved(flat, j, g.reshape(-1)[j])
            if num is None:
                skipped += 1
                continue
            a_list.append(g.reshape(-1)[j])
            n_list.append(num)
        if skipped > len(n_list):
            raise NonDifferentiablePoint(f"{skipped} of {skipped + len(n_list)} coordinates unresolved")
        worst = max(worst, relative_error(a_list, n_list))
    return worst
