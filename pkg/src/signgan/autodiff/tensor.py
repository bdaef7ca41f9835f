"""Dense float64 tensors with reverse-mode differentiation.

Every differentiable operation appends a :class:`Node` to the computation
graph. Backward rules are themselves written with differentiable operations,
so a backward pass run with ``create_graph=True`` records its own nodes and
can be differentiated again (double backprop).
"""
from __future__ import annotations

import contextlib
import itertools
import threading
import weakref

import numpy as np

_ids = itertools.count()


class GraphError(RuntimeError):
    """Misuse of the computation graph (disconnected node, frozen graph...)."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""

    def __init__(self, tag, node_id, where="forward"):
        self.tag = tag
        self.node_id = node_id
        super().__init__(f"non-finite {where} value produced by op '{tag}' (node {node_id})")


class _Mode(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.in_backward = False
        self.running_backward = False
        self.graphs = []


_mode = _Mode()


@contextlib.contextmanager
def no_grad():
    prev = _mode.grad_enabled
    _mode.grad_enabled = False
    try:
        yield
    finally:
        _mode.grad_enabled = prev


@contextlib.contextmanager
def enable_grad():
    prev = _mode.grad_enabled
    _mode.grad_enabled = True
    try:
        yield
    finally:
        _mode.grad_enabled = prev


def is_grad_enabled():
    return _mode.grad_enabled


class Graph:
    """Append-only record of the nodes created while it is active.

    Use as a context manager. A frozen graph refuses new nodes, which makes
    repeated backward passes over it side-effect free.
    """

    def __init__(self):
        self.nodes = []
        self.frozen = False

    def __enter__(self):
        _mode.graphs.append(self)
        return self

    def __exit__(self, *exc):
        _mode.graphs.remove(self)
        return False

    def freeze(self):
        self.frozen = True
        return self

    def _append(self, node):
        if self.frozen:
            raise GraphError(f"cannot record op '{node.tag}' into a frozen graph")
        self.nodes.append(node)

    def __len__(self):
        return len(self.nodes)


class Node:
    __slots__ = ("tag", "inputs", "backward_fn", "id", "from_backward", "second_order", "out_ref")

    def __init__(self, tag, inputs, backward_fn, node_id, second_order):
        self.tag = tag
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.id = node_id
        self.from_backward = _mode.in_backward
        self.second_order = second_order
        self.out_ref = None

    def __repr__(self):
        return f"Node({self.tag!r}, id={self.id}, inputs={[t.id for t in self.inputs]})"


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "id", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = self.node.tag if self.node is not None else ("leaf" if self.requires_grad else "const")
        return f"Tensor(shape={self.shape}, {tag}, id={self.id})"

    # operator sugar; defined in ops to avoid an import cycle
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __neg__(self):
        return _ops().neg(self)

    def __matmul__(self, other):
        return _ops().matmul(self, other)


def _ops():
    from . import ops
    return ops


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def check_finite(arr, tag, node_id, where="forward"):
    # one summation pass; NaN/Inf anywhere makes the sum non-finite
    if not np.isfinite(np.add.reduce(arr, axis=None)) and not np.isfinite(arr).all():
        raise NonFiniteError(tag, node_id, where)


def record(tag, data, inputs, backward_fn, second_order=True, check=True):
    """Wrap ``data`` as the output of op ``tag`` applied to ``inputs``.

    ``backward_fn(g, out, needs)`` receives the output gradient, the output
    tensor and a per-input bool mask, and returns one gradient (or None) per
    input. Pure data-movement ops pass ``check=False``: they cannot create
    non-finite values.
    """
    out = Tensor(data)
    if check:
        check_finite(out.data, tag, out.id, "gradient" if _mode.running_backward else "forward")
    if _mode.grad_enabled and any(t.requires_grad for t in inputs):
        if _mode.in_backward and not second_order:
            raise GraphError(f"op '{tag}' has no second-derivative rule")
        node = Node(tag, tuple(inputs), backward_fn, out.id, second_order)
        node.out_ref = weakref.ref(out)
        out.node = node
        out.requires_grad = True
        for g in _mode.graphs:
            g._append(node)
    return out


class GradMap(dict):
    """Gradients keyed by tensor id; also indexable by the tensor itself."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.id
        return dict.__getitem__(self, key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.id
        return dict.__contains__(self, key)

    def get(self, key, default=None):
        if isinstance(key, Tensor):
            key = key.id
        return dict.get(self, key, default)


def _topo(outputs):
    """Tensors reachable from ``outputs`` that require grad, by id ascending."""
    seen = {}
    stack = [t for t in outputs if t.requires_grad]
    while stack:
        t = stack.pop()
        if t.id in seen:
            continue
        seen[t.id] = t
        if t.node is not None:
            stack.extend(i for i in t.node.inputs if i.requires_grad and i.id not in seen)
    return [seen[k] for k in sorted(seen)]


def _run_backward(outputs, seeds, targets, create_graph, keep_all):
    order = _topo(outputs)
    if targets is not None:
        target_ids = {t.id for t in targets}
        leads = {}
        for t in order:
            hit = t.id in target_ids
            if not hit and t.node is not None:
                hit = any(leads.get(i.id, False) for i in t.node.inputs)
            leads[t.id] = hit
    else:
        leads = {t.id: True for t in order}

    grads = {}
    for out, seed in zip(outputs, seeds):
        if not out.requires_grad or not leads.get(out.id, False):
            continue
        grads[out.id] = seed if out.id not in grads else _ops().add(grads[out.id], seed)

    result = GradMap()
    prev_in_backward, prev_running = _mode.in_backward, _mode.running_backward
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        _mode.in_backward = create_graph
        _mode.running_backward = True
        try:
            for t in reversed(order):
                g = grads.pop(t.id, None)
                if g is None:
                    continue
                if keep_all or (targets is not None and t.id in target_ids):
                    check_finite(g.data, t.node.tag if t.node else "leaf", t.id, where="gradient")
                    result[t.id] = g
                node = t.node
                if node is None:
                    continue
                needs = tuple(i.requires_grad and leads.get(i.id, False) for i in node.inputs)
                if not any(needs):
                    continue
                if create_graph and not node.second_order:
                    raise GraphError(f"op '{node.tag}' has no second-derivative rule")
                in_grads = node.backward_fn(g, t, needs)
                for inp, need, ig in zip(node.inputs, needs, in_grads):
                    if not need or ig is None:
                        continue
                    ig = as_tensor(ig)
                    if ig.shape != inp.shape:
                        raise GraphError(
                            f"gradient shape {ig.shape} != input shape {inp.shape} in op '{node.tag}'"
                        )
                    prev = grads.get(inp.id)
                    grads[inp.id] = ig if prev is None else _ops().add(prev, ig)
        finally:
            _mode.in_backward = prev_in_backward
            _mode.running_backward = prev_running
    return result


def _seed_for(output, seed):
    if seed is None:
        if output.size != 1:
            raise GraphError("seed required for non-scalar output")
        return Tensor(np.ones(output.shape))
    seed = as_tensor(seed)
    if seed.shape != output.shape:
        raise GraphError(f"seed shape {seed.shape} does not match output shape {output.shape}")
    return seed


def backward(output, seed=None, create_graph=False):
    """Gradients of ``output`` (weighted by ``seed``) for every reachable tensor."""
    seed = _seed_for(output, seed)
    return _run_backward([output], [seed], None, create_graph, keep_all=True)


def grad(outputs, inputs, seeds=None, create_graph=False, allow_unused=False):
    """Gradients of ``outputs`` with respect to ``inputs`` as a list of tensors.

    Only the part of the graph connecting outputs to inputs is traversed. With
    ``create_graph=True`` the returned gradients are themselves graph nodes.
    """
    if isinstance(outputs, Tensor):
        outputs = [outputs]
    single = isinstance(inputs, Tensor)
    if single:
        inputs = [inputs]
    if seeds is None:
        seeds = [None] * len(outputs)
    elif isinstance(seeds, (Tensor, np.ndarray)):
        seeds = [seeds]
    seeds = [_seed_for(o, s) for o, s in zip(outputs, seeds)]
    gm = _run_backward(list(outputs), seeds, list(inputs), create_graph, keep_all=False)
    res = []
    for t in inputs:
        if t.id in gm:
            res.append(gm[t.id])
        elif allow_unused:
            res.append(None)
        else:
            raise GraphError(f"tensor {t.id} is not connected to the output")
    return res[0] if single else res


def backward_through_grad(penalty, params):
    """Parameter gradients of a scalar built from a recorded first backward pass."""
    order = _topo([penalty])
    if not any(t.node is not None and t.node.from_backward for t in order):
        raise GraphError("first-order backward pass was not recorded (use create_graph=True)")
    return grad(penalty, params, allow_unused=True)
