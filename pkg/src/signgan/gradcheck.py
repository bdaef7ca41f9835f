"""Central-difference gradient checks for every op, layer and loss."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import REGISTRY, Tensor, check_registered, grad_check_leaves
from .autodiff.check import NonDifferentiablePoint
from .autodiff import ops
from .layers import (
    Embedding,
    Linear,
    SelfAttention,
    WSConv2d,
    fade_blend,
    from_rgb,
    minibatch_stddev,
    pixel_norm,
    to_rgb,
    weight_standardize,
)
from .networks import NetConfig, build_networks
from .training import critic_loss, generator_loss, gradient_penalty

LAYER_TOL = 1e-4
PENALTY_TOL = 1e-3
MAX_REDRAWS = 25


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self):
        return self.error < self.tol

    def format(self):
        status = "ok" if self.passed else "FAIL"
        return f"{self.name:<32} max_rel_err={self.error:.3e} tol={self.tol:.0e} {status}"


def _leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _params(module):
    return list(module.parameters().values())


def _random_params(module, rng, scale=1.0):
    # Attention gamma starts at 0, which hides the attention path; randomize it.
    for p in module.parameters().values():
        p.data = scale * rng.standard_normal(p.shape)


def _layer_checks():
    """name -> (builder(rng) -> (f, leaves))."""

    def ws_conv(k):
        def build(rng):
            layer = WSConv2d(3, 4, k, "leaky_relu", gain=2.0, rng=rng)
            x = _leaf(rng, 2, 3, 5, 5)
            return (lambda: layer(x)), [x] + _params(layer)
        return build

    def weight_std(rng):
        w = _leaf(rng, 4, 9)
        return (lambda: weight_standardize(w)), [w]

    def linear(rng):
        layer = Linear(5, 3, "leaky_relu", gain=2.0, rng=rng)
        x = _leaf(rng, 4, 5)
        return (lambda: layer(x)), [x] + _params(layer)

    def embedding(rng):
        layer = Embedding(4, 3, rng=rng)
        return (lambda: layer(np.array([2, 0, 2]))), _params(layer)

    def pnorm(rng):
        x = _leaf(rng, 2, 4, 3, 3)
        return (lambda: pixel_norm(x)), [x]

    def fade(rng):
        a = _leaf(rng, 2, 3, 4, 4)
        b = _leaf(rng, 2, 3, 4, 4)
        alpha = Tensor(np.array([0.3]), requires_grad=True)
        return (lambda: fade_blend(a, b, alpha)), [a, b, alpha]

    def mbstd(rng):
        x = _leaf(rng, 3, 2, 3, 3)
        return (lambda: minibatch_stddev(x)), [x]

    def attention(rng):
        layer = SelfAttention(8, rng=rng)
        _random_params(layer, rng, 0.5)
        x = _leaf(rng, 2, 8, 3, 3)
        return (lambda: layer(x)), [x] + _params(layer)

    def torgb(rng):
        layer = to_rgb(4, rng=rng)
        x = _leaf(rng, 2, 4, 3, 3)
        return (lambda: layer(x)), [x] + _params(layer)

    def fromrgb(rng):
        layer = from_rgb(4, rng=rng)
        x = _leaf(rng, 2, 4, 3, 3)
        return (lambda: layer(x)), [x] + _params(layer)

    return {
        "layer:weight_standardize": weight_std,
        "layer:ws_conv3x3": ws_conv(3),
        "layer:ws_conv1x1": ws_conv(1),
        "layer:linear": linear,
        "layer:embedding": embedding,
        "layer:pixel_norm": pnorm,
        "layer:fade_blend": fade,
        "layer:minibatch_stddev": mbstd,
        "layer:self_attention": attention,
        "layer:to_rgb": torgb,
        "layer:from_rgb": fromrgb,
    }


def tiny_networks(seed=0):
    """Two-stage nets (8x8, 16x16) with attention at 16x16, small enough for finite differences."""
    cfg = NetConfig(n_classes=2, max_stage=1, widths=(8, 8), latent_dim=4, embed_dim=4,
                    attention_resolutions=(16,), batch_sizes=(2, 2))
    G, D = build_networks(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    for net in (G, D):
        for name, p in net.parameters().items():
            if name.endswith("gamma"):
                p.data = 0.5 * rng.standard_normal(p.shape)
    return G, D


def _loss_checks():
    def critic(rng):
        G, D = tiny_networks(int(rng.integers(1 << 30)))
        labels = np.array([0, 1])
        real = rng.uniform(-1, 1, (2, 3, 16, 16))
        fake = rng.uniform(-1, 1, (2, 3, 16, 16))
        u = rng.uniform(size=2)
        f = lambda: critic_loss(lambda x: D(x, labels, 1, 0.5), real, fake, u)[0]  # noqa: E731
        # The output bias shifts D(real) and D(fake) alike and leaves the input
        # gradient untouched, so the loss is exactly invariant to it; a finite
        # difference there measures only rounding noise.
        params = D.parameters()
        return f, [p for name, p in params.items() if name != "head.fc.bias"]

    def generator(rng):
        G, D = tiny_networks(int(rng.integers(1 << 30)))
        labels = np.array([1, 0])
        z = rng.standard_normal((2, 4))
        f = lambda: generator_loss(lambda x: D(x, labels, 1, 0.5), G(z, labels, 1, 0.5))  # noqa: E731
        return f, _params(G)

    return {"loss:critic": critic, "loss:generator": generator}


def _penalty_check(rng):
    """Parameter gradient of the penalty scalar for a 2-layer MLP critic."""
    l1 = Linear(6, 5, "tanh", gain=1.0, rng=rng)
    l2 = Linear(5, 1, "linear", gain=1.0, rng=rng)
    x_hat = rng.standard_normal((3, 6))

    def critic(x):
        return ops.reshape(l2(l1(x)), (x.shape[0],))

    f = lambda: gradient_penalty(critic, Tensor(x_hat, requires_grad=True), 10.0)  # noqa: E731
    return f, _params(l1) + _params(l2)


def run_suite(points=3, seed=0, max_elements=16, include_ops=True, op_points=10, loss_points=2):
    """Run every check; returns a list of :class:`CheckResult`.

    Ops use ``op_points`` random points, layers and the penalty ``points``,
    network losses ``loss_points`` with ``max_elements`` sampled coordinates
    per parameter tensor.
    """
    results = []
    if include_ops:
        for tag in REGISTRY:
            t0 = time.perf_counter()
            err = check_registered(tag, n_points=op_points, seed=seed)
            results.append(CheckResult(f"op:{tag}", err, LAYER_TOL, time.perf_counter() - t0))
    groups = [(_layer_checks(), points, None), (_loss_checks(), loss_points, max_elements)]
    for checks, n_points, cap in groups:
        for name, build in checks.items():
            t0 = time.perf_counter()
            rng = np.random.default_rng([seed, len(results)])
            err = 0.0
            done = rejected = 0
            while done < n_points:
                f, leaves = build(rng)
                try:
                    e = grad_check_leaves(f, leaves, seed=int(rng.integers(1 << 30)),
                                          max_elements=cap, resolve_tol=LAYER_TOL)
                except NonDifferentiablePoint:
                    rejected += 1
                    if rejected > MAX_REDRAWS:
                        err = float("inf")
                        break
                    continue  # redraw: the stencil does not resolve this point
                err = max(err, e)
                done += 1
            results.append(CheckResult(name, err, LAYER_TOL, time.perf_counter() - t0))
    t0 = time.perf_counter()
    rng = np.random.default_rng([seed, len(results)])
    err = 0.0
    for _ in range(points):
        f, leaves = _penalty_check(rng)
        err = max(err, grad_check_leaves(f, leaves, seed=int(rng.integers(1 << 30))))
    results.append(CheckResult("penalty:parameters", err, PENALTY_TOL, time.perf_counter() - t0))
    return results
