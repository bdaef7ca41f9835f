"""Small conditional MLP GAN on a 2-D Gaussian mixture, for convergence checks."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import as_tensor
from .autodiff import ops
from .layers import Embedding, Linear, Module


@dataclass
class ToyConfig:
    n_classes: int = 3
    latent_dim: int = 8
    embed_dim: int = 8
    hidden: int = 64
    data_dim: int = 2
    max_stage: int = 0

    def to_dict(self):
        return asdict(self)


class ToyGenerator(Module):
    kind = "toy"

    def __init__(self, config: ToyConfig, rng):
        self.config = config
        self.embed = Embedding(config.n_classes, config.embed_dim, rng=rng)
        self.fc1 = Linear(config.latent_dim + config.embed_dim, config.hidden, "leaky_relu", 2.0, rng)
        self.fc2 = Linear(config.hidden, config.hidden, "leaky_relu", 2.0, rng)
        self.out = Linear(config.hidden, config.data_dim, "linear", 1.0, rng)

    def __call__(self, z, labels, stage=0, alpha=1.0):
        h = ops.concat([self.embed(np.asarray(labels)), as_tensor(z)], axis=1)
        return self.out(self.fc2(self.fc1(h)))


class ToyCritic(Module):
    kind = "toy"

    def __init__(self, config: ToyConfig, rng):
        self.config = config
        self.embed = Embedding(config.n_classes, config.embed_dim, rng=rng)
        self.fc1 = Linear(config.data_dim + config.embed_dim, config.hidden, "leaky_relu", 2.0, rng)
        self.fc2 = Linear(config.hidden, config.hidden, "leaky_relu", 2.0, rng)
        self.out = Linear(config.hidden, 1, "linear", 1.0, rng)

    def __call__(self, x, labels, stage=0, alpha=1.0):
        x = as_tensor(x)
        h = ops.concat([x, self.embed(np.asarray(labels))], axis=1)
        return ops.reshape(self.out(self.fc2(self.fc1(h))), (x.shape[0],))


def build_toy_networks(config: ToyConfig, seed=0):
    rng = np.random.default_rng(seed)
    g_rng, d_rng = [np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(2)]
    return ToyGenerator(config, g_rng), ToyCritic(config, d_rng)


class GaussianMixtureSource:
    """Class ``k`` is N(mean_k, sigma^2 I); means sit on a circle of ``radius``."""

    def __init__(self, n_classes=3, radius=2.0, sigma=0.1):
        self.n_classes = n_classes
        self.sigma = sigma
        angles = 2 * np.pi * np.arange(n_classes) / n_classes + np.pi / 2
        self.means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)

    def sample(self, batch_size, stage, rng):
        labels = rng.integers(self.n_classes, size=batch_size)
        x = self.means[labels] + self.sigma * rng.standard_normal((batch_size, 2))
        return x, labels
