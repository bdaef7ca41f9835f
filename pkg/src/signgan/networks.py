"""Class-conditional progressive generator and critic."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import GraphError, Tensor, as_tensor
from .autodiff import ops
from .layers import (
    Embedding,
    Linear,
    Module,
    SelfAttention,
    WSConv2d,
    count_parameters,
    fade_blend,
    from_rgb,
    minibatch_stddev,
    pixel_norm,
    to_rgb,
)

PAPER_WIDTHS = (512, 512, 512, 256, 128, 64, 32)
PAPER_BATCH_SIZES = (32, 32, 32, 32, 16, 16, 8)
BASE_RESOLUTION = 8


def resolution(stage):
    return BASE_RESOLUTION * 2 ** stage


@dataclass(frozen=True)
class StageSpec:
    index: int
    width: int
    attention: bool
    batch_size: int

    @property
    def resolution(self):
        return resolution(self.index)


@dataclass
class NetConfig:
    n_classes: int
    max_stage: int = 2
    widths: tuple = (64, 64, 64)
    latent_dim: int = 512
    embed_dim: int = 512
    attention_resolutions: tuple = (64, 128)
    batch_sizes: tuple = field(default=PAPER_BATCH_SIZES)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.attention_resolutions = tuple(int(r) for r in self.attention_resolutions)
        self.batch_sizes = tuple(int(b) for b in self.batch_sizes)
        if self.max_stage < 0 or len(self.widths) < self.max_stage + 1:
            raise ValueError(f"need {self.max_stage + 1} stage widths, got {len(self.widths)}")
        for s in self.stages():
            if s.attention and s.width % 8:
                raise ValueError(f"attention width at {s.resolution}x{s.resolution} must be divisible by 8")

    def stages(self):
        return [
            StageSpec(n, self.widths[n], resolution(n) in self.attention_resolutions,
                      self.batch_sizes[n] if n < len(self.batch_sizes) else self.batch_sizes[-1])
            for n in range(self.max_stage + 1)
        ]

    def to_dict(self):
        return {
            "n_classes": self.n_classes,
            "max_stage": self.max_stage,
            "widths": list(self.widths),
            "latent_dim": self.latent_dim,
            "embed_dim": self.embed_dim,
            "attention_resolutions": list(self.attention_resolutions),
            "batch_sizes": list(self.batch_sizes),
        }


def _check_stage(stage, max_stage, alpha):
    if not 0 <= stage <= max_stage:
        raise ValueError(f"stage {stage} out of range [0, {max_stage}]")
    a = float(np.asarray(alpha.data if isinstance(alpha, Tensor) else alpha).reshape(-1)[0])
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {a}")
    return a


class GeneratorBlock(Module):
    def __init__(self, in_ch, out_ch, attention, upsample, rng):
        self.upsample = upsample
        self.conv1 = WSConv2d(in_ch, out_ch, 3, "leaky_relu", gain=2.0, rng=rng)
        self.attn = SelfAttention(out_ch, rng=rng) if attention else None
        self.conv2 = WSConv2d(out_ch, out_ch, 3, "leaky_relu", gain=2.0, rng=rng)

    def __call__(self, x):
        if self.upsample:
            x = ops.upsample2x(x)
        x = pixel_norm(self.conv1(x))
        if self.attn is not None:
            x = self.attn(x)
        return pixel_norm(self.conv2(x))


class Generator(Module):
    """Label embedding + latent -> 8x8 features -> progressive stages -> tanh RGB."""

    def __init__(self, config: NetConfig, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.config = config
        c0 = config.widths[0]
        self.embed = Embedding(config.n_classes, config.embed_dim, rng=rng)
        self.project = Linear(config.latent_dim + config.embed_dim, c0 * 64, "leaky_relu", gain=2.0, rng=rng)
        self.blocks = []
        self.rgb = []
        for s in config.stages():
            in_ch = c0 if s.index == 0 else config.widths[s.index - 1]
            self.blocks.append(GeneratorBlock(in_ch, s.width, s.attention, s.index > 0, rng))
            self.rgb.append(to_rgb(s.width, rng=rng))

    def __call__(self, z, labels, stage, alpha=1.0):
        a = _check_stage(stage, self.config.max_stage, alpha)
        z = as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise GraphError(f"latent must be (B,{self.config.latent_dim}), got {z.shape}")
        labels = np.asarray(labels)
        B = z.shape[0]
        h = ops.concat([self.embed(labels), z], axis=1)
        h = ops.reshape(self.project(h), (B, self.config.widths[0], 8, 8))
        h = pixel_norm(h)
        prev = None
        for n in range(stage + 1):
            if n == stage and n > 0 and a < 1.0:
                prev = h
            h = self.blocks[n](h)
        rgb = self.rgb[stage](h)
        if prev is not None:
            low = ops.upsample2x(self.rgb[stage - 1](prev))
            rgb = fade_blend(low, rgb, alpha)
        return ops.tanh(rgb)


class CriticBlock(Module):
    def __init__(self, in_ch, out_ch, attention, rng):
        self.conv1 = WSConv2d(in_ch, in_ch, 3, "leaky_relu", gain=2.0, rng=rng)
        self.attn = SelfAttention(in_ch, rng=rng) if attention else None
        self.conv2 = WSConv2d(in_ch, out_ch, 3, "leaky_relu", gain=2.0, rng=rng)

    def __call__(self, x):
        x = self.conv1(x)
        if self.attn is not None:
            x = self.attn(x)
        return ops.avgpool2x2(self.conv2(x))


class CriticHead(Module):
    def __init__(self, ch, rng):
        self.conv1 = WSConv2d(ch + 1, ch, 3, "leaky_relu", gain=2.0, rng=rng)
        self.conv2 = WSConv2d(ch, ch, 3, "leaky_relu", gain=2.0, rng=rng)
        self.fc = Linear(ch * 64, 1, "linear", gain=1.0, rng=rng)

    def __call__(self, x):
        x = minibatch_stddev(x)
        x = self.conv2(self.conv1(x))
        return ops.reshape(self.fc(ops.flatten(x)), (x.shape[0],))


class Critic(Module):
    """Wasserstein critic: (image, label map) -> fromRGB -> down stages -> scalar."""

    def __init__(self, config: NetConfig, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.config = config
        K = config.n_classes
        self.embed = Embedding(K, K, rng=rng)
        self.label_proj = []
        self.rgb = []
        self.blocks = []
        for s in config.stages():
            self.label_proj.append(Linear(K, s.resolution ** 2, "linear", gain=1.0, rng=rng))
            self.rgb.append(from_rgb(s.width, rng=rng))
            if s.index > 0:
                self.blocks.append(CriticBlock(s.width, config.widths[s.index - 1], s.attention, rng))
            else:
                self.blocks.append(None)
        self.head = CriticHead(config.widths[0], rng)

    def label_map(self, labels, stage):
        R = resolution(stage)
        e = self.embed(labels)
        return ops.reshape(self.label_proj[stage](e), (e.shape[0], 1, R, R))

    def _input(self, x, labels, stage):
        return self.rgb[stage](ops.concat([x, self.label_map(labels, stage)], axis=1))

    def __call__(self, x, labels, stage, alpha=1.0):
        a = _check_stage(stage, self.config.max_stage, alpha)
        x = as_tensor(x)
        R = resolution(stage)
        if x.ndim != 4 or x.shape[1:] != (3, R, R):
            raise GraphError(f"critic at stage {stage} expects (B,3,{R},{R}), got {x.shape}")
        labels = np.asarray(labels)
        if stage == 0:
            h = self._input(x, labels, 0)
        elif a == 0.0 and not isinstance(alpha, Tensor):
            h = self._input(ops.avgpool2x2(x), labels, stage - 1)
        else:
            h = self.blocks[stage](self._input(x, labels, stage))
            if a < 1.0 or isinstance(alpha, Tensor):
                low = self._input(ops.avgpool2x2(x), labels, stage - 1)
                h = fade_blend(low, h, alpha)
        for n in range(stage - 1, 0, -1):
            h = self.blocks[n](h)
        return self.head(h)


def build_networks(config: NetConfig, seed=0):
    rng = np.random.default_rng(seed)
    g_rng, d_rng = [np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(2)]
    return Generator(config, g_rng), Critic(config, d_rng)


__all__ = [
    "PAPER_WIDTHS",
    "PAPER_BATCH_SIZES",
    "StageSpec",
    "NetConfig",
    "Generator",
    "Critic",
    "build_networks",
    "count_parameters",
    "resolution",
]
