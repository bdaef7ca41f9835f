"""Run configuration: a flat TOML file whose keys map one-to-one onto RunConfig fields."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields

import tomli

from .networks import NetConfig, PAPER_BATCH_SIZES
from .training import WganGpConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str
    out_dir: str
    vocab: str = ""  # empty: the shipped desk vocabulary
    seed: int = 0
    steps: int = 1000
    max_stage: int = 2
    widths: tuple = (64, 64, 64)
    latent_dim: int = 512
    embed_dim: int = 512
    attention_resolutions: tuple = (64, 128)
    batch_sizes: tuple = field(default=PAPER_BATCH_SIZES)
    gp_lambda: float = 10.0
    lr: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.99
    adam_eps: float = 1e-8
    critic_steps: int = 1
    fade_images: int = 40_000
    stable_images: int = 40_000
    alpha_trainable: bool = False
    checkpoint_every: int = 0  # steps; 0 writes only the final checkpoint

    def net_config(self, n_classes):
        return NetConfig(
            n_classes=n_classes, max_stage=self.max_stage, widths=self.widths,
            latent_dim=self.latent_dim, embed_dim=self.embed_dim,
            attention_resolutions=self.attention_resolutions, batch_sizes=self.batch_sizes,
        )

    def wgan_config(self):
        return WganGpConfig(
            gp_lambda=self.gp_lambda, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
            adam_eps=self.adam_eps, critic_steps=self.critic_steps, batch_sizes=self.batch_sizes,
            fade_images=self.fade_images, stable_images=self.stable_images,
            alpha_trainable=self.alpha_trainable,
        )

    def to_dict(self):
        return asdict(self)


_TUPLES = {"widths", "attention_resolutions", "batch_sizes"}


def _coerce(name, ftype, value):
    if name in _TUPLES:
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name} must be a list of integers")
        return tuple(value)
    expected = {"str": str, "int": int, "float": (int, float), "bool": bool}[ftype]
    if isinstance(value, bool) and ftype != "bool":
        raise ConfigError(f"{name} must be {ftype}, got bool")
    if not isinstance(value, expected):
        raise ConfigError(f"{name} must be {ftype}, got {type(value).__name__}")
    return float(value) if ftype == "float" else value


def parse_config(text, base_dir="."):
    """Parse TOML text into a validated :class:`RunConfig`; relative paths resolve from ``base_dir``."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {f.name: f for f in fields(RunConfig)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    missing = sorted(n for n in ("dataset", "out_dir") if n not in raw)
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    values = {}
    for name, value in raw.items():
        ftype = known[name].type if isinstance(known[name].type, str) else known[name].type.__name__
        values[name] = _coerce(name, ftype, value)
    for key in ("dataset", "out_dir", "vocab"):
        if values.get(key):
            values[key] = os.path.normpath(os.path.join(base_dir, values[key]))
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    if not os.path.isdir(cfg.dataset):
        raise ConfigError(f"dataset directory does not exist: {cfg.dataset}")
    if cfg.vocab and not os.path.isfile(cfg.vocab):
        raise ConfigError(f"vocabulary file does not exist: {cfg.vocab}")
    parent = os.path.dirname(os.path.abspath(cfg.out_dir))
    if not os.path.isdir(parent):
        raise ConfigError(f"parent of out_dir does not exist: {parent}")
    if cfg.steps < 0 or cfg.checkpoint_every < 0:
        raise ConfigError("steps and checkpoint_every must be non-negative")
    try:
        cfg.net_config(2)
        cfg.wgan_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path):
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))
