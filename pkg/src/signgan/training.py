"""WGAN-GP training with progressive resolution stages."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import NonFiniteError, Tensor, grad, no_grad
from .autodiff import ops
from .networks import PAPER_BATCH_SIZES, resolution

FADING = "fading"
STABLE = "stable"


@dataclass
class WganGpConfig:
    gp_lambda: float = 10.0
    lr: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.99
    adam_eps: float = 1e-8
    critic_steps: int = 1
    batch_sizes: tuple = PAPER_BATCH_SIZES
    fade_images: int = 40_000
    stable_images: int = 40_000
    alpha_trainable: bool = False

    def __post_init__(self):
        self.batch_sizes = tuple(int(b) for b in self.batch_sizes)
        if self.gp_lambda <= 0:
            raise ValueError("gp_lambda must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not self.batch_sizes or min(self.batch_sizes) <= 0:
            raise ValueError("batch sizes must be positive")
        if self.critic_steps < 1:
            raise ValueError("critic_steps must be >= 1")
        if self.fade_images <= 0 or self.stable_images <= 0:
            raise ValueError("phase budgets must be positive")

    def batch_size(self, stage):
        return self.batch_sizes[min(stage, len(self.batch_sizes) - 1)]

    def to_dict(self):
        d = asdict(self)
        d["batch_sizes"] = list(self.batch_sizes)
        return d


# ------------------------------------------------------------------ losses

def interpolate_samples(real, fake, u):
    """Per-sample convex combination ``u*real + (1-u)*fake``."""
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if real.shape != fake.shape:
        raise ValueError(f"real/fake shape mismatch {real.shape} vs {fake.shape}")
    if u.shape[0] != real.shape[0]:
        raise ValueError(f"expected {real.shape[0]} interpolation weights, got {u.shape[0]}")
    u = u.reshape((-1,) + (1,) * (real.ndim - 1))
    return u * real + (1.0 - u) * fake


def gradient_penalty(critic, x_hat, gp_lambda=10.0):
    """``gp_lambda * mean_b (||d critic / d x_hat_b||_2 - 1)^2``.

    The input gradient is taken with ``create_graph=True`` so the returned
    scalar can be differentiated with respect to the critic's parameters.
    """
    if not isinstance(x_hat, Tensor) or not x_hat.requires_grad:
        x_hat = Tensor(getattr(x_hat, "data", x_hat), requires_grad=True)
    scores = critic(x_hat)
    g = grad(ops.sum(scores), x_hat, create_graph=True, allow_unused=True)
    B = x_hat.shape[0]
    if g is None:
        norms = Tensor(np.zeros(B))
    else:
        norms = ops.l2_norm(ops.reshape(g, (B, -1)), axis=1)
    return ops.mul(ops.mean(ops.square(ops.sub(norms, 1.0))), gp_lambda)


def critic_loss(critic, real, fake, u, gp_lambda=10.0):
    """Critic objective; returns ``(loss, penalty)``.

    ``critic`` maps a (B, ...) tensor to B scores. ``fake`` is treated as a
    constant: no gradient flows into the generator from this loss.
    """
    real = np.asarray(getattr(real, "data", real), dtype=np.float64)
    fake = np.asarray(getattr(fake, "data", fake), dtype=np.float64)
    if real.shape != fake.shape:
        raise ValueError(f"real/fake shape mismatch {real.shape} vs {fake.shape}")
    d_real = critic(Tensor(real))
    d_fake = critic(Tensor(fake))
    x_hat = Tensor(interpolate_samples(real, fake, u), requires_grad=True)
    penalty = gradient_penalty(critic, x_hat, gp_lambda)
    loss = ops.add(ops.sub(ops.mean(d_fake), ops.mean(d_real)), penalty)
    return loss, penalty


def generator_loss(critic, fake):
    """Negative mean critic score on generated samples."""
    return ops.neg(ops.mean(critic(fake)))


# --------------------------------------------------------------- optimizer

def adam_step(param, grad_, m, v, t, config):
    """One bias-corrected Adam update; returns ``(param, m, v)`` as new arrays."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    b1, b2 = config.beta1, config.beta2
    # in-place passes over fresh buffers; same operation order as the textbook form
    m = b1 * m
    m += (1.0 - b1) * grad_
    sq = (1.0 - b2) * grad_
    sq *= grad_
    v = b2 * v
    v += sq
    den = np.divide(v, 1.0 - b2 ** t, out=sq)
    np.sqrt(den, out=den)
    den += config.adam_eps
    new = m / (1.0 - b1 ** t)
    new *= config.lr
    new /= den
    np.subtract(param, new, out=new)
    if not np.isfinite(np.add.reduce(new, axis=None)) and not np.isfinite(new).all():
        raise NonFiniteError("adam_step", -1, "update")
    return new, m, v


class Adam:
    def __init__(self, params, config):
        self.params = params  # name -> Tensor
        self.config = config
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads):
        """Apply gradients given as ``{name: Tensor | ndarray | None}``."""
        self.t += 1
        for name, p in self.params.items():
            g = grads.get(name)
            g = np.zeros_like(p.data) if g is None else np.asarray(getattr(g, "data", g))
            p.data, self.m[name], self.v[name] = adam_step(
                p.data, g, self.m[name], self.v[name], self.t, self.config
            )

    def state_arrays(self, prefix):
        out = {}
        for name in self.params:
            out[f"{prefix}.m.{name}"] = self.m[name]
            out[f"{prefix}.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, prefix, arrays, t):
        self.t = int(t)
        for name in self.params:
            self.m[name] = np.array(arrays[f"{prefix}.m.{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"{prefix}.v.{name}"], dtype=np.float64)


# ---------------------------------------------------------------- training

@dataclass
class TrainState:
    stage: int = 0
    alpha: float = 1.0
    phase: str = STABLE
    step: int = 0
    images_seen: int = 0
    images_in_phase: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class StepRecord:
    step: int
    stage: int
    alpha: float
    critic_loss: float
    gen_loss: float
    penalty: float
    wall_time: float = field(default=0.0, compare=False)

    def format(self):
        return (
            f"step={self.step} stage={self.stage} alpha={self.alpha!r} "
            f"critic_loss={self.critic_loss!r} gen_loss={self.gen_loss!r} "
            f"penalty={self.penalty!r} wall_time={self.wall_time:.3f}"
        )


class Trainer:
    """Owns the networks, optimizers, schedule and RNG of one training run.

    ``data`` must provide ``sample(batch_size, stage, rng) -> (x, labels)``
    and ``n_classes``. ``generator`` and ``critic`` are called as
    ``net(x, labels, stage, alpha)`` and expose ``parameters()``.
    """

    def __init__(self, generator, critic, data, config: WganGpConfig, max_stage=0, seed=0, log=None):
        self.generator = generator
        self.critic = critic
        self.data = data
        self.config = config
        self.max_stage = int(max_stage)
        self.rng = np.random.default_rng(seed)
        self.state = TrainState()
        self.log = log
        self.latent_dim = generator.config.latent_dim
        self.alpha_param = Tensor(np.zeros(1), requires_grad=True) if config.alpha_trainable else None
        g_params = dict(generator.parameters())
        if self.alpha_param is not None:
            g_params["fade_alpha"] = self.alpha_param
        self.g_opt = Adam(g_params, config)
        self.d_opt = Adam(critic.parameters(), config)
        self.history = []
        self._t0 = time.perf_counter()

    # schedule -------------------------------------------------------
    def current_alpha(self):
        st = self.state
        if st.phase == STABLE:
            return 1.0
        if self.alpha_param is not None:
            return float(self.alpha_param.data[0])
        return min(1.0, st.images_in_phase / self.config.fade_images)

    def _advance(self, n_images):
        st, cfg = self.state, self.config
        st.step += 1
        st.images_seen += n_images
        st.images_in_phase += n_images
        if st.phase == FADING and st.images_in_phase >= cfg.fade_images:
            st.phase, st.images_in_phase = STABLE, 0
        elif st.phase == STABLE and st.stage < self.max_stage and st.images_in_phase >= cfg.stable_images:
            st.stage += 1
            st.phase, st.images_in_phase = FADING, 0
            if self.alpha_param is not None:
                self.alpha_param.data[:] = 0.0
        st.alpha = self.current_alpha()

    # one step -------------------------------------------------------
    def progressive_step(self):
        st, cfg = self.state, self.config
        stage = st.stage
        bs = cfg.batch_size(stage)
        alpha = self.current_alpha()
        st.alpha = alpha
        G, D = self.generator, self.critic

        for _ in range(cfg.critic_steps):
            real, labels = self.data.sample(bs, stage, self.rng)
            z = self.rng.standard_normal((bs, self.latent_dim))
            with no_grad():
                fake = G(z, labels, stage, alpha).data
            u = self.rng.uniform(size=bs)
            d_loss, penalty = critic_loss(
                lambda x: D(x, labels, stage, alpha), real, fake, u, cfg.gp_lambda
            )
            names = list(self.d_opt.params)
            grads = grad(d_loss, [self.d_opt.params[n] for n in names], allow_unused=True)
            self.d_opt.step(dict(zip(names, grads)))

        z = self.rng.standard_normal((bs, self.latent_dim))
        labels = self.rng.integers(self.data.n_classes, size=bs)
        g_alpha = self.alpha_param if (self.alpha_param is not None and st.phase == FADING) else alpha
        fake = G(z, labels, stage, g_alpha)
        g_loss = generator_loss(lambda x: D(x, labels, stage, alpha), fake)
        names = list(self.g_opt.params)
        grads = grad(g_loss, [self.g_opt.params[n] for n in names], allow_unused=True)
        self.g_opt.step(dict(zip(names, grads)))
        if self.alpha_param is not None:
            np.clip(self.alpha_param.data, 0.0, 1.0, out=self.alpha_param.data)

        rec = StepRecord(
            step=st.step, stage=stage, alpha=alpha,
            critic_loss=float(d_loss.data), gen_loss=float(g_loss.data),
            penalty=float(penalty.data), wall_time=time.perf_counter() - self._t0,
        )
        self._advance(bs)
        self.history.append(rec)
        if self.log is not None:
            self.log.write(rec.format() + "\n")
            self.log.flush()
        return rec

    def train(self, n_steps, callback=None):
        for _ in range(n_steps):
            rec = self.progressive_step()
            if callback is not None:
                callback(self, rec)
        return self.history

    def real_resolution(self):
        return resolution(self.state.stage)


# ------------------------------------------------------------- checkpoints

def _network_kinds():
    from . import networks, toy
    return {
        "progressive": (networks.NetConfig, networks.build_networks),
        "toy": (toy.ToyConfig, toy.build_toy_networks),
    }


def network_kind(net):
    return getattr(net, "kind", "progressive")


def save_checkpoint(trainer, path, extra_meta=None):
    """Write networks, optimizer moments, schedule and RNG state to ``path``.

    ``extra_meta`` (JSON-serializable) is stored alongside, e.g. the vocabulary.
    """
    from . import checkpoint

    st = trainer.state
    meta = {
        "kind": "train",
        "networks": {
            "kind": network_kind(trainer.generator),
            "config": trainer.generator.config.to_dict(),
        },
        "wgan": trainer.config.to_dict(),
        "max_stage": trainer.max_stage,
        "state": st.to_dict(),
        "adam_t": {"generator": trainer.g_opt.t, "critic": trainer.d_opt.t},
        "rng": trainer.rng.bit_generator.state,
    }
    if extra_meta:
        meta["extra"] = extra_meta
    blobs = {}
    for name, p in trainer.generator.parameters().items():
        blobs[f"generator.{name}"] = p.data
    for name, p in trainer.critic.parameters().items():
        blobs[f"critic.{name}"] = p.data
    if trainer.alpha_param is not None:
        blobs["trainer.fade_alpha"] = trainer.alpha_param.data
    blobs.update(trainer.g_opt.state_arrays("opt.generator"))
    blobs.update(trainer.d_opt.state_arrays("opt.critic"))
    checkpoint.write(path, checkpoint.Container(st.stage, float(st.alpha), meta, blobs))


def _split(blobs, prefix):
    n = len(prefix) + 1
    return {k[n:]: v for k, v in blobs.items() if k.startswith(prefix + ".")}


def load_networks(container):
    """Rebuild (generator, critic) from a decoded training checkpoint."""
    from .checkpoint import CheckpointError

    try:
        kind = container.meta["networks"]["kind"]
        cfg_cls, builder = _network_kinds()[kind]
        net_cfg = cfg_cls(**container.meta["networks"]["config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint lacks network description: {exc}") from exc
    G, D = builder(net_cfg, 0)
    G.load_parameters(_split(container.blobs, "generator"))
    D.load_parameters(_split(container.blobs, "critic"))
    return G, D


def load_checkpoint(path, data=None, log=None):
    """Restore a :class:`Trainer` saved by :func:`save_checkpoint`."""
    from . import checkpoint

    c = checkpoint.read(path)
    if c.meta.get("kind") != "train":
        raise checkpoint.CheckpointError(f"{path} is not a training checkpoint")
    G, D = load_networks(c)
    cfg = WganGpConfig(**c.meta["wgan"])
    trainer = Trainer(G, D, data, cfg, max_stage=c.meta["max_stage"], seed=0, log=log)
    trainer.state = TrainState(**c.meta["state"])
    trainer.rng.bit_generator.state = c.meta["rng"]
    if trainer.alpha_param is not None:
        trainer.alpha_param.data = np.array(c.blobs["trainer.fade_alpha"])
        trainer.g_opt.params["fade_alpha"] = trainer.alpha_param
    trainer.g_opt.load_state_arrays("opt.generator", c.blobs, c.meta["adam_t"]["generator"])
    trainer.d_opt.load_state_arrays("opt.critic", c.blobs, c.meta["adam_t"]["critic"])
    return trainer
