"""Inception Score, Frechet distance, BLEU and the desk-scale classifier."""
from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Protocol

import numpy as np

from .autodiff import Tensor, grad, no_grad
from .autodiff import ops
from .layers import Linear, Module, WSConv2d

SIMPLEX_TOL = 1e-4
SYMMETRY_TOL = 1e-10


class MetricError(ValueError):
    pass


# ------------------------------------------------------------ interfaces

class ClassifierIface(Protocol):
    n_classes: int

    def predict_proba(self, images) -> np.ndarray:
        """(M, 3, R, R) images -> (M, K) rows on the probability simplex."""

    def features(self, images) -> np.ndarray:
        """(M, 3, R, R) images -> (M, F) feature vectors."""


class PixelFeatures:
    """Feature extractor used when no classifier is supplied: 8x8 pooled pixels."""

    n_classes = 0

    def __init__(self, resolution=8):
        self.resolution = resolution

    def features(self, images):
        from .data import downscale
        x = downscale(np.asarray(images, dtype=np.float64), self.resolution)
        return x.reshape(len(x), -1)

    def predict_proba(self, images):
        raise MetricError("pixel features carry no class probabilities; supply a classifier")


# ------------------------------------------------------------ inception score

def inception_score(probs, splits=1):
    """Mean and standard deviation over ``splits`` of ``exp(E_x KL(p(y|x) || p(y)))``."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise MetricError("inception_score needs a non-empty (M, K) probability matrix")
    if (p < -SIMPLEX_TOL).any() or np.abs(p.sum(axis=1) - 1.0).max() > SIMPLEX_TOL:
        raise MetricError(f"probability rows must lie on the simplex within {SIMPLEX_TOL}")
    if not 1 <= splits <= p.shape[0]:
        raise MetricError(f"splits must be in [1, {p.shape[0]}]")
    p = np.clip(p, 0.0, None)
    scores = []
    for part in np.array_split(p, splits):
        # shifted, correctly rounded column means: a constant column yields its value exactly
        py = np.array([[col[0] + math.fsum(col - col[0]) / len(part) for col in part.T]])
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(py)), 0.0)
        scores.append(math.exp(terms.sum(axis=1).mean()))
    return float(np.mean(scores)), float(np.std(scores))


# ------------------------------------------------------------ frechet distance

@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        F = self.mu.shape[0]
        if self.sigma.shape != (F, F):
            raise MetricError(f"covariance shape {self.sigma.shape} does not match mean length {F}")
        scale = max(1.0, float(np.abs(self.sigma).max(initial=0.0)))
        if np.abs(self.sigma - self.sigma.T).max(initial=0.0) > SYMMETRY_TOL * scale:
            raise MetricError("covariance is not symmetric")

    @property
    def dim(self):
        return self.mu.shape[0]


def gaussian_stats(features):
    """Sample mean and (M-1)-normalized covariance, symmetrized."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise MetricError("gaussian_stats needs at least 2 feature rows")
    mu = x.mean(axis=0)
    d = x - mu
    sigma = d.T @ d / (x.shape[0] - 1)
    return GaussianStats(mu, 0.5 * (sigma + sigma.T))


def _psd_sqrt(a):
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(a: GaussianStats, b: GaussianStats):
    """Frechet distance between two Gaussians.

    The cross term uses ``Tr sqrt(A^1/2 B A^1/2)``, computed by symmetric
    eigendecomposition with negative eigenvalues clamped to zero.
    """
    if a.dim != b.dim:
        raise MetricError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    ra = _psd_sqrt(a.sigma)
    m = ra @ b.sigma @ ra
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    cross = np.sqrt(np.clip(w, 0.0, None)).sum()
    d = a.mu - b.mu
    val = float(d @ d + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * cross)
    return max(val, 0.0)


def save_stats(path, stats: GaussianStats):
    """Write ``u64 F`` then mu (F) and Sigma (F*F, row-major) as little-endian f64."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", stats.dim))
        fh.write(stats.mu.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(stats.sigma).astype("<f8").tobytes())


def load_stats(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 8:
        raise MetricError(f"{path}: stats cache is truncated")
    (F,) = struct.unpack_from("<Q", buf)
    if len(buf) != 8 + 8 * (F + F * F):
        raise MetricError(f"{path}: expected {8 + 8 * (F + F * F)} bytes for F={F}, found {len(buf)}")
    vals = np.frombuffer(buf, dtype="<f8", offset=8).astype(np.float64)
    return GaussianStats(vals[:F], vals[F:].reshape(F, F))


# ------------------------------------------------------------------ BLEU

@dataclass(frozen=True)
class BleuResult:
    scores: tuple  # BLEU-1 .. BLEU-max_n on the 0-100 scale
    precisions: tuple
    brevity_penalty: float
    empty_candidate: bool = False

    def __getitem__(self, n):
        """``result[n]`` is BLEU-n."""
        return self.scores[n - 1]


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate, reference, max_n=4):
    """Single-reference, unsmoothed BLEU-1..``max_n``."""
    if not 1 <= max_n <= 4:
        raise MetricError("max_n must be in 1..4")
    cand, ref = list(candidate), list(reference)
    if not cand:
        return BleuResult((0.0,) * max_n, (0.0,) * max_n, 0.0, empty_candidate=True)
    c, r = len(cand), len(ref)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    precisions = []
    for n in range(1, max_n + 1):
        cn, rn = _ngrams(cand, n), _ngrams(ref, n)
        total = sum(cn.values())
        matched = sum(min(k, rn[g]) for g, k in cn.items())
        precisions.append(matched / total if total else 0.0)
    scores = []
    for n in range(1, max_n + 1):
        ps = precisions[:n]
        if min(ps) == 0.0:
            scores.append(0.0)
        else:
            scores.append(100.0 * bp * math.exp(sum(math.log(p) for p in ps) / n))
    return BleuResult(tuple(scores), tuple(precisions), bp)


# ------------------------------------------------------------ desk classifier

@dataclass
class ClassifierConfig:
    n_classes: int
    resolution: int = 32
    widths: tuple = (16, 32, 32)
    feature_dim: int = 64
    # Adam settings (read by training.Adam)
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.n_classes < 2:
            raise MetricError("a classifier needs at least 2 classes")
        if self.resolution >> len(self.widths) < 1:
            raise MetricError("resolution too small for the number of pooling stages")

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


class DeskClassifier(Module):
    """Conv stack with pooling, a feature layer and a linear softmax head."""

    kind = "classifier"

    def __init__(self, config: ClassifierConfig, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.config = config
        self.n_classes = config.n_classes
        chans = (3,) + config.widths
        self.convs = [WSConv2d(chans[i], chans[i + 1], 3, "leaky_relu", gain=2.0, rng=rng)
                      for i in range(len(config.widths))]
        side = config.resolution >> len(config.widths)
        self.fc = Linear(chans[-1] * side * side, config.feature_dim, "leaky_relu", gain=2.0, rng=rng)
        self.head = Linear(config.feature_dim, config.n_classes, "linear", gain=1.0, rng=rng)
        self.heldout_accuracy = None

    def _prepare(self, images):
        from .data import downscale
        x = np.asarray(getattr(images, "data", images), dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 3:
            raise MetricError(f"expected (M, 3, R, R) images, got {x.shape}")
        if x.shape[-1] != self.config.resolution:
            x = downscale(x, self.config.resolution)
        return x

    def _features(self, x):
        h = x
        for conv in self.convs:
            h = ops.avgpool2x2(conv(h))
        return self.fc(ops.flatten(h))

    def logits(self, x):
        return self.head(self._features(x))

    def _batched(self, fn, images, batch=256):
        x = self._prepare(images)
        with no_grad():
            return np.concatenate([fn(Tensor(x[i:i + batch])).data for i in range(0, len(x), batch)])

    def features(self, images):
        return self._batched(self._features, images)

    def predict_proba(self, images):
        return self._batched(lambda t: ops.softmax(self.logits(t), axis=-1), images)

    def predict(self, images):
        return self.predict_proba(images).argmax(axis=1)

    def accuracy(self, images, labels):
        return float((self.predict(images) == np.asarray(labels)).mean())


def cross_entropy(logits, labels):
    onehot = np.eye(logits.shape[1])[np.asarray(labels)]
    return ops.neg(ops.mean(ops.sum(ops.mul(ops.log_softmax(logits, axis=-1), onehot), axis=1)))


def train_desk_classifier(dataset, epochs=8, batch_size=32, seed=0, holdout=0.2, config=None):
    """Fit a :class:`DeskClassifier` on ``dataset`` and record held-out accuracy.

    ``dataset`` is an ``ImageDataset``. A stratified ``holdout`` fraction is
    kept aside; its accuracy is stored on ``classifier.heldout_accuracy``.
    """
    from .training import Adam

    if dataset.n_classes < 2:
        raise MetricError("a classifier needs at least 2 classes")
    rng = np.random.default_rng(seed)
    train, test = dataset.split(holdout, rng) if holdout > 0 else (dataset, None)
    if config is None:
        config = ClassifierConfig(n_classes=dataset.n_classes, resolution=dataset.resolution)
    clf = DeskClassifier(config, rng)
    opt = Adam(clf.parameters(), config)
    names = list(opt.params)
    n = len(train)
    for _ in range(epochs):
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            idx = order[i:i + batch_size]
            loss = cross_entropy(clf.logits(Tensor(train.images[idx])), train.labels[idx])
            grads = grad(loss, [opt.params[k] for k in names], allow_unused=True)
            opt.step(dict(zip(names, grads)))
    if test is not None and len(test):
        clf.heldout_accuracy = clf.accuracy(test.images, test.labels)
    return clf


def save_classifier(clf: DeskClassifier, path):
    from . import checkpoint
    meta = {"kind": "classifier", "config": clf.config.to_dict(), "heldout_accuracy": clf.heldout_accuracy}
    blobs = {k: p.data for k, p in clf.parameters().items()}
    checkpoint.write(path, checkpoint.Container(0, 1.0, meta, blobs))


def load_classifier(path):
    from . import checkpoint
    c = checkpoint.read(path)
    if c.meta.get("kind") != "classifier":
        raise checkpoint.CheckpointError(f"{path} is not a classifier checkpoint")
    clf = DeskClassifier(ClassifierConfig(**c.meta["config"]))
    clf.load_parameters(c.blobs)
    clf.heldout_accuracy = c.meta.get("heldout_accuracy")
    return clf


def desk_fid(extractor, real_images, fake_images):
    """FID in the feature space of ``extractor``."""
    return fid(gaussian_stats(extractor.features(real_images)),
               gaussian_stats(extractor.features(fake_images)))
