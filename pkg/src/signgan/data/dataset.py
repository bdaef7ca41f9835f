"""Labeled image directories: ``root/<class_name>/*.png``."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .images import read_png


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    root: str
    resolution: int
    class_names: tuple


def downscale(images, resolution):
    """Repeated 2x2 average pooling of (..., H, W) images down to ``resolution``."""
    x = np.asarray(images, dtype=np.float64)
    H = x.shape[-1]
    if H < resolution or H % resolution or (H // resolution) & (H // resolution - 1):
        raise DatasetError(f"cannot pool {H}x{H} down to {resolution}x{resolution}")
    while x.shape[-1] > resolution:
        *lead, h, w = x.shape
        x = x.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))
    return x


def validate_dataset(root, class_names):
    """Check that class directories match ``class_names`` exactly; returns the file lists."""
    if not os.path.isdir(root):
        raise DatasetError(f"dataset root {root!r} does not exist")
    dirs = {d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))}
    expected = set(class_names)
    extra, missing = sorted(dirs - expected), sorted(expected - dirs)
    if extra or missing:
        raise DatasetError(
            f"class directories do not match vocabulary: not in vocabulary {extra}; missing directories {missing}"
        )
    files = {}
    for name in class_names:
        cdir = os.path.join(root, name)
        pngs = sorted(f for f in os.listdir(cdir) if f.lower().endswith(".png"))
        if not pngs:
            raise DatasetError(f"class directory {cdir!r} contains no PNG files")
        files[name] = [os.path.join(cdir, f) for f in pngs]
    return files


class ImageDataset:
    """All images decoded into memory at the stored resolution, values in [-1, 1]."""

    def __init__(self, images, labels, class_names):
        self.images = np.asarray(images, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.class_names = tuple(class_names)
        self.n_classes = len(self.class_names)
        self.resolution = self.images.shape[-1]
        self._cache = {self.resolution: self.images}

    def __len__(self):
        return len(self.labels)

    def at_resolution(self, resolution):
        if resolution not in self._cache:
            self._cache[resolution] = downscale(self.images, resolution)
        return self._cache[resolution]

    def sample(self, batch_size, stage, rng):
        """Uniformly sampled batch at resolution ``8 * 2**stage``."""
        idx = rng.integers(len(self.labels), size=batch_size)
        return self.at_resolution(8 * 2 ** stage)[idx], self.labels[idx]

    def split(self, holdout_fraction, rng):
        """Stratified (train, held-out) split."""
        tr, te = [], []
        for k in range(self.n_classes):
            idx = np.flatnonzero(self.labels == k)
            idx = idx[rng.permutation(len(idx))]
            n_te = int(round(len(idx) * holdout_fraction))
            te.append(idx[:n_te])
            tr.append(idx[n_te:])
        tr, te = np.sort(np.concatenate(tr)), np.sort(np.concatenate(te))
        return (ImageDataset(self.images[tr], self.labels[tr], self.class_names),
                ImageDataset(self.images[te], self.labels[te], self.class_names))


def load_dataset(root, class_names, resolution=None):
    """Decode every PNG under ``root``; labels follow the order of ``class_names``."""
    files = validate_dataset(root, class_names)
    images, labels = [], []
    for k, name in enumerate(class_names):
        for path in files[name]:
            try:
                img = read_png(path)
            except Exception as exc:  # PIL raises a variety of types
                raise DatasetError(f"cannot decode {path}: {exc}") from exc
            if img.shape[1] != img.shape[2]:
                raise DatasetError(f"{path} is not square: {img.shape[1:]}")
            images.append(img)
            labels.append(k)
    sizes = {im.shape for im in images}
    if len(sizes) != 1:
        raise DatasetError(f"images have mixed shapes {sorted(sizes)}")
    ds = ImageDataset(np.stack(images), labels, class_names)
    if resolution is not None and resolution != ds.resolution:
        ds = ImageDataset(downscale(ds.images, resolution), ds.labels, class_names)
    return ds


def load_batch(dataset, stage, batch_size, rng):
    return dataset.sample(batch_size, stage, rng)
