"""Procedural 3-class shape dataset (circle / square / triangle)."""
import os

import numpy as np

from .images import write_png

SHAPES = ("circle", "square", "triangle")


def draw_shape(kind, resolution, rng):
    """Render one (3, R, R) image in [-1, 1]: a bright filled shape on a dark background."""
    R = resolution
    yy, xx = np.mgrid[0:R, 0:R] + 0.5
    size = rng.uniform(0.22, 0.34) * R
    cx = rng.uniform(size + 1, R - size - 1)
    cy = rng.uniform(size + 1, R - size - 1)
    if kind == "circle":
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= size ** 2
    elif kind == "square":
        mask = (np.abs(xx - cx) <= size * 0.85) & (np.abs(yy - cy) <= size * 0.85)
    elif kind == "triangle":
        # upward triangle: apex at top, base at bottom
        top, bottom = cy - size, cy + size
        half = (yy - top) / (2 * size) * size * 1.1
        mask = (yy >= top) & (yy <= bottom) & (np.abs(xx - cx) <= half)
    else:
        raise ValueError(f"unknown shape {kind!r}")
    bg = rng.uniform(0.0, 0.3)
    fg = rng.uniform(0.75, 1.0)
    tint = rng.uniform(0.85, 1.0, size=3)
    img = np.where(mask[None], fg * tint[:, None, None], bg)
    return img * 2.0 - 1.0


def make_synthetic_dataset(out_dir, classes=3, per_class=500, resolution=32, seed=0):
    """Write ``classes * per_class`` PNGs as ``out_dir/<shape>/<index>.png``.

    Output is byte-identical for equal arguments.
    """
    from .dataset import DatasetSpec

    if not 1 <= classes <= len(SHAPES):
        raise ValueError(f"classes must be in [1, {len(SHAPES)}]")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise PermissionError(f"cannot create {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"{out_dir} is not writable")
    seq = np.random.SeedSequence(seed)
    for name, child in zip(SHAPES[:classes], seq.spawn(classes)):
        rng = np.random.default_rng(child)
        cdir = os.path.join(out_dir, name)
        os.makedirs(cdir, exist_ok=True)
        for i in range(per_class):
            write_png(os.path.join(cdir, f"{i:05d}.png"), draw_shape(name, resolution, rng))
    return DatasetSpec(root=out_dir, resolution=resolution, class_names=tuple(SHAPES[:classes]))
