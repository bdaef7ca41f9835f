"""Datasets, image codec and the synthetic shape dataset."""
from .dataset import (
    DatasetError,
    DatasetSpec,
    ImageDataset,
    downscale,
    load_batch,
    load_dataset,
    validate_dataset,
)
from .images import decode_png, encode_png, from_unit, read_png, to_unit, write_png
from .synthetic import SHAPES, draw_shape, make_synthetic_dataset

__all__ = [
    "DatasetError",
    "DatasetSpec",
    "ImageDataset",
    "downscale",
    "load_batch",
    "load_dataset",
    "validate_dataset",
    "decode_png",
    "encode_png",
    "from_unit",
    "read_png",
    "to_unit",
    "write_png",
    "SHAPES",
    "draw_shape",
    "make_synthetic_dataset",
]
