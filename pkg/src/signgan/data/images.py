"""8-bit RGB PNG I/O and the [0, 255] <-> [-1, 1] pixel mapping."""
import io

import numpy as np
from PIL import Image


def to_unit(pixels):
    """Map uint8 pixels to [-1, 1]."""
    return np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0


def from_unit(values):
    """Map [-1, 1] values to uint8 via ``(v + 1) * 127.5`` rounded half-to-even."""
    v = (np.asarray(values, dtype=np.float64) + 1.0) * 127.5
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


def encode_png(chw):
    """Encode a (3, H, W) image in [-1, 1] as PNG bytes."""
    hwc = from_unit(np.asarray(chw)).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(hwc), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, chw):
    with open(path, "wb") as fh:
        fh.write(encode_png(chw))


def decode_png(buf):
    """Decode PNG bytes to a (3, H, W) float image in [-1, 1]."""
    with Image.open(io.BytesIO(buf)) as im:
        if im.format != "PNG":
            raise ValueError(f"expected PNG, got {im.format}")
        arr = np.asarray(im.convert("RGB"))
    return to_unit(arr).transpose(2, 0, 1).copy()


def read_png(path):
    with open(path, "rb") as fh:
        return decode_png(fh.read())
