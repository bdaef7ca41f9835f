"""Hot convolution kernels, compiled when available.

The Cython extension ``signgan._kernels`` is used if it imports; otherwise
the numpy implementations in ``signgan._kernels_py`` are used. Setting the
environment variable ``SIGNGAN_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SIGNGAN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def im2col(x, k):
    """Unfold ``k x k`` same-padded patches of ``x`` (B, C, H, W).

    Returns an array of shape (B, C*k*k, H*W) whose rows are ordered
    (channel, kernel-row, kernel-col), matching a row-major weight flatten.
    """
    return _impl.im2col(np.ascontiguousarray(x, dtype=np.float64), int(k))


def col2im(cols, shape, k):
    """Adjoint of :func:`im2col`: scatter-add columns back to ``shape``."""
    _, C, H, W = shape
    return _impl.col2im(np.ascontiguousarray(cols, dtype=np.float64), int(C), int(H), int(W), int(k))
