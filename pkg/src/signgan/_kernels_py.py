"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def im2col(x, k):
    B, C, H, W = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((B, C, k, k, H, W), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            cols[:, :, ky, kx] = xp[:, :, ky:ky + H, kx:kx + W]
    return cols.reshape(B, C * k * k, H * W)


def col2im(cols, C, H, W, k):
    B = cols.shape[0]
    p = k // 2
    cols = cols.reshape(B, C, k, k, H, W)
    xp = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=np.float64)
    for ky in range(k):
        for kx in range(k):
            xp[:, :, ky:ky + H, kx:kx + W] += cols[:, :, ky, kx]
    return np.ascontiguousarray(xp[:, :, p:p + H, p:p + W])
