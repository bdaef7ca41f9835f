# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch-extraction kernels for stride-1, zero same-padded convolution.

Accumulation order in ``col2im`` matches the numpy fallback element for
element, so both paths produce bit-identical results.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const double[:, :, :, ::1] x, int k):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int p = k // 2
    out_arr = np.zeros((B, C * k * k, H * W), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, ky, kx, y, xx, row, sy, sx, y0, y1, x0, x1
    for b in range(B):
        for c in range(C):
            for ky in range(k):
                y0 = p - ky if ky < p else 0
                y1 = H + p - ky if ky > p else H
                for kx in range(k):
                    row = (c * k + ky) * k + kx
                    x0 = p - kx if kx < p else 0
                    x1 = W + p - kx if kx > p else W
                    for y in range(y0, y1):
                        sy = y + ky - p
                        for xx in range(x0, x1):
                            sx = xx + kx - p
                            out[b, row, y * W + xx] = x[b, c, sy, sx]
    return out_arr


def col2im(const double[:, :, ::1] cols, int C, int H, int W, int k):
    cdef Py_ssize_t B = cols.shape[0]
    cdef int p = k // 2
    out_arr = np.zeros((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, ky, kx, y, xx, row, sy, y0, y1, x0, x1
    for b in range(B):
        for c in range(C):
            for ky in range(k):
                y0 = p - ky if ky < p else 0
                y1 = H + p - ky if ky > p else H
                for kx in range(k):
                    row = (c * k + ky) * k + kx
                    x0 = p - kx if kx < p else 0
                    x1 = W + p - kx if kx > p else W
                    for y in range(y0, y1):
                        sy = y + ky - p
                        for xx in range(x0, x1):
                            out[b, c, sy, xx + kx - p] += cols[b, row, y * W + xx]
    return out_arr
