"""Numpy fallback for the convolution gather/scatter kernels."""
import numpy as np


def im2col(xp, kh, kw, dh, dw, h_out, w_out):
    n, c = xp.shape[:2]
    cols = np.empty((n, h_out, w_out, c, kh, kw), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i * dh:i * dh + h_out, j * dw:j * dw + w_out]
            cols[:, :, :, :, i, j] = patch.transpose(0, 2, 3, 1)
    return cols


def col2im(gcols, hp, wp, dh, dw):
    n, h_out, w_out, c, kh, kw = gcols.shape
    out = np.zeros((n, c, hp, wp), dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i * dh:i * dh + h_out, j * dw:j * dw + w_out] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out
