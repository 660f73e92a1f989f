# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution gather/scatter kernels (same contract as _pykernels)."""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col(floating[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t dh, Py_ssize_t dw, Py_ssize_t h_out, Py_ssize_t w_out):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((n, h_out, w_out, c, kh, kw), dtype=dtype)
    cdef floating[:, :, :, :, :, ::1] cols = out
    cdef Py_ssize_t b, y, x, ch, i, j
    with nogil:
        for b in range(n):
            for y in range(h_out):
                for x in range(w_out):
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                cols[b, y, x, ch, i, j] = xp[b, ch, y + i * dh, x + j * dw]
    return out


def col2im(floating[:, :, :, :, :, ::1] gcols, Py_ssize_t hp, Py_ssize_t wp,
           Py_ssize_t dh, Py_ssize_t dw):
    cdef Py_ssize_t n = gcols.shape[0], h_out = gcols.shape[1], w_out = gcols.shape[2]
    cdef Py_ssize_t c = gcols.shape[3], kh = gcols.shape[4], kw = gcols.shape[5]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] img = out
    cdef Py_ssize_t b, y, x, ch, i, j
    # (i, j) outermost keeps the per-element summation order of the numpy path
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    for ch in range(c):
                        for y in range(h_out):
                            for x in range(w_out):
                                img[b, ch, y + i * dh, x + j * dw] += gcols[b, y, x, ch, i, j]
    return out
