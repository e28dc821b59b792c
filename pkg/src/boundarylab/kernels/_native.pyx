# cython: language_level=3
"""Compiled kernel backend.

Thin wrappers over the C routines in _kernels.c; the loops live there
so the C compiler can vectorize them. Same call surface as pyref:
float64, C-contiguous, valid (unpadded) windows.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef extern from "_kernels.h":
    void bl_conv2d_forward(const double *x, const double *w,
                           const double *bias, double *out,
                           long b, long ci, long h, long wd,
                           long co, long kh, long kw) nogil
    void bl_conv2d_input_grad(const double *gy, const double *w,
                              double *gx,
                              long b, long ci, long h, long wd,
                              long co, long kh, long kw) nogil
    void bl_conv2d_param_grad(const double *x, const double *gy,
                              double *gw, double *gb,
                              long b, long ci, long h, long wd,
                              long co, long kh, long kw) nogil
    void bl_maxpool2_forward(const double *x, double *y,
                             unsigned char *idx,
                             long b, long c, long h, long w) nogil
    void bl_maxpool2_backward(const double *gy, const unsigned char *idx,
                              double *gx,
                              long b, long c, long h, long w) nogil


def conv2d_forward(cnp.ndarray[double, ndim=4, mode="c"] x,
                   cnp.ndarray[double, ndim=4, mode="c"] w,
                   cnp.ndarray[double, ndim=1, mode="c"] bias):
    cdef long b = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef long co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef long oh = h - kh + 1, ow = wd - kw + 1
    out = np.empty((b, co, oh, ow), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4, mode="c"] o = out
    if out.size:
        with nogil:
            bl_conv2d_forward(&x[0, 0, 0, 0], &w[0, 0, 0, 0], &bias[0],
                              &o[0, 0, 0, 0], b, ci, h, wd, co, kh, kw)
    return out


def conv2d_input_grad(cnp.ndarray[double, ndim=4, mode="c"] gy,
                      cnp.ndarray[double, ndim=4, mode="c"] w,
                      long h, long wdt):
    cdef long b = gy.shape[0], co = gy.shape[1]
    cdef long ci = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    gx = np.zeros((b, ci, h, wdt), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4, mode="c"] g = gx
    if gx.size and gy.size:
        with nogil:
            bl_conv2d_input_grad(&gy[0, 0, 0, 0], &w[0, 0, 0, 0],
                                 &g[0, 0, 0, 0], b, ci, h, wdt, co, kh, kw)
    return gx


def conv2d_param_grad(cnp.ndarray[double, ndim=4, mode="c"] x,
                      cnp.ndarray[double, ndim=4, mode="c"] gy,
                      long kh, long kw):
    cdef long b = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef long co = gy.shape[1]
    gw = np.zeros((co, ci, kh, kw), dtype=np.float64)
    gb = np.zeros(co, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4, mode="c"] cw = gw
    cdef cnp.ndarray[double, ndim=1, mode="c"] cb = gb
    if gy.size:
        with nogil:
            bl_conv2d_param_grad(&x[0, 0, 0, 0], &gy[0, 0, 0, 0],
                                 &cw[0, 0, 0, 0], &cb[0],
                                 b, ci, h, wd, co, kh, kw)
    return gw, gb


def maxpool2_forward(cnp.ndarray[double, ndim=4, mode="c"] x):
    cdef long b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef long oh = h // 2, ow = w // 2
    y = np.empty((b, c, oh, ow), dtype=np.float64)
    idx = np.empty((b, c, oh, ow), dtype=np.uint8)
    cdef cnp.ndarray[double, ndim=4, mode="c"] cy = y
    cdef cnp.ndarray[unsigned char, ndim=4, mode="c"] ci = idx
    if y.size:
        with nogil:
            bl_maxpool2_forward(&x[0, 0, 0, 0], &cy[0, 0, 0, 0],
                                &ci[0, 0, 0, 0], b, c, h, w)
    return y, idx


def maxpool2_backward(cnp.ndarray[double, ndim=4, mode="c"] gy,
                      cnp.ndarray[unsigned char, ndim=4, mode="c"] idx,
                      long h, long w):
    cdef long b = gy.shape[0], c = gy.shape[1]
    gx = np.zeros((b, c, h, w), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4, mode="c"] g = gx
    if gx.size and gy.size:
        with nogil:
            bl_maxpool2_backward(&gy[0, 0, 0, 0], &idx[0, 0, 0, 0],
                                 &g[0, 0, 0, 0], b, c, h, w)
    return gx
