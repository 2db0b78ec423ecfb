# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops for patch-bank convolution and 2x2 max pooling.

Mirrors the contracts of ``aunet.kernels.numpy_backend``: channels-last
float64 arrays, stride 1, per-patch zero padding that preserves spatial
size. Plain convolution is the g = 1 case of the patch bank.
"""

import numpy as np

cimport cython


def patch_conv_forward(double[:, :, :, ::1] x, double[:, :, :, :, :, ::1] w):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3]
    cdef Py_ssize_t g = w.shape[0], kh = w.shape[2], kw = w.shape[3], Co = w.shape[5]
    cdef Py_ssize_t ph = H / g, pw = W / g
    cdef Py_ssize_t dy = kh / 2, dx = kw / 2
    y_arr = np.zeros((B, H, W, Co))
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t pi, pj, b, oy, ox, p, q, ci, co, iy, ix, y0, y1, x0, x1
    cdef double xv
    with nogil:
        for pi in range(g):
            y0 = pi * ph
            y1 = y0 + ph
            for pj in range(g):
                x0 = pj * pw
                x1 = x0 + pw
                for b in range(B):
                    for oy in range(y0, y1):
                        for ox in range(x0, x1):
                            for p in range(kh):
                                iy = oy + p - dy
                                if iy < y0 or iy >= y1:
                                    continue
                                for q in range(kw):
                                    ix = ox + q - dx
                                    if ix < x0 or ix >= x1:
                                        continue
                                    for ci in range(Ci):
                                        xv = x[b, iy, ix, ci]
                                        for co in range(Co):
                                            y[b, oy, ox, co] += xv * w[pi, pj, p, q, ci, co]
    return y_arr


def patch_conv_backward(double[:, :, :, ::1] x, double[:, :, :, :, :, ::1] w,
                        double[:, :, :, ::1] gy, bint need_gx=True):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3]
    cdef Py_ssize_t g = w.shape[0], kh = w.shape[2], kw = w.shape[3], Co = w.shape[5]
    cdef Py_ssize_t ph = H / g, pw = W / g
    cdef Py_ssize_t dy = kh / 2, dx = kw / 2
    gw_arr = np.zeros((g, g, kh, kw, Ci, Co))
    gx_arr = np.zeros((B, H, W, Ci)) if need_gx else None
    cdef double[:, :, :, :, :, ::1] gw = gw_arr
    cdef double[:, :, :, ::1] gx = gx_arr if need_gx else x  # placeholder view
    cdef Py_ssize_t pi, pj, b, oy, ox, p, q, ci, co, iy, ix, y0, y1, x0, x1
    cdef double gv, acc
    with nogil:
        for pi in range(g):
            y0 = pi * ph
            y1 = y0 + ph
            for pj in range(g):
                x0 = pj * pw
                x1 = x0 + pw
                for b in range(B):
                    for oy in range(y0, y1):
                        for ox in range(x0, x1):
                            for p in range(kh):
                                iy = oy + p - dy
                                if iy < y0 or iy >= y1:
                                    continue
                                for q in range(kw):
                                    ix = ox + q - dx
                                    if ix < x0 or ix >= x1:
                                        continue
                                    for co in range(Co):
                                        gv = gy[b, oy, ox, co]
                                        for ci in range(Ci):
                                            gw[pi, pj, p, q, ci, co] += x[b, iy, ix, ci] * gv
                                    if need_gx:
                                        for ci in range(Ci):
                                            acc = 0.0
                                            for co in range(Co):
                                                acc += gy[b, oy, ox, co] * w[pi, pj, p, q, ci, co]
                                            gx[b, iy, ix, ci] += acc
    return (gx_arr, gw_arr)


def maxpool2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t h = H / 2, w = W / 2
    y_arr = np.empty((B, h, w, C))
    a_arr = np.zeros((B, h, w, C), dtype=np.int8)
    cdef double[:, :, :, ::1] y = y_arr
    cdef signed char[:, :, :, ::1] arg = a_arr
    cdef Py_ssize_t b, i, j, c, di, dj
    cdef double best, v
    cdef signed char bk
    with nogil:
        for b in range(B):
            for i in range(h):
                for j in range(w):
                    for c in range(C):
                        best = x[b, 2 * i, 2 * j, c]
                        bk = 0
                        for di in range(2):
                            for dj in range(2):
                                v = x[b, 2 * i + di, 2 * j + dj, c]
                                if v > best:  # strict: first max wins ties
                                    best = v
                                    bk = <signed char> (2 * di + dj)
                        y[b, i, j, c] = best
                        arg[b, i, j, c] = bk
    return y_arr, a_arr


def maxpool2_backward(signed char[:, :, :, ::1] arg, double[:, :, :, ::1] gy):
    cdef Py_ssize_t B = gy.shape[0], h = gy.shape[1], w = gy.shape[2], C = gy.shape[3]
    gx_arr = np.zeros((B, 2 * h, 2 * w, C))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, i, j, c
    cdef signed char k
    with nogil:
        for b in range(B):
            for i in range(h):
                for j in range(w):
                    for c in range(C):
                        k = arg[b, i, j, c]
                        gx[b, 2 * i + (k >> 1), 2 * j + (k & 1), c] = gy[b, i, j, c]
    return gx_arr
