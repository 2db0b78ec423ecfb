"""Pure-numpy implementations of the convolution and pooling kernels.

Shapes follow channels-last layout: activations are [B, H, W, C] and
filters are [kh, kw, Cin, Cout]. Patch banks carry one independent
filter per cell of a g by g partition of the map: [g, g, kh, kw, Cin,
Cout]. Convolutions are stride 1 with zero padding that preserves the
spatial size; for patch banks the padding is applied per patch, so no
information crosses a patch boundary.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w):
    kh, kw = w.shape[0], w.shape[1]
    ph, pw = kh // 2, kw // 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))
    # win is [B, H, W, Cin, kh, kw]; contract kh, kw, Cin against the filter
    return np.tensordot(win, w, axes=((4, 5, 3), (0, 1, 2)))


def conv2d_backward(x, w, gy, need_gx=True):
    kh, kw = w.shape[0], w.shape[1]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    gw = np.tensordot(win, gy, axes=((0, 1, 2), (0, 1, 2)))
    gw = np.ascontiguousarray(gw.transpose(1, 2, 0, 3))
    gx = None
    if need_gx:
        # Gradient w.r.t. the input is a full correlation of gy with the
        # spatially flipped filter, channels transposed.
        fh, fw = kh - 1 - ph, kw - 1 - pw
        gyp = np.pad(gy, ((0, 0), (fh, fh), (fw, fw), (0, 0))) if (fh or fw) else gy
        wing = sliding_window_view(gyp, (kh, kw), axis=(1, 2))
        wf = w[::-1, ::-1]
        gx = np.tensordot(wing, wf, axes=((4, 5, 3), (0, 1, 3)))
    return gx, gw


def patch_conv_forward(x, w):
    g = w.shape[0]
    B, H, W, _ = x.shape
    ph, pw = H // g, W // g
    co = w.shape[5]
    y = np.empty((B, H, W, co))
    for i in range(g):
        for j in range(g):
            sl = np.s_[:, i * ph:(i + 1) * ph, j * pw:(j + 1) * pw]
            y[sl] = conv2d_forward(x[sl], w[i, j])
    return y


def patch_conv_backward(x, w, gy, need_gx=True):
    g = w.shape[0]
    B, H, W, _ = x.shape
    ph, pw = H // g, W // g
    gw = np.empty_like(w)
    gx = np.empty_like(x) if need_gx else None
    for i in range(g):
        for j in range(g):
            sl = np.s_[:, i * ph:(i + 1) * ph, j * pw:(j + 1) * pw]
            gxi, gw[i, j] = conv2d_backward(x[sl], w[i, j], gy[sl], need_gx)
            if need_gx:
                gx[sl] = gxi
    return gx, gw


def maxpool2_forward(x):
    B, H, W, C = x.shape
    h, w = H // 2, W // 2
    quads = np.stack([x[:, di::2, dj::2, :] for di in (0, 1) for dj in (0, 1)])
    arg = np.argmax(quads, axis=0).astype(np.int8)  # first max wins ties
    y = np.take_along_axis(quads, arg[None].astype(np.intp), axis=0)[0]
    return y, arg


def maxpool2_backward(arg, gy):
    B, h, w, C = gy.shape
    gx = np.zeros((B, 2 * h, 2 * w, C))
    for k, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        np.copyto(gx[:, di::2, dj::2, :], gy, where=arg == k)
    return gx
