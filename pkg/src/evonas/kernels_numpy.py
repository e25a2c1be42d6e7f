"""Pure-numpy kernels for the 2D operations.

This is the fallback backend: every function here has a numba twin in
:mod:`evonas.kernels_numba` with the same signature and semantics.  Select
between them with the ``EVONAS_BACKEND`` environment variable (see
:mod:`evonas.backend`).

Convolutions are computed by the im2col route: a strided window view of the
padded input contracted against the weight tensor with BLAS.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad2d(x, pad, value=0.0):
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.full((n, c, h + 2 * pad, w + 2 * pad), value, dtype=np.float64)
    out[:, :, pad:pad + h, pad:pad + w] = x
    return out


def _windows(xp, k, stride):
    # [N, C, Ho, Wo, k, k] view into the padded input
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, b, stride, padding):
    """Cross-correlation of x [N,Cin,H,W] with w [Cout,Cin,k,k] plus bias."""
    k = w.shape[2]
    xp = _pad2d(x, padding)
    win = _windows(xp, k, stride)
    # contract over (Cin, ky, kx)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(np.moveaxis(out, 3, 1))
    out += b[None, :, None, None]
    return out


def conv2d_param_grad(x, gout, k, stride, padding):
    """Gradients for the weight and bias of conv2d_forward."""
    xp = _pad2d(x, padding)
    win = _windows(xp, k, stride)
    # gw[co,ci,dy,dx] = sum_{n,yo,xo} gout[n,co,yo,xo] * win[n,ci,yo,xo,dy,dx]
    gw = np.tensordot(gout, win, axes=([0, 2, 3], [0, 2, 3]))
    gb = gout.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gw), gb


def maxpool2d_forward(x, k, stride, padding):
    """Per-window maximum; also returns the flat (y*W + x) argmax index.

    Padding cells are -inf and therefore never win; ties go to the first
    element in row-major window order, which is also the lowest linear
    index of the input.
    """
    n, c, h, w = x.shape
    xp = _pad2d(x, padding, value=-np.inf)
    win = _windows(xp, k, stride)
    n_, c_, ho, wo = win.shape[:4]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg_local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg_local[..., None], axis=-1)[..., 0]
    # convert window-local index to absolute input coordinates
    dy, dx = np.divmod(arg_local, k)
    ys = np.arange(ho)[None, None, :, None] * stride - padding + dy
    xs = np.arange(wo)[None, None, None, :] * stride - padding + dx
    arg = ys * w + xs
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool2d_backward(gout, arg, in_shape):
    n, c, h, w = in_shape
    gin = np.zeros((n, c, h * w), dtype=np.float64)
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(gin, (ni, ci, arg), gout)
    return gin.reshape(n, c, h, w)


def _adaptive_bounds(size, out_size):
    i = np.arange(out_size)
    starts = (i * size) // out_size
    ends = -((-(i + 1) * size) // out_size)  # ceil division
    return starts, ends


def adaptive_avgpool2d_forward(x, oh, ow):
    n, c, h, w = x.shape
    ys, ye = _adaptive_bounds(h, oh)
    xs, xe = _adaptive_bounds(w, ow)
    out = np.empty((n, c, oh, ow), dtype=np.float64)
    for i in range(oh):
        for j in range(ow):
            out[:, :, i, j] = x[:, :, ys[i]:ye[i], xs[j]:xe[j]].mean(axis=(2, 3))
    return out


def adaptive_avgpool2d_backward(gout, h, w):
    n, c, oh, ow = gout.shape
    ys, ye = _adaptive_bounds(h, oh)
    xs, xe = _adaptive_bounds(w, ow)
    gin = np.zeros((n, c, h, w), dtype=np.float64)
    for i in range(oh):
        for j in range(ow):
            area = (ye[i] - ys[i]) * (xe[j] - xs[j])
            gin[:, :, ys[i]:ye[i], xs[j]:xe[j]] += gout[:, :, i, j, None, None] / area
    return gin
