"""Numba-jitted kernels for the 2D operations.

Direct convolution loops, register-blocked over pairs of output channels
with the 3/5/7-tap inner loops unrolled.  On the small channel counts this
package runs at (8..64 per stage), these kernels are several times faster
than BLAS-backed im2col, whose efficiency collapses for matrices with a
tiny leading dimension.

Every public function matches the signature and semantics of its twin in
:mod:`evonas.kernels_numpy`; ``benchmarks/bench_backends.py`` compares the
two.  All kernels parallelize over a disjoint output axis, so results do
not depend on the thread count.
"""

import numpy as np
from numba import njit, prange


def _pad2d(x, pad, value=0.0):
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.full((n, c, h + 2 * pad, w + 2 * pad), value, dtype=np.float64)
    out[:, :, pad:pad + h, pad:pad + w] = x
    return out


@njit(cache=True, parallel=True)
def _conv_fwd_generic(xp, w, b, stride, out):
    n_b, c_in, _, _ = xp.shape
    c_out, _, kh, kw = w.shape
    ho, wo = out.shape[2], out.shape[3]
    for n in prange(n_b):
        for co in range(c_out):
            for yo in range(ho):
                row = np.zeros(wo)
                y0 = yo * stride
                for ci in range(c_in):
                    for dy in range(kh):
                        xrow = xp[n, ci, y0 + dy]
                        for dx in range(kw):
                            wv = w[co, ci, dy, dx]
                            for xo in range(wo):
                                row[xo] += wv * xrow[xo * stride + dx]
                bv = b[co]
                for xo in range(wo):
                    out[n, co, yo, xo] = row[xo] + bv
    return out


@njit(cache=True, parallel=True)
def _conv_fwd_k3(xp, w, b, out):
    n_b, c_in, _, _ = xp.shape
    c_out = w.shape[0]
    ho, wo = out.shape[2], out.shape[3]
    for n in prange(n_b):
        for cp in range((c_out + 1) // 2):
            co = 2 * cp
            co1 = co + 1 if co + 1 < c_out else co
            for yo in range(ho):
                r0 = np.zeros(wo)
                r1 = np.zeros(wo)
                for ci in range(c_in):
                    for dy in range(3):
                        xrow = xp[n, ci, yo + dy]
                        w00 = w[co, ci, dy, 0]
                        w01 = w[co, ci, dy, 1]
                        w02 = w[co, ci, dy, 2]
                        w10 = w[co1, ci, dy, 0]
                        w11 = w[co1, ci, dy, 1]
                        w12 = w[co1, ci, dy, 2]
                        for xo in range(wo):
                            v0 = xrow[xo]
                            v1 = xrow[xo + 1]
                            v2 = xrow[xo + 2]
                            r0[xo] += w00 * v0 + w01 * v1 + w02 * v2
                            r1[xo] += w10 * v0 + w11 * v1 + w12 * v2
                for xo in range(wo):
                    out[n, co, yo, xo] = r0[xo] + b[co]
                if co1 != co:
                    for xo in range(wo):
                        out[n, co1, yo, xo] = r1[xo] + b[co1]
    return out


@njit(cache=True, parallel=True)
def _conv_fwd_k5(xp, w, b, out):
    n_b, c_in, _, _ = xp.shape
    c_out = w.shape[0]
    ho, wo = out.shape[2], out.shape[3]
    for n in prange(n_b):
        for cp in range((c_out + 1) // 2):
            co = 2 * cp
            co1 = co + 1 if co + 1 < c_out else co
            for yo in range(ho):
                r0 = np.zeros(wo)
                r1 = np.zeros(wo)
                for ci in range(c_in):
                    for dy in range(5):
                        xrow = xp[n, ci, yo + dy]
                        wr0 = w[co, ci, dy]
                        wr1 = w[co1, ci, dy]
                        for xo in range(wo):
                            a0 = 0.0
                            a1 = 0.0
                            for dx in range(5):
                                v = xrow[xo + dx]
                                a0 += wr0[dx] * v
                                a1 += wr1[dx] * v
                            r0[xo] += a0
                            r1[xo] += a1
                for xo in range(wo):
                    out[n, co, yo, xo] = r0[xo] + b[co]
                if co1 != co:
                    for xo in range(wo):
                        out[n, co1, yo, xo] = r1[xo] + b[co1]
    return out


@njit(cache=True, parallel=True)
def _conv_fwd_k7(xp, w, b, out):
    n_b, c_in, _, _ = xp.shape
    c_out = w.shape[0]
    ho, wo = out.shape[2], out.shape[3]
    for n in prange(n_b):
        for cp in range((c_out + 1) // 2):
            co = 2 * cp
            co1 = co + 1 if co + 1 < c_out else co
            for yo in range(ho):
                r0 = np.zeros(wo)
                r1 = np.zeros(wo)
                for ci in range(c_in):
                    for dy in range(7):
                        xrow = xp[n, ci, yo + dy]
                        wr0 = w[co, ci, dy]
                        wr1 = w[co1, ci, dy]
                        for xo in range(wo):
                            a0 = 0.0
                            a1 = 0.0
                            for dx in range(7):
                                v = xrow[xo + dx]
                                a0 += wr0[dx] * v
                                a1 += wr1[dx] * v
                            r0[xo] += a0
                            r1[xo] += a1
                for xo in range(wo):
                    out[n, co, yo, xo] = r0[xo] + b[co]
                if co1 != co:
                    for xo in range(wo):
                        out[n, co1, yo, xo] = r1[xo] + b[co1]
    return out


def conv2d_forward(x, w, b, stride, padding):
    """Cross-correlation of x [N,Cin,H,W] with w [Cout,Cin,k,k] plus bias."""
    n, _, h, wd = x.shape
    c_out, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    xp = _pad2d(x, padding)
    out = np.empty((n, c_out, ho, wo), dtype=np.float64)
    if stride == 1 and k == 3:
        return _conv_fwd_k3(xp, w, b, out)
    if stride == 1 and k == 5:
        return _conv_fwd_k5(xp, w, b, out)
    if stride == 1 and k == 7:
        return _conv_fwd_k7(xp, w, b, out)
    return _conv_fwd_generic(xp, w, b, stride, out)


@njit(cache=True, parallel=True)
def _conv_wgrad_generic(xp, gout, stride, gw):
    n_b, c_in, _, _ = xp.shape
    c_out, _, kh, kw = gw.shape
    ho, wo = gout.shape[2], gout.shape[3]
    for co in prange(c_out):
        for n in range(n_b):
            for yo in range(ho):
                grow = gout[n, co, yo]
                y0 = yo * stride
                for ci in range(c_in):
                    for dy in range(kh):
                        xrow = xp[n, ci, y0 + dy]
                        for dx in range(kw):
                            acc = 0.0
                            for xo in range(wo):
                                acc += grow[xo] * xrow[xo * stride + dx]
                            gw[co, ci, dy, dx] += acc
    return gw


@njit(cache=True, parallel=True)
def _conv_wgrad_k3(xp, gout, gw):
    n_b, c_in, _, _ = xp.shape
    c_out = gw.shape[0]
    ho, wo = gout.shape[2], gout.shape[3]
    for co in prange(c_out):
        for n in range(n_b):
            for yo in range(ho):
                grow = gout[n, co, yo]
                for ci in range(c_in):
                    for dy in range(3):
                        xrow = xp[n, ci, yo + dy]
                        a0 = 0.0
                        a1 = 0.0
                        a2 = 0.0
                        for xo in range(wo):
                            g = grow[xo]
                            a0 += g * xrow[xo]
                            a1 += g * xrow[xo + 1]
                            a2 += g * xrow[xo + 2]
                        gw[co, ci, dy, 0] += a0
                        gw[co, ci, dy, 1] += a1
                        gw[co, ci, dy, 2] += a2
    return gw


@njit(cache=True, parallel=True)
def _conv_wgrad_k5(xp, gout, gw):
    n_b, c_in, _, _ = xp.shape
    c_out = gw.shape[0]
    ho, wo = gout.shape[2], gout.shape[3]
    for co in prange(c_out):
        for n in range(n_b):
            for yo in range(ho):
                grow = gout[n, co, yo]
                for ci in range(c_in):
                    for dy in range(5):
                        xrow = xp[n, ci, yo + dy]
                        acc = np.zeros(5)
                        for xo in range(wo):
                            g = grow[xo]
                            for dx in range(5):
                                acc[dx] += g * xrow[xo + dx]
                        for dx in range(5):
                            gw[co, ci, dy, dx] += acc[dx]
    return gw


@njit(cache=True, parallel=True)
def _conv_wgrad_k7(xp, gout, gw):
    n_b, c_in, _, _ = xp.shape
    c_out = gw.shape[0]
    ho, wo = gout.shape[2], gout.shape[3]
    for co in prange(c_out):
        for n in range(n_b):
            for yo in range(ho):
                grow = gout[n, co, yo]
                for ci in range(c_in):
                    for dy in range(7):
                        xrow = xp[n, ci, yo + dy]
                        acc = np.zeros(7)
                        for xo in range(wo):
                            g = grow[xo]
                            for dx in range(7):
                                acc[dx] += g * xrow[xo + dx]
                        for dx in range(7):
                            gw[co, ci, dy, dx] += acc[dx]
    return gw


def conv2d_param_grad(x, gout, k, stride, padding):
    """Gradients for the weight and bias of conv2d_forward."""
    c_out = gout.shape[1]
    c_in = x.shape[1]
    xp = _pad2d(x, padding)
    gw = np.zeros((c_out, c_in, k, k), dtype=np.float64)
    if stride == 1 and k == 3:
        gw = _conv_wgrad_k3(xp, gout, gw)
    elif stride == 1 and k == 5:
        gw = _conv_wgrad_k5(xp, gout, gw)
    elif stride == 1 and k == 7:
        gw = _conv_wgrad_k7(xp, gout, gw)
    else:
        gw = _conv_wgrad_generic(xp, gout, stride, gw)
    gb = gout.sum(axis=(0, 2, 3))
    return gw, gb


@njit(cache=True, parallel=True)
def _maxpool_fwd(xp, k, stride, padding, w_in, out, arg):
    n_b, c, _, _ = xp.shape
    ho, wo = out.shape[2], out.shape[3]
    for n in prange(n_b):
        for ci in range(c):
            for yo in range(ho):
                for xo in range(wo):
                    best = -np.inf
                    besty = 0
                    bestx = 0
                    for dy in range(k):
                        for dx in range(k):
                            v = xp[n, ci, yo * stride + dy, xo * stride + dx]
                            if v > best:
                                best = v
                                besty = yo * stride + dy - padding
                                bestx = xo * stride + dx - padding
                    out[n, ci, yo, xo] = best
                    arg[n, ci, yo, xo] = besty * w_in + bestx
    return out, arg


def maxpool2d_forward(x, k, stride, padding):
    """Per-window maximum plus the flat (y*W + x) argmax index.

    Ties resolve to the first element in row-major window order; padding
    holds -inf and never wins.
    """
    n, c, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    xp = _pad2d(x, padding, value=-np.inf)
    out = np.empty((n, c, ho, wo), dtype=np.float64)
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    return _maxpool_fwd(xp, k, stride, padding, w, out, arg)


@njit(cache=True, parallel=True)
def _maxpool_bwd(gout, arg, gin_flat):
    n_b, c, ho, wo = gout.shape
    for n in prange(n_b):
        for ci in range(c):
            for yo in range(ho):
                for xo in range(wo):
                    gin_flat[n, ci, arg[n, ci, yo, xo]] += gout[n, ci, yo, xo]
    return gin_flat


def maxpool2d_backward(gout, arg, in_shape):
    n, c, h, w = in_shape
    gin = np.zeros((n, c, h * w), dtype=np.float64)
    gin = _maxpool_bwd(gout, arg, gin)
    return gin.reshape(n, c, h, w)


@njit(cache=True, parallel=True)
def _adaptive_fwd(x, ys, ye, xs, xe, out):
    n_b, c, oh, ow = out.shape
    for n in prange(n_b):
        for ci in range(c):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for y in range(ys[i], ye[i]):
                        for xx in range(xs[j], xe[j]):
                            acc += x[n, ci, y, xx]
                    area = (ye[i] - ys[i]) * (xe[j] - xs[j])
                    out[n, ci, i, j] = acc / area
    return out


@njit(cache=True, parallel=True)
def _adaptive_bwd(gout, ys, ye, xs, xe, gin):
    n_b, c, oh, ow = gout.shape
    for n in prange(n_b):
        for ci in range(c):
            for i in range(oh):
                for j in range(ow):
                    area = (ye[i] - ys[i]) * (xe[j] - xs[j])
                    g = gout[n, ci, i, j] / area
                    for y in range(ys[i], ye[i]):
                        for xx in range(xs[j], xe[j]):
                            gin[n, ci, y, xx] += g
    return gin


def _adaptive_bounds(size, out_size):
    i = np.arange(out_size)
    starts = (i * size) // out_size
    ends = -((-(i + 1) * size) // out_size)
    return starts.astype(np.int64), ends.astype(np.int64)


def adaptive_avgpool2d_forward(x, oh, ow):
    n, c, h, w = x.shape
    ys, ye = _adaptive_bounds(h, oh)
    xs, xe = _adaptive_bounds(w, ow)
    out = np.empty((n, c, oh, ow), dtype=np.float64)
    return _adaptive_fwd(x, ys, ye, xs, xe, out)


def adaptive_avgpool2d_backward(gout, h, w):
    n, c, oh, ow = gout.shape
    ys, ye = _adaptive_bounds(h, oh)
    xs, xe = _adaptive_bounds(w, ow)
    gin = np.zeros((n, c, h, w), dtype=np.float64)
    return _adaptive_bwd(gout, ys, ye, xs, xe, gin)
