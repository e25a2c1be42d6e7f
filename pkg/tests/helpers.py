"""Independent reference implementations used as test oracles.

Everything here is deliberately written the slow, obvious way (nested
loops, full enumeration) and never shares code with the package.
"""

import numpy as np


def conv2d_loops(x, w, b, stride, padding):
    """Six-nested-loop cross-correlation oracle. x: [N,Cin,H,W]."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for co in range(cout):
            for yo in range(ho):
                for xo in range(wo):
                    acc = b[co]
                    for ci in range(cin):
                        for dy in range(k):
                            for dx in range(k):
                                y = yo * stride + dy - padding
                                xx = xo * stride + dx - padding
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += x[ni, ci, y, xx] * w[co, ci, dy, dx]
                    out[ni, co, yo, xo] = acc
    return out


def maxpool2d_loops(x, k, stride, padding):
    """Window-scan max-pool oracle. x: [N,C,H,W]."""
    n, c, h, wd = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.full((n, c, ho, wo), -np.inf)
    for ni in range(n):
        for ci in range(c):
            for yo in range(ho):
                for xo in range(wo):
                    for dy in range(k):
                        for dx in range(k):
                            y = yo * stride + dy - padding
                            xx = xo * stride + dx - padding
                            if 0 <= y < h and 0 <= xx < wd:
                                v = x[ni, ci, y, xx]
                                if v > out[ni, ci, yo, xo]:
                                    out[ni, ci, yo, xo] = v
    return out


def adaptive_avgpool_loops(x, oh, ow):
    """Region-average oracle. x: [N,C,H,W]."""
    import math

    n, c, h, wd = x.shape
    out = np.zeros((n, c, oh, ow))
    for i in range(oh):
        ys = (i * h) // oh
        ye = math.ceil((i + 1) * h / oh)
        for j in range(ow):
            xs = (j * wd) // ow
            xe = math.ceil((j + 1) * wd / ow)
            out[:, :, i, j] = x[:, :, ys:ye, xs:xe].mean(axis=(2, 3))
    return out


def dense_loops(x, w, b):
    """Explicit dot-product oracle. x: [Din]."""
    dout, din = w.shape
    out = np.zeros(dout)
    for i in range(dout):
        acc = b[i]
        for j in range(din):
            acc += w[i, j] * x[j]
        out[i] = acc
    return out


def stats_pool_two_pass(x, eps=1e-10):
    """Two-pass mean/population-variance oracle. x: [D,T]."""
    d, t = x.shape
    mean = np.array([x[i].sum() / t for i in range(d)])
    var = np.array([((x[i] - mean[i]) ** 2).sum() / t for i in range(d)])
    return np.concatenate([mean, np.sqrt(var + eps)])


def finite_diff(fn, arr, h=1e-5):
    """Central finite-difference gradient of scalar fn w.r.t. arr."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def reference_adam(x0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Independently coded Adam trajectory for a single parameter array."""
    x = np.array(x0, dtype=np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
    return x


def eer_exhaustive(scores, labels):
    """Exhaustive threshold-sweep EER oracle.

    Convention shared with the implementation under test:

    * thresholds are the distinct scores ascending, plus a sentinel above
      the maximum; FAR(t) = mean(non >= t), FRR(t) = mean(tar < t);
    * FRR - FAR is -1 at the lowest threshold and +1 at the sentinel, so
      it crosses zero; at a vertex with FRR == FAR the EER is that value;
    * otherwise interpolate linearly on the segment where the sign flips:
      s = d1 / (d1 - d2) with d = FRR - FAR, and the EER is the average
      of the interpolated FAR and FRR (algebraically equal at s);
    * fold: EER = min(e, 1 - e).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    tar = scores[labels]
    non = scores[~labels]
    thresholds = np.unique(scores)
    fars, frrs = [], []
    for t in list(thresholds) + [thresholds[-1] + 1.0]:
        fars.append(np.mean(non >= t))
        frrs.append(np.mean(tar < t))
    eer = None
    for i in range(len(fars)):
        d = frrs[i] - fars[i]
        if d == 0.0:
            eer = fars[i]
            break
        if d > 0.0:
            d1 = frrs[i - 1] - fars[i - 1]
            d2 = d
            s = d1 / (d1 - d2)
            far_s = fars[i - 1] + s * (fars[i] - fars[i - 1])
            frr_s = frrs[i - 1] + s * (frrs[i] - frrs[i - 1])
            eer = 0.5 * (far_s + frr_s)
            break
    assert eer is not None, "FRR - FAR must cross zero"
    return min(eer, 1.0 - eer)
