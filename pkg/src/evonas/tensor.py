"""Define-by-run reverse-mode autodiff over float64 numpy arrays.

The graph is implicit: every non-leaf :class:`Tensor` keeps references to
its parents and a closure that routes its output gradient to them.  A call
to :meth:`Tensor.backward` topologically orders the nodes reachable from
the loss and visits each exactly once, accumulating gradients additively
into ``grad``.

The 2D kernels (convolution, pooling) dispatch through
:mod:`evonas.backend`; everything else is plain numpy.
"""

import contextlib

import numpy as np

from evonas import backend
from evonas.errors import ContractError, DegenerateVectorError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (evaluation mode)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Populate ``grad`` for every reachable tensor that requires it.

        Returns the list of visited nodes in traversal order (reverse
        topological), each visited exactly once.
        """
        if self.data.ndim != 0 and self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.data.shape}")
        order = _topo_order(self)
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        return order

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self.op}{flag})"


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _coerce(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(data, parents, backward_fn, op):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = op
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise and shape ops ----------------------------------------


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward, "add")


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward, "mul")


def div(a, b):
    a, b = _coerce(a), _coerce(b)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data),
                                           b.data.shape))

    return _make(data, (a, b), backward, "div")


def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.shape[1]} vs {b.shape[0]}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _make(data, (a, b), backward, "matmul")


def reshape(a, *shape):
    a = _coerce(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    data = a.data.reshape(shape)

    def backward(g):
        a.accumulate_grad(g.reshape(a.data.shape))

    return _make(data, (a,), backward, "reshape")


def transpose(a, axes=None):
    a = _coerce(a)
    data = a.data.transpose(axes)
    inverse = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        a.accumulate_grad(g.transpose(inverse))

    return _make(data, (a,), backward, "transpose")


def exp(a):
    a = _coerce(a)
    data = np.exp(a.data)

    def backward(g):
        a.accumulate_grad(g * data)

    return _make(data, (a,), backward, "exp")


def log(a):
    a = _coerce(a)
    data = np.log(a.data)

    def backward(g):
        a.accumulate_grad(g / a.data)

    return _make(data, (a,), backward, "log")


def sqrt(a):
    a = _coerce(a)
    data = np.sqrt(a.data)

    def backward(g):
        a.accumulate_grad(g / (2.0 * data))

    return _make(data, (a,), backward, "sqrt")


def relu(a):
    """Elementwise max(x, 0)."""
    a = _coerce(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        a.accumulate_grad(g * (a.data > 0.0))

    return _make(data, (a,), backward, "relu")


def _sigmoid_stable(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    """Elementwise logistic function, overflow-safe across float64 range."""
    a = _coerce(a)
    data = _sigmoid_stable(a.data)

    def backward(g):
        a.accumulate_grad(g * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


def tsum(a, axis=None, keepdims=False):
    a = _coerce(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), backward, "sum")


def tmean(a, axis=None, keepdims=False):
    a = _coerce(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def tmax(a, axis, keepdims=False):
    """Maximum along one axis; gradient flows to the first max per slice."""
    a = _coerce(a)
    idx = np.argmax(a.data, axis=axis)
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        gin = np.zeros_like(a.data)
        np.put_along_axis(gin, np.expand_dims(idx, axis), g, axis=axis)
        a.accumulate_grad(gin)

    return _make(data, (a,), backward, "max")


def take_last(a, idx):
    """Gather along the last axis with a 1-D integer index array.

    Repeated indices accumulate their gradients, so this also serves as
    edge-replicated padding when the index array clips at the ends.
    """
    a = _coerce(a)
    idx = np.asarray(idx, dtype=np.int64)
    data = a.data[..., idx]

    def backward(g):
        gin = np.zeros_like(a.data)
        lead = tuple(slice(None) for _ in range(a.data.ndim - 1))
        np.add.at(gin, lead + (idx,), g)
        a.accumulate_grad(gin)

    return _make(data, (a,), backward, "take_last")


def concat(tensors, axis=0):
    """Concatenate tensors along one axis."""
    tensors = [_coerce(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets, offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(sl)])

    return _make(data, tuple(tensors), backward, "concat")


def mask_fill(a, mask, value):
    """Replace entries where ``mask`` is True by ``value`` (no gradient there)."""
    a = _coerce(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.data.shape)
    data = np.where(mask, value, a.data)

    def backward(g):
        a.accumulate_grad(np.where(mask, 0.0, g))

    return _make(data, (a,), backward, "mask_fill")


# -- neural-network ops ------------------------------------------------


def _as_batched(x, expected_ndim):
    if x.ndim == expected_ndim:
        return x, False
    if x.ndim == expected_ndim - 1:
        return reshape(x, (1,) + x.shape), True
    raise ShapeError(
        f"expected {expected_ndim - 1}D or {expected_ndim}D input, got {x.shape}")


def conv2d(x, weight, bias, stride=1, padding=0):
    """2D cross-correlation.

    x is [Cin,H,W] or [N,Cin,H,W]; weight is [Cout,Cin,k,k] with odd k;
    bias is [Cout].  Output spatial size follows the usual
    floor((H + 2*padding - k)/stride) + 1 formula and must be >= 1.
    """
    x, weight, bias = _coerce(x), _coerce(weight), _coerce(bias)
    xb, squeeze = _as_batched(x, 4)
    n, cin, h, w = xb.shape
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d weight must be [Cout,Cin,k,k], got {weight.shape}")
    cout, wcin, k, _ = weight.shape
    if k % 2 != 1:
        raise ShapeError(f"conv2d kernel size must be odd, got k={k}")
    if wcin != cin:
        raise ShapeError(
            f"conv2d input channel dimension {cin} != weight channel dimension {wcin}")
    if bias.shape != (cout,):
        raise ShapeError(
            f"conv2d bias dimension {bias.shape} != output channels ({cout},)")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d output size {ho}x{wo} invalid for input {h}x{w}, "
            f"k={k}, stride={stride}, padding={padding}")
    kern = backend.kernels()
    xdata = np.ascontiguousarray(xb.data)
    data = kern.conv2d_forward(xdata, weight.data, bias.data, stride, padding)

    def backward(g):
        g = np.ascontiguousarray(g)
        if weight.requires_grad or bias.requires_grad:
            gw, gb = kern.conv2d_param_grad(xdata, g, k, stride, padding)
            if weight.requires_grad:
                weight.accumulate_grad(gw)
            if bias.requires_grad:
                bias.accumulate_grad(gb)
        if xb.requires_grad:
            xb.accumulate_grad(_conv_input_grad(g, weight.data, stride, padding,
                                                (h, w)))

    out = _make(data, (xb, weight, bias), backward, "conv2d")
    return reshape(out, out.shape[1:]) if squeeze else out


def _dilate_rows_cols(g, stride):
    n, c, ho, wo = g.shape
    out = np.zeros((n, c, (ho - 1) * stride + 1, (wo - 1) * stride + 1))
    out[:, :, ::stride, ::stride] = g
    return out


def _conv_input_grad(gout, w, stride, padding, in_hw):
    """Input gradient as a full cross-correlation with flipped weights."""
    k = w.shape[2]
    wflip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gd = _dilate_rows_cols(gout, stride) if stride > 1 else gout
    zero_bias = np.zeros(wflip.shape[0])
    full = backend.kernels().conv2d_forward(
        np.ascontiguousarray(gd), wflip, zero_bias, 1, k - 1)
    h, wd = in_hw
    gin = np.zeros((gout.shape[0], wflip.shape[0], h, wd))
    cy = min(h, full.shape[2] - padding)
    cx = min(wd, full.shape[3] - padding)
    gin[:, :, :cy, :cx] = full[:, :, padding:padding + cy, padding:padding + cx]
    return gin


def max_pool2d(x, k, stride=1, padding=0):
    """Per-window maximum; ties route the gradient to the lowest linear index."""
    x = _coerce(x)
    xb, squeeze = _as_batched(x, 4)
    n, c, h, w = xb.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"max_pool2d output size {ho}x{wo} invalid for input {h}x{w}, "
            f"k={k}, stride={stride}, padding={padding}")
    kern = backend.kernels()
    data, arg = kern.maxpool2d_forward(np.ascontiguousarray(xb.data), k, stride,
                                       padding)

    def backward(g):
        xb.accumulate_grad(kern.maxpool2d_backward(np.ascontiguousarray(g), arg,
                                                   (n, c, h, w)))

    out = _make(data, (xb,), backward, "max_pool2d")
    return reshape(out, out.shape[1:]) if squeeze else out


def adaptive_avg_pool2d(x, out_h, out_w):
    """Average pooling onto a fixed output grid of region means."""
    x = _coerce(x)
    xb, squeeze = _as_batched(x, 4)
    n, c, h, w = xb.shape
    if not (1 <= out_h <= h) or not (1 <= out_w <= w):
        raise ShapeError(
            f"adaptive_avg_pool2d target {out_h}x{out_w} invalid for input {h}x{w}")
    kern = backend.kernels()
    data = kern.adaptive_avgpool2d_forward(np.ascontiguousarray(xb.data), out_h,
                                           out_w)

    def backward(g):
        xb.accumulate_grad(kern.adaptive_avgpool2d_backward(
            np.ascontiguousarray(g), h, w))

    out = _make(data, (xb,), backward, "adaptive_avg_pool2d")
    return reshape(out, out.shape[1:]) if squeeze else out


def dense(x, weight, bias):
    """Affine map weight @ x + bias for x of shape [Din] or [N,Din]."""
    x, weight, bias = _coerce(x), _coerce(weight), _coerce(bias)
    if weight.ndim != 2:
        raise ShapeError(f"dense weight must be 2D, got {weight.shape}")
    dout, din = weight.shape
    if bias.shape != (dout,):
        raise ShapeError(f"dense bias dimension {bias.shape} != ({dout},)")
    xb, squeeze = _as_batched(x, 2)
    if xb.shape[1] != din:
        raise ShapeError(
            f"dense input dimension {xb.shape[1]} != weight input dimension {din}")
    out = add(matmul(xb, transpose(weight)), bias)
    return reshape(out, (dout,)) if squeeze else out


def stats_pool(x, eps=1e-10):
    """Concatenate per-row mean and population std over the last (time) axis.

    x is [D,T] or [N,D,T]; the result is [2D] or [N,2D].
    """
    x = _coerce(x)
    xb, squeeze = _as_batched(x, 3)
    n, d, t = xb.shape
    if t < 1:
        raise ContractError("stats_pool received an empty time axis (T=0)")
    m = xb.data.mean(axis=2)
    centered = xb.data - m[:, :, None]
    var = np.mean(centered * centered, axis=2)
    std = np.sqrt(var + eps)
    data = np.concatenate([m, std], axis=1)

    def backward(g):
        gm = g[:, :d]
        gs = g[:, d:]
        gin = gm[:, :, None] / t + gs[:, :, None] * centered / (t * std[:, :, None])
        xb.accumulate_grad(gin)

    out = _make(data, (xb,), backward, "stats_pool")
    return reshape(out, (2 * d,)) if squeeze else out


def cosine(a, b):
    """Cosine similarity as a plain float, clamped into [-1, 1].

    Raises DegenerateVectorError when either vector has zero norm.  For a
    differentiable similarity see evonas.verifier.scaled_similarity.
    """
    av = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    bv = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine of a zero-norm vector is undefined")
    return float(np.clip(np.dot(av, bv) / (na * nb), -1.0, 1.0))


def softmax_xent(logits, labels):
    """Cross-entropy between softmax(logits) and integer labels.

    logits is [n_classes] with scalar label, or [B,n_classes] with [B]
    labels; the batched form returns the mean loss.  Stable via
    log-sum-exp shifting.
    """
    logits = _coerce(logits)
    lb, squeeze = _as_batched(logits, 2)
    b, n = lb.shape
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} != batch ({b},)")
    if labels.min() < 0 or labels.max() >= n:
        bad = labels[(labels < 0) | (labels >= n)][0]
        raise ContractError(f"label {bad} outside [0, {n})")
    shifted = lb.data - lb.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(b)
    losses = lse - shifted[rows, labels]
    data = np.float64(losses.mean())

    def backward(g):
        soft = np.exp(shifted)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[rows, labels] -= 1.0
        lb.accumulate_grad(float(g) * soft / b)

    return _make(data, (lb,), backward, "softmax_xent")
