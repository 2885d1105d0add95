"""Forward and backward kernels on raw ndarrays.

Each primitive comes as a pair ``<name>`` / ``<name>_backward``.  Arrays may
carry leading batch axes; weights without batch axes broadcast against them
and their gradients are summed back to the weight shape.
"""
import numpy as np

from ..errors import DimensionError


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (undo numpy broadcasting)."""
    shape = tuple(shape)
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return np.matmul(a, b)


def matmul_backward(dc, a, b):
    da = np.matmul(dc, np.swapaxes(b, -1, -2))
    db = np.matmul(np.swapaxes(a, -1, -2), dc)
    return unbroadcast(da, a.shape), unbroadcast(db, b.shape)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dy, y, axis=-1):
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dy, x):
    # derivative at exactly 0 is taken as 0
    return dy * (x > 0)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(dy, y):
    return dy * y * (1 - y)


def layer_norm(x, gain, shift, eps=1e-5, axis=-1):
    """Normalise ``x`` along ``axis``; returns ``(y, cache)``."""
    mean = x.mean(axis=axis, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + shift, (xhat, rstd)


def layer_norm_backward(dy, gain, cache, axis=-1, shift_shape=None):
    xhat, rstd = cache
    dxhat = dy * gain
    dx = rstd * (dxhat - dxhat.mean(axis=axis, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True))
    dgain = unbroadcast(dy * xhat, np.shape(gain))
    dshift = unbroadcast(dy, shift_shape if shift_shape is not None else np.shape(gain))
    return dx, dgain, dshift


def bce(prob, target, weight, eps=1e-7):
    """Weighted binary cross-entropy on probabilities.

    ``weight`` zeroes out entries (non-candidates) and sets the averaging:
    each row is averaged over its nonzero weights, then rows are averaged.
    """
    p = np.clip(prob, eps, 1 - eps)
    per = -(target * np.log(p) + (1 - target) * np.log(1 - p))
    rows = weight.sum(axis=-1, keepdims=True)
    w = weight / np.maximum(rows, 1) / max(int(np.prod(rows.shape)), 1)
    return float((per * w).sum()), w


def bce_backward(dloss, prob, target, w, eps=1e-7):
    inside = (prob > eps) & (prob < 1 - eps)
    p = np.clip(prob, eps, 1 - eps)
    return dloss * w * inside * (p - target) / (p * (1 - p))
