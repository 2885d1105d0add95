"""Differentiable operations over ndarrays or tape variables."""
import numpy as np

from ..errors import ConfigError, DimensionError
from . import kernels as K
from .tape import Var


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape(*xs):
    for x in xs:
        if isinstance(x, Var) and x.requires_grad:
            return x.tape
    return None


def _emit(out, parents, backward):
    tape = _tape(*parents)
    if tape is None:
        return out
    return tape.record(out, parents, backward)


def matmul(a, b):
    av, bv = value(a), value(b)
    return _emit(K.matmul(av, bv), (a, b), lambda g: K.matmul_backward(g, av, bv))


def add(a, b):
    av, bv = value(a), value(b)
    return _emit(av + bv, (a, b),
                 lambda g: (K.unbroadcast(g, av.shape), K.unbroadcast(g, np.shape(bv))))


def mul(a, b):
    av, bv = value(a), value(b)
    return _emit(av * bv, (a, b),
                 lambda g: (K.unbroadcast(g * bv, av.shape), K.unbroadcast(g * av, np.shape(bv))))


def scale(a, s):
    return _emit(value(a) * s, (a,), lambda g: (g * s,))


def softmax(x, axis=-1):
    y = K.softmax(value(x), axis)
    return _emit(y, (x,), lambda g: (K.softmax_backward(g, y, axis),))


def relu(x):
    xv = value(x)
    return _emit(K.relu(xv), (x,), lambda g: (K.relu_backward(g, xv),))


def sigmoid(x):
    y = K.sigmoid(value(x))
    return _emit(y, (x,), lambda g: (K.sigmoid_backward(g, y),))


_POINTWISE = {"relu": relu, "sigmoid": sigmoid}


def pointwise(x, kind):
    try:
        return _POINTWISE[kind](x)
    except KeyError:
        raise ConfigError(f"unknown pointwise kind {kind!r}; expected one of {sorted(_POINTWISE)}") from None


def layer_norm(x, gain, shift, eps=1e-5, axis=-1):
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    gv, sv = value(gain), value(shift)
    y, cache = K.layer_norm(value(x), gv, sv, eps, axis)
    return _emit(y, (x, gain, shift),
                 lambda g: K.layer_norm_backward(g, gv, cache, axis, np.shape(sv)))


def concat(xs, axis):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return _emit(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(x, start, stop, axis):
    """Contiguous slice ``[start, stop)`` along ``axis``."""
    xv = value(x)
    index = [slice(None)] * xv.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def back(g):
        full = np.zeros_like(xv)
        full[index] = g
        return (full,)

    return _emit(xv[index], (x,), back)


def gather(x, indices, axis):
    """Select ``indices`` along ``axis`` (no repeats)."""
    xv = value(x)
    idx = np.asarray(indices, dtype=np.int64)

    def back(g):
        full = np.zeros_like(xv)
        index = [slice(None)] * xv.ndim
        index[axis] = idx
        full[tuple(index)] = g
        return (full,)

    return _emit(np.take(xv, idx, axis=axis), (x,), back)


def reshape(x, shape):
    xv = value(x)
    return _emit(xv.reshape(shape), (x,), lambda g: (g.reshape(xv.shape),))


def swapaxes(x, a, b):
    return _emit(np.swapaxes(value(x), a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def sum(x, axis=None, keepdims=False):
    xv = value(x)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return _emit(np.asarray(xv.sum(axis=axis, keepdims=keepdims)), (x,), back)


def mean(x, axis=None, keepdims=False):
    xv = value(x)
    n = xv.size if axis is None else xv.shape[axis]
    return scale(sum(x, axis, keepdims), 1.0 / n)


def bce(prob, target, weight, eps=1e-7):
    """Scalar weighted binary cross-entropy (see :func:`kernels.bce`)."""
    pv = value(prob)
    loss, w = K.bce(pv, target, weight, eps)
    out = np.asarray(loss, dtype=pv.dtype)
    return _emit(out, (prob,), lambda g: (K.bce_backward(g, pv, target, w, eps),))


def linear(x, weight, bias=None):
    """``weight @ x (+ bias)`` on a channels-by-tokens layout."""
    y = matmul(weight, x)
    if bias is not None:
        y = add(y, reshape(bias, (-1, 1)))
    return y


def check_same_shape(a, b, what):
    if value(a).shape != value(b).shape:
        raise DimensionError(f"{what}: shapes {value(a).shape} and {value(b).shape} differ")
