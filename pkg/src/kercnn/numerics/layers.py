"""Composite layers built from :mod:`ops` (attention and the feed-forward block)."""
import math

import numpy as np

from ..errors import ConfigError, DimensionError
from . import ops


def init_linear(rng, n_out, n_in, bias=True, zero=False, dtype=np.float32):
    """Uniform fan-in initialisation, ``U(-1/sqrt(n_in), 1/sqrt(n_in))``."""
    if zero:
        w = np.zeros((n_out, n_in), dtype=dtype)
    else:
        bound = 1.0 / math.sqrt(n_in)
        w = rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype)
    if not bias:
        return w, None
    return w, np.zeros(n_out, dtype=dtype)


def init_msa(rng, dim, prefix="", dtype=np.float32):
    params = {}
    for name in ("q", "k", "v", "o"):
        w, b = init_linear(rng, dim, dim, dtype=dtype)
        params[f"{prefix}w{name}"] = w
        params[f"{prefix}b{name}"] = b
    return params


def init_mlp(rng, dim, hidden, prefix="", zero_out=True, dtype=np.float32):
    w1, b1 = init_linear(rng, hidden, dim, dtype=dtype)
    w2, b2 = init_linear(rng, dim, hidden, zero=zero_out, dtype=dtype)
    return {f"{prefix}w1": w1, f"{prefix}b1": b1, f"{prefix}w2": w2, f"{prefix}b2": b2}


def msa(query, key, value, params, heads, prefix=""):
    """Multi-head attention on ``[..., D, T]`` inputs.

    Per head, ``out_h = V_h softmax(K_h^T Q_h / sqrt(D / heads))`` with the
    softmax taken over keys; heads are concatenated and projected by ``wo``.
    """
    dim = ops.value(query).shape[-2]
    if heads < 1 or dim % heads:
        raise ConfigError(f"model dimension {dim} not divisible by {heads} heads")
    kv = ops.value(key).shape
    if ops.value(value).shape != kv or kv[-2] != dim:
        raise DimensionError(
            f"msa: query {ops.value(query).shape}, key {kv}, value {ops.value(value).shape}")
    p = lambda n: params[prefix + n]
    q = ops.linear(query, p("wq"), p("bq"))
    k = ops.linear(key, p("wk"), p("bk"))
    v = ops.linear(value, p("wv"), p("bv"))
    dh = dim // heads

    def split(x):
        shape = ops.value(x).shape
        return ops.reshape(x, shape[:-2] + (heads, dh, shape[-1]))

    qh, kh, vh = split(q), split(k), split(v)
    scores = ops.scale(ops.matmul(ops.swapaxes(kh, -1, -2), qh), 1.0 / math.sqrt(dh))
    attn = ops.softmax(scores, axis=-2)
    out = ops.matmul(vh, attn)
    shape = ops.value(out).shape
    out = ops.reshape(out, shape[:-3] + (dim, shape[-1]))
    return ops.linear(out, p("wo"), p("bo"))


def mlp(x, params, prefix=""):
    """Per-token ``dense -> relu -> dense``."""
    w1 = params[prefix + "w1"]
    if ops.value(w1).shape[1] != ops.value(x).shape[-2]:
        raise DimensionError(
            f"mlp: input has {ops.value(x).shape[-2]} channels, first layer expects "
            f"{ops.value(w1).shape[1]}")
    h = ops.relu(ops.linear(x, w1, params[prefix + "b1"]))
    return ops.linear(h, params[prefix + "w2"], params[prefix + "b2"])
