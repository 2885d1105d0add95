"""Implicit-knowledge encoder: person-to-part visual context plus box geometry.

All features use a channels-by-tokens layout ``[..., D, T]``; spatial RoI
grids are flattened row-major into the token axis.  Linear maps are stored
as ``out x in`` weights applied on the left, so ``ik.V1`` holds the
transposed projection of the person feature.

Parameters (``D`` = channels):

=========  ============  ==========================================
name       shape         role
=========  ============  ==========================================
ik.V1      D/2 x D       person projection for the affinity
ik.V2      D/2 x D       person projection for the propagated context
ik.U       D/2 x D/2     part projection for the affinity
ik.Wz      D x D         fuses part channels with the context
ik.Ws      D x 4         lifts the relative geometry vector
=========  ============  ==========================================
"""
import math

import numpy as np

from .errors import ConfigError, DimensionError, InvalidBoxError
from .numerics import layers, ops

PARAM_NAMES = ("ik.V1", "ik.V2", "ik.U", "ik.Wz", "ik.Ws")


def init_params(rng, dim, dtype=np.float32):
    if dim % 2:
        raise ConfigError(f"channel count must be even, got {dim}")
    half = dim // 2
    shapes = {"ik.V1": (half, dim), "ik.V2": (half, dim), "ik.U": (half, half),
              "ik.Wz": (dim, dim), "ik.Ws": (dim, 4)}
    return {k: layers.init_linear(rng, *s, bias=False, dtype=dtype)[0] for k, s in shapes.items()}


def flatten_spatial(f):
    """``[..., D, S, S] -> [..., D, S*S]``."""
    f = np.asarray(f)
    return f.reshape(f.shape[:-2] + (f.shape[-2] * f.shape[-1],))


def split_channels(f_u):
    """Contiguous halves of the channel axis: ``(f_u1, f_u2)``."""
    dim = ops.value(f_u).shape[-2]
    if dim % 2:
        raise ConfigError(f"cannot split {dim} channels evenly")
    half = dim // 2
    return ops.take(f_u, 0, half, axis=-2), ops.take(f_u, half, dim, axis=-2)


def affinity(f_u2, f_v, params):
    """Person-pixel by part-pixel affinity; every column is a distribution."""
    pv = ops.matmul(params["ik.V1"], f_v)          # [..., D/2, Tv]
    pu = ops.matmul(params["ik.U"], f_u2)          # [..., D/2, Tu]
    scores = ops.matmul(ops.swapaxes(pv, -1, -2), pu)  # [..., Tv, Tu]
    return ops.softmax(scores, axis=-2)


def visual_context(f_u, f_v, params, return_affinity=False):
    """Visually enhanced part feature ``[..., D, Tu]``."""
    fu, fv = ops.value(f_u), ops.value(f_v)
    if fu.shape[-2] != fv.shape[-2] or fu.shape[:-2] != fv.shape[:-2]:
        raise DimensionError(f"part feature {fu.shape} and person feature {fv.shape} disagree")
    f_u1, f_u2 = split_channels(f_u)
    a = affinity(f_u2, f_v, params)
    h_z = ops.add(f_u2, ops.matmul(ops.matmul(params["ik.V2"], f_v), a))
    out = ops.matmul(params["ik.Wz"], ops.concat([f_u1, h_z], axis=-2))
    return (out, a) if return_affinity else out


def geometry_vector(part, person):
    """Raw relative geometry ``(dx/w_u, dy/h_u, log(w_v/w_u), log(h_v/h_u))``."""
    for b in (part, person):
        if not (b.w > 0 and b.h > 0):
            raise InvalidBoxError(f"box {b.as_tuple()} must have positive width and height")
    return np.array([(part.x - person.x) / part.w,
                     (part.y - person.y) / part.h,
                     math.log(person.w / part.w),
                     math.log(person.h / part.h)], dtype=np.float64)


def geometry_context(part, person, w_s):
    """``D x 1`` geometry token."""
    raw = geometry_vector(part, person).astype(ops.value(w_s).dtype).reshape(4, 1)
    return ops.matmul(w_s, raw)


def encode_features(f_u, f_v, geom, params):
    """Token 0 is the geometry token, tokens ``1..Tu`` the enhanced part pixels.

    ``geom`` is the raw geometry vector shaped ``[..., 4, 1]``.
    """
    h_s = ops.matmul(params["ik.Ws"], geom)
    return ops.concat([h_s, visual_context(f_u, f_v, params)], axis=-1)


def encode(f_u, f_v, part, person, params):
    """Encode one part: ``D x (Tu + 1)``."""
    dtype = ops.value(params["ik.Ws"]).dtype
    geom = geometry_vector(part, person).astype(dtype).reshape(4, 1)
    return encode_features(f_u, f_v, geom, params)
