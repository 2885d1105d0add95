"""Explicit-knowledge decoder and the local-only baseline head.

Parameters (``D`` channels, ``N`` part classes, ``C`` attributes):

``ek.Wa`` (D x C) attribute query bank, ``ek.Wb`` (D x N) part-class
semantics, ``ek.Wc`` (D x D) class-to-attribute projection, and the decoder
block under ``dec.`` (attention ``dec.msa.*``, layer norm ``dec.ln.*``,
feed-forward ``dec.mlp.*``).  The baseline head lives under ``base.``.
"""
from dataclasses import dataclass

import numpy as np

from . import ik_en, roi
from .errors import DimensionError, NoCandidatesError, ValidationError
from .numerics import layers, ops

LN_EPS = 1e-5
QUERY_INIT_STD = 1.0


@dataclass
class AttributeQuerySet:
    candidate_indices: list
    q_u: np.ndarray
    c_star: np.ndarray


@dataclass
class AttributePrediction:
    candidate_indices: list
    probabilities: np.ndarray
    n_attributes: int

    @property
    def dense(self):
        out = np.zeros(self.n_attributes, dtype=np.float64)
        out[self.candidate_indices] = ops.value(self.probabilities)
        return out

    def positive(self, threshold=0.5):
        """Attribute indices predicted present (strictly above ``threshold``)."""
        probs = ops.value(self.probabilities)
        return {c for c, p in zip(self.candidate_indices, probs) if p > threshold}

    @classmethod
    def empty(cls, n_attributes):
        return cls([], np.zeros(0), n_attributes)


@dataclass
class PartDetection:
    """A detected part: box, class distribution ``c_u``, confidence, owner."""

    box: "roi.Box"
    c_u: np.ndarray
    score: float = 1.0
    person: int = 0
    gt_index: int = -1

    def validate(self, tol=1e-5):
        c = np.asarray(self.c_u, dtype=np.float64)
        if c.ndim != 1 or c.min() < 0 or abs(c.sum() - 1) > tol:
            raise ValidationError("c_u must be a non-negative distribution summing to 1")
        if not 0 <= self.score <= 1:
            raise ValidationError(f"score {self.score} outside [0, 1]")
        self.box.validate()
        return self

    @property
    def part_class(self):
        return int(np.argmax(self.c_u))


def init_params(rng, dim, n_parts, n_attributes, mlp_hidden=None, dtype=np.float32,
                query_std=QUERY_INIT_STD):
    """Decoder parameters.  The MLP output layer starts at zero, so the
    similarity gradient reaching it scales with the queries; ``query_std``
    keeps that gradient away from zero at the first step."""
    mlp_hidden = mlp_hidden or 2 * dim
    params = {
        "ek.Wa": (query_std * rng.standard_normal((dim, n_attributes))).astype(dtype),
        "ek.Wb": (0.02 * rng.standard_normal((dim, n_parts))).astype(dtype),
        "ek.Wc": layers.init_linear(rng, dim, dim, bias=False, dtype=dtype)[0],
    }
    params.update(layers.init_msa(rng, dim, prefix="dec.msa.", dtype=dtype))
    params["dec.ln.gain"] = np.ones(dim, dtype=dtype)
    params["dec.ln.shift"] = np.zeros(dim, dtype=dtype)
    params.update(layers.init_mlp(rng, dim, mlp_hidden, prefix="dec.mlp.", dtype=dtype))
    return params


def _g(kg):
    return kg.g if hasattr(kg, "g") else np.asarray(kg)


def attribute_scores(c_u, kg):
    """Weighting vector ``c_u^T g``."""
    return np.asarray(c_u, dtype=np.float64) @ _g(kg)


def attribute_queries(c_u, kg, w_a, tau=0.0):
    c_u = np.asarray(c_u, dtype=np.float64)
    if c_u.ndim != 1 or c_u.min() < 0 or abs(c_u.sum() - 1) > 1e-5:
        raise ValidationError("c_u must be a non-negative distribution summing to 1")
    c_star = attribute_scores(c_u, kg)
    cand = [int(j) for j in np.flatnonzero(c_star > tau)]
    if not cand:
        raise NoCandidatesError(c_star)
    dtype = ops.value(w_a).dtype
    q_u = ops.mul(ops.gather(w_a, cand, axis=-1), c_star[cand].astype(dtype))
    return AttributeQuerySet(cand, q_u, c_star)


def class_conditioned_rep(c_u, kg, w_b, w_c, f_h):
    """``f_h`` followed by ``C`` class-conditioned attribute tokens."""
    g = _g(kg)
    dtype = ops.value(w_b).dtype
    cg = (np.asarray(c_u)[..., :, None] * g).astype(dtype)   # [..., N, C]
    f_ca = ops.relu(ops.matmul(w_c, ops.matmul(w_b, cg)))
    fh = ops.value(f_h)
    if fh.shape[-2] != ops.value(f_ca).shape[-2]:
        raise DimensionError(f"f_h has {fh.shape[-2]} channels, class tokens have "
                             f"{ops.value(f_ca).shape[-2]}")
    return ops.concat([f_h, f_ca], axis=-1)


def decode(q, f_hat, params, heads, residual=False):
    """``MLP(LN(MSA(q, f_hat, f_hat)))``; one embedding per query column."""
    q_u = q.q_u if isinstance(q, AttributeQuerySet) else q
    a = layers.msa(q_u, f_hat, f_hat, params, heads, prefix="dec.msa.")
    if residual:
        a = ops.add(a, q_u)
    gain = ops.reshape(params["dec.ln.gain"], (-1, 1))
    shift = ops.reshape(params["dec.ln.shift"], (-1, 1))
    h = ops.layer_norm(a, gain, shift, LN_EPS, axis=-2)
    out = layers.mlp(h, params, prefix="dec.mlp.")
    if residual:
        out = ops.add(out, a)
    return out


def similarity(q_u, f):
    """Per-column channel dot product of queries and decoded embeddings."""
    ops.check_same_shape(q_u, f, "predict")
    return ops.sum(ops.mul(q_u, f), axis=-2)


def predict(q, f):
    prob = ops.sigmoid(similarity(q.q_u, f))
    return AttributePrediction(list(q.candidate_indices), prob, len(q.c_star))


# -- local-only baseline -------------------------------------------------------

def init_baseline(rng, dim, tokens, n_attributes, hidden=64, dtype=np.float32):
    params = {}
    for i in range(1, 5):
        w, b = layers.init_linear(rng, dim, dim, dtype=dtype)
        params[f"base.c{i}.w"], params[f"base.c{i}.b"] = w, b
    params["base.fc1.w"], params["base.fc1.b"] = layers.init_linear(rng, hidden, dim * tokens, dtype=dtype)
    params["base.fc2.w"], params["base.fc2.b"] = layers.init_linear(
        rng, n_attributes, hidden, zero=True, dtype=dtype)
    return params


def baseline_head(f_u, params):
    """Attribute logits from the part's own RoI tokens ``[..., D, T]``.

    Four per-location dense layers (channel mixing at each RoI cell) stand
    in for the convolution stack, then two fully-connected layers over the
    flattened grid.
    """
    x = f_u
    for i in range(1, 5):
        x = ops.relu(ops.linear(x, params[f"base.c{i}.w"], params[f"base.c{i}.b"]))
    shape = ops.value(x).shape
    flat_dim = shape[-2] * shape[-1]
    if ops.value(params["base.fc1.w"]).shape[1] != flat_dim:
        raise DimensionError(f"baseline expects {ops.value(params['base.fc1.w']).shape[1]} "
                             f"flattened inputs, got {flat_dim}")
    x = ops.reshape(x, shape[:-2] + (flat_dim, 1))
    x = ops.relu(ops.linear(x, params["base.fc1.w"], params["base.fc1.b"]))
    x = ops.linear(x, params["base.fc2.w"], params["base.fc2.b"])
    return ops.reshape(x, ops.value(x).shape[:-1])


# -- end to end -----------------------------------------------------------------

def ke_forward(fmap, person, part_det, kg, params, heads=4, tau=0.0, size_u=14,
               size_v=14, residual=False):
    """Full head for one detection: RoI pair -> encoder -> decoder -> probabilities."""
    f_v, f_u = roi.pair_regions(fmap, person, part_det.box, size_v, size_u)
    dtype = ops.value(params["ek.Wa"]).dtype
    f_v = ik_en.flatten_spatial(f_v).astype(dtype)
    f_u = ik_en.flatten_spatial(f_u).astype(dtype)
    f_h = ik_en.encode(f_u, f_v, part_det.box, person, params)
    try:
        q = attribute_queries(part_det.c_u, kg, params["ek.Wa"], tau)
    except NoCandidatesError as exc:
        raise NoCandidatesError(exc.c_star, part=part_det.gt_index) from None
    f_hat = class_conditioned_rep(part_det.c_u, kg, params["ek.Wb"], params["ek.Wc"], f_h)
    f = decode(q, f_hat, params, heads, residual)
    return predict(q, f)
