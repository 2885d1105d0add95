"""Head variants over batches of part features.

Batched forward passes score all ``C`` attribute queries and carry a
candidate mask instead of gathering the candidate columns.  Attention,
layer norm and the feed-forward block act on each query column
independently, so masked columns never influence the candidates and the
result equals the per-part gather formulation in :func:`ek_de.ke_forward`.
"""
from dataclasses import asdict, dataclass

import numpy as np

from . import ek_de, ik_en, roi
from .errors import ConfigError
from .numerics import layers, ops

VARIANTS = ("ke_full", "ik_only", "ek_only", "baseline")
PART_REPS = ("z", "zs", "zsc")


@dataclass
class HeadConfig:
    variant: str
    dim: int
    n_parts: int
    n_attributes: int
    size_u: int = 14
    size_v: int = 14
    heads: int = 4
    mlp_hidden: int = 0
    tau: float = 0.0
    residual: bool = False
    part_rep: str = "zsc"
    baseline_hidden: int = 64
    query_init_std: float = ek_de.QUERY_INIT_STD

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.part_rep not in PART_REPS:
            raise ConfigError(f"part_rep must be one of {PART_REPS}")
        if self.variant != "baseline" and self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by {self.heads} heads")
        if self.variant in ("ke_full", "ik_only") and self.dim % 2:
            raise ConfigError("the encoder needs an even channel count")
        if self.tau < 0:
            raise ConfigError("tau must be non-negative")
        return self

    @property
    def uses_knowledge(self):
        return self.variant in ("ke_full", "ek_only")

    def to_dict(self):
        return asdict(self)


def init_params(cfg, seed=0, dtype=np.float32):
    cfg.validate()
    rng = np.random.default_rng([seed, 0x1A17])
    d = cfg.dim
    params = {}
    if cfg.variant == "baseline":
        return ek_de.init_baseline(rng, d, cfg.size_u ** 2, cfg.n_attributes,
                                   cfg.baseline_hidden, dtype=dtype)
    if cfg.variant in ("ke_full", "ik_only"):
        params.update(ik_en.init_params(rng, d, dtype=dtype))
    if cfg.variant == "ik_only":
        w, b = layers.init_linear(rng, cfg.n_attributes, d, zero=True, dtype=dtype)
        params["ik.cls.w"], params["ik.cls.b"] = w, b
    if cfg.uses_knowledge:
        params.update(ek_de.init_params(rng, d, cfg.n_parts, cfg.n_attributes,
                                        cfg.mlp_hidden or 2 * d, dtype=dtype,
                                        query_std=cfg.query_init_std))
    return params


@dataclass
class PartBatch:
    f_u: np.ndarray      # B x D x Tu
    f_v: np.ndarray      # B x D x Tv
    geom: np.ndarray     # B x 4 x 1
    c_u: np.ndarray      # B x N
    targets: np.ndarray  # B x C


@dataclass
class PartTable:
    """RoI features and labels for every detection of a dataset."""

    f_u: np.ndarray
    f_v: np.ndarray       # one entry per sample
    sample_of: np.ndarray
    part_of: np.ndarray   # index of the GT part each row corresponds to
    geom: np.ndarray
    c_u: np.ndarray
    targets: np.ndarray
    boxes: list
    scores: np.ndarray

    def __len__(self):
        return len(self.sample_of)

    def batch(self, idx):
        idx = np.asarray(idx)
        return PartBatch(self.f_u[idx], self.f_v[self.sample_of[idx]], self.geom[idx],
                         self.c_u[idx], self.targets[idx])


def build_table(ds, cfg, detections=None, dtype=np.float32):
    """Extract RoI features for ``detections`` (ground truth when ``None``)."""
    from .data import detections_from_gt
    if detections is None:
        detections = detections_from_gt(ds, 0.0)
    f_u, f_v, sample_of, part_of, geom, c_u, targets, boxes, scores = ([] for _ in range(9))
    for i, (s, dets) in enumerate(zip(ds.samples, detections)):
        f_v.append(ik_en.flatten_spatial(roi.roi_align(s.feature_map, s.person_box, cfg.size_v)))
        if not dets:
            continue
        feats = roi.roi_align_many(s.feature_map, [d.box for d in dets], cfg.size_u)
        f_u.append(ik_en.flatten_spatial(feats))
        for d in dets:
            sample_of.append(i)
            part_of.append(d.gt_index)
            geom.append(ik_en.geometry_vector(d.box, s.person_box))
            c_u.append(np.asarray(d.c_u, dtype=np.float64))
            y = np.zeros(ds.n_attributes)
            if d.gt_index >= 0:
                y[sorted(s.parts[d.gt_index].attributes)] = 1
            targets.append(y)
            boxes.append(d.box)
            scores.append(d.score)
    d, n, c = cfg.dim, ds.n_parts, ds.n_attributes
    return PartTable(
        f_u=(np.concatenate(f_u) if f_u else np.zeros((0, d, cfg.size_u ** 2))).astype(dtype),
        f_v=np.stack(f_v).astype(dtype),
        sample_of=np.asarray(sample_of, dtype=np.int64),
        part_of=np.asarray(part_of, dtype=np.int64),
        geom=np.asarray(geom, dtype=dtype).reshape(-1, 4, 1),
        c_u=np.asarray(c_u, dtype=np.float64).reshape(-1, n),
        targets=np.asarray(targets, dtype=dtype).reshape(-1, c),
        boxes=boxes, scores=np.asarray(scores, dtype=np.float64),
    )


def candidate_mask(cfg, c_u, kg):
    """``B x C`` 0/1 mask of attributes each part may be scored on."""
    if not cfg.uses_knowledge:
        return np.ones((len(c_u), cfg.n_attributes))
    return (ek_de.attribute_scores(c_u, kg) > cfg.tau).astype(np.float64)


def forward(cfg, params, batch, kg=None):
    """Return ``(probabilities, mask)``; probabilities are ``B x C``."""
    dtype = ops.value(next(iter(params.values()))).dtype
    if cfg.variant == "baseline":
        prob = ops.sigmoid(ek_de.baseline_head(batch.f_u, params))
        return prob, np.ones((len(batch.c_u), cfg.n_attributes))
    if cfg.variant == "ik_only":
        f_h = ik_en.encode_features(batch.f_u, batch.f_v, batch.geom, params)
        pooled = ops.mean(f_h, axis=-1, keepdims=True)
        logits = ops.linear(pooled, params["ik.cls.w"], params["ik.cls.b"])
        prob = ops.sigmoid(ops.reshape(logits, ops.value(logits).shape[:-1]))
        return prob, np.ones((len(batch.c_u), cfg.n_attributes))

    g = kg.g
    c_star = ek_de.attribute_scores(batch.c_u, g)                 # B x C
    mask = (c_star > cfg.tau).astype(np.float64)
    q = ops.mul(params["ek.Wa"], c_star[:, None, :].astype(dtype))  # B x D x C
    if cfg.variant == "ek_only":
        f_h, with_class = batch.f_u, True
    else:
        if "s" in cfg.part_rep:
            f_h = ik_en.encode_features(batch.f_u, batch.f_v, batch.geom, params)
        else:
            f_h = ik_en.visual_context(batch.f_u, batch.f_v, params)
        with_class = "c" in cfg.part_rep
    if with_class:
        f_hat = ek_de.class_conditioned_rep(batch.c_u, g, params["ek.Wb"], params["ek.Wc"], f_h)
    else:
        f_hat = f_h
    f = ek_de.decode(q, f_hat, params, cfg.heads, cfg.residual)
    prob = ops.sigmoid(ek_de.similarity(q, f))
    return prob, mask
