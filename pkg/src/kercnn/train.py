"""Loss, optimisers, the training loop and evaluation."""
from dataclasses import asdict, dataclass, field
import csv
import io
import logging

import numpy as np

from . import head as heads_mod
from . import knowledge, metrics
from .data import detections_from_gt
from .ek_de import AttributePrediction
from .errors import ConfigError, DivergenceError, ParseError
from .head import HeadConfig
from .numerics import Tape, ops
from .numerics.container import load_tensors, save_tensors

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "kercnn-checkpoint"
CHECKPOINT_VERSION = 1
BCE_EPS = 1e-7


@dataclass
class TrainConfig:
    lr: float = 1e-4
    optimizer: str = "adam"
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 20
    decay_epochs: tuple = (14, 18)
    decay_factor: float = 0.1
    seed: int = 0
    variant: str = "ke_full"
    tau: float = 0.0
    heads: int = 4
    mlp_hidden: int = 0
    residual: bool = False
    part_rep: str = "zsc"
    size_u: int = 14
    size_v: int = 14
    baseline_hidden: int = 64
    query_init_std: float = 1.0
    iou_grid: tuple = metrics.DEFAULT_GRID
    f1_grid: tuple = metrics.DEFAULT_GRID

    def validate(self):
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if not 0 < self.decay_factor < 1:
            raise ConfigError("decay factor must lie in (0, 1)")
        if self.variant not in heads_mod.VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {heads_mod.VARIANTS}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch size must be >= 1 and epochs >= 0")
        return self

    @classmethod
    def from_dict(cls, doc):
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        doc = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        return cls(**doc)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def head_config(self, ds):
        return HeadConfig(
            variant=self.variant, dim=ds.samples[0].feature_map.shape[0],
            n_parts=ds.n_parts, n_attributes=ds.n_attributes, size_u=self.size_u,
            size_v=self.size_v, heads=self.heads, mlp_hidden=self.mlp_hidden, tau=self.tau,
            residual=self.residual, part_rep=self.part_rep,
            baseline_hidden=self.baseline_hidden,
            query_init_std=self.query_init_std).validate()


@dataclass
class Checkpoint:
    params: dict
    head: HeadConfig
    config: TrainConfig
    epoch: int = 0
    history: list = field(default_factory=list)
    kg: knowledge.KnowledgeGraph = None


# -- loss -----------------------------------------------------------------------

def bce_loss(prob, targets, mask=None, eps=BCE_EPS):
    """Mean BCE over each part's candidates, averaged over parts.

    Accepts an :class:`AttributePrediction` (targets: GT attribute set) or
    a ``B x C`` probability array/variable with a 0/1 ``mask``.
    """
    if isinstance(prob, AttributePrediction):
        y = np.array([1.0 if c in targets else 0.0 for c in prob.candidate_indices])
        return ops.bce(prob.probabilities, y, np.ones_like(y), eps)
    pv = ops.value(prob)
    if mask is None:
        mask = np.ones(pv.shape)
    return ops.bce(prob, np.asarray(targets, dtype=pv.dtype), np.asarray(mask, dtype=pv.dtype), eps)


# -- optimisers -----------------------------------------------------------------

class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k in params:  # fixed key order keeps updates deterministic
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            update = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            params[k] = (params[k] - update).astype(params[k].dtype)


class SGD:
    def __init__(self, params, lr, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.buf = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        for k in params:
            self.buf[k] = self.momentum * self.buf[k] + grads[k]
            params[k] = (params[k] - self.lr * self.buf[k]).astype(params[k].dtype)


def _optimizer(cfg, params):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.lr)
    return SGD(params, cfg.lr, cfg.momentum)


def lr_at(cfg, epoch):
    return cfg.lr * cfg.decay_factor ** sum(epoch >= e for e in cfg.decay_epochs)


# -- training -------------------------------------------------------------------

def train_step(hcfg, params, batch, kg):
    tape = Tape()
    bound = tape.bind(params)
    prob, mask = heads_mod.forward(hcfg, bound, batch, kg)
    loss = bce_loss(prob, batch.targets, mask)
    tape.backward(loss)
    return float(ops.value(loss)), Tape.grads(bound)


def fit(config, train, val=None, kg=None):
    """Train one head variant; returns the final :class:`Checkpoint`."""
    config.validate()
    if val is not None and (list(val.part_names) != list(train.part_names)
                            or list(val.attribute_names) != list(train.attribute_names)):
        raise ConfigError("train and validation datasets use different vocabularies")
    hcfg = config.head_config(train)
    if hcfg.uses_knowledge and kg is None:
        kg = knowledge.build_graph(train)
    if not hcfg.uses_knowledge:
        kg = None
    params = heads_mod.init_params(hcfg, config.seed)
    opt = _optimizer(config, params)
    table = heads_mod.build_table(train, hcfg)
    val_table = heads_mod.build_table(val, hcfg) if val is not None else None
    history = []
    ckpt = Checkpoint(params, hcfg, config, 0, history, kg)
    n = len(table)
    for epoch in range(config.epochs):
        opt.lr = lr_at(config, epoch)
        order = np.random.default_rng([config.seed, 0x5EED, epoch]).permutation(n)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            loss, grads = train_step(hcfg, params, table.batch(idx), kg)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            opt.step(params, grads)
            total += loss * len(idx)
            count += len(idx)
        row = {"epoch": epoch, "lr": opt.lr, "loss": total / max(count, 1)}
        if val_table is not None:
            probs = predict_table(ckpt, val_table)
            row["val_f1"] = _mean_attr_f1(probs, val_table.targets)
        history.append(row)
        ckpt.epoch = epoch + 1
        log.info("epoch %d %s", epoch, row)
    return ckpt


def _mean_attr_f1(probs, targets):
    pred = [set(np.flatnonzero(p > metrics.PRED_THRESHOLD)) for p in probs]
    gt = [set(np.flatnonzero(t > 0.5)) for t in targets]
    table = metrics.attribute_f1_table(pred, gt, targets.shape[1])
    return float(np.mean(list(table.values())))


def predict_table(ckpt, table, batch_size=256):
    """Dense ``P x C`` probabilities (non-candidates exactly 0)."""
    out = []
    for start in range(0, len(table), batch_size):
        idx = np.arange(start, min(start + batch_size, len(table)))
        prob, mask = heads_mod.forward(ckpt.head, ckpt.params, table.batch(idx), ckpt.kg)
        out.append(np.asarray(prob, dtype=np.float64) * mask)
    if not out:
        return np.zeros((0, ckpt.head.n_attributes))
    return np.concatenate(out)


# -- evaluation -----------------------------------------------------------------

def predict_dataset(ckpt, ds, detections=None):
    """Run the head over detections; returns ``(predictions, table, probs)``."""
    if detections is None:
        detections = detections_from_gt(ds, 0.0)
    table = heads_mod.build_table(ds, ckpt.head, detections)
    probs = predict_table(ckpt, table)
    preds = []
    classes = [int(np.argmax(c)) for c in table.c_u]
    for r in range(len(table)):
        preds.append(metrics.Prediction(int(table.sample_of[r]), classes[r], table.boxes[r],
                                        float(table.scores[r]), probs[r]))
    return preds, table, probs


def ground_truth(ds):
    return [metrics.GroundTruth(i, p.part_class, p.box, p.attributes)
            for i, s in enumerate(ds.samples) for p in s.parts]


def evaluate(ckpt, ds, detections=None, iou_grid=None, f1_grid=None, jitter=0.0, seed=0):
    """AP_IoU+F1 report plus per-attribute F1 over detection/GT pairs."""
    if detections is None:
        detections = detections_from_gt(ds, jitter, seed)
    preds, table, probs = predict_dataset(ckpt, ds, detections)
    report = metrics.ap_iou_f1(preds, ground_truth(ds),
                               iou_grid or ckpt.config.iou_grid, f1_grid or ckpt.config.f1_grid)
    keep = table.part_of >= 0
    pred_sets = [p.attributes for p, k in zip(preds, keep) if k]
    gt_sets = [set(ds.samples[s].parts[j].attributes)
               for s, j, k in zip(table.sample_of, table.part_of, keep) if k]
    report.per_attribute_f1 = metrics.attribute_f1_table(pred_sets, gt_sets, ds.n_attributes)
    return report


def family_f1(report, ds):
    """Mean per-attribute F1 of each rule family (synthetic datasets)."""
    fam = ds.family_of()
    out = {}
    for name in ("local", "geometry", "relational"):
        vals = [report.per_attribute_f1[c] for c, f in fam.items() if f == name]
        if vals:
            out[name] = float(np.mean(vals))
    out["all"] = float(np.mean(list(report.per_attribute_f1.values())))
    return out


def history_csv(history):
    buf = io.StringIO()
    keys = ["epoch", "lr", "loss", "val_f1"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for row in history:
        w.writerow([repr(row[k]) if isinstance(row.get(k), float) else row.get(k, "") for k in keys])
    return buf.getvalue()


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(ckpt, path):
    meta = {
        "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
        "head": ckpt.head.to_dict(), "train": ckpt.config.to_dict(),
        "epoch": ckpt.epoch, "history": ckpt.history,
        "knowledge": knowledge.graph_to_dict(ckpt.kg) if ckpt.kg is not None else None,
    }
    save_tensors(path, ckpt.params, meta)


def load_checkpoint(path):
    params, meta = load_tensors(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"{path}: not a checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    hcfg = HeadConfig(**meta["head"]).validate()
    cfg = TrainConfig.from_dict(meta["train"]).validate()
    kg = knowledge.graph_from_dict(meta["knowledge"], str(path)) if meta.get("knowledge") else None
    expected = heads_mod.init_params(hcfg, 0)
    missing = set(expected) - set(params)
    if missing:
        raise ParseError(f"{path}: missing parameters {sorted(missing)}")
    return Checkpoint(params, hcfg, cfg, meta.get("epoch", 0), meta.get("history", []), kg)
