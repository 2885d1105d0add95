"""IoU, per-instance attribute F1 and the AP_IoU+F1 family.

Detections are visited in descending score order (stable for ties) and each
takes the unmatched ground-truth part of the same class and sample with the
highest positive IoU (later index on ties, as in the COCO reference).  The
matching does not depend on the thresholds; a matched detection counts as a
true positive at ``(t_iou, t_f1)`` when its IoU ``>= t_iou`` and its attribute
set-F1 ``>= t_f1``.  AP uses COCO's 101-point interpolated precision.
"""
from dataclasses import dataclass, field
import csv
import io
import json

import numpy as np

from . import backend
from .errors import InvalidBoxError, UndefinedMetricError, ValidationError
from .roi import Box

DEFAULT_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
PRED_THRESHOLD = 0.5


@dataclass
class Prediction:
    sample_id: int
    part_class: int
    box: Box
    score: float
    attribute_probabilities: np.ndarray

    @property
    def attributes(self):
        return {int(c) for c in np.flatnonzero(np.asarray(self.attribute_probabilities) > PRED_THRESHOLD)}


@dataclass
class GroundTruth:
    sample_id: int
    part_class: int
    box: Box
    attributes: frozenset


@dataclass
class EvalReport:
    ap_all: float
    ap_50_f1: float
    ap_75_f1: float
    per_class_ap: dict
    per_attribute_f1: dict
    n_instances: int
    iou_grid: tuple = DEFAULT_GRID
    f1_grid: tuple = DEFAULT_GRID
    table: dict = field(default_factory=dict, repr=False)  # class -> [T x F] AP

    def to_dict(self):
        return {
            "ap_all": self.ap_all, "ap_50_f1": self.ap_50_f1, "ap_75_f1": self.ap_75_f1,
            "per_class_ap": {str(k): v for k, v in self.per_class_ap.items()},
            "per_attribute_f1": {str(k): v for k, v in self.per_attribute_f1.items()},
            "n_instances": self.n_instances,
            "iou_grid": list(self.iou_grid), "f1_grid": list(self.f1_grid),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "iou_threshold", "f1_threshold", "ap"])
        for k in sorted(self.table):
            for t, ti in enumerate(self.iou_grid):
                for f, tf in enumerate(self.f1_grid):
                    w.writerow([k, ti, tf, repr(float(self.table[k][t, f]))])
        return buf.getvalue()


def iou(a, b):
    for box in (a, b):
        if not (box.w > 0 and box.h > 0) or not np.all(np.isfinite(box.as_tuple())):
            raise InvalidBoxError(f"invalid box {box.as_tuple()}")
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


def attr_f1(pred, gt):
    pred, gt = set(pred), set(gt)
    if not pred and not gt:
        return 1.0
    return 2 * len(pred & gt) / (len(pred) + len(gt))


def attribute_f1_table(pred_sets, gt_sets, n_attributes):
    """Binary F1 per attribute over paired instances (1.0 when never present)."""
    tp = np.zeros(n_attributes)
    fp = np.zeros(n_attributes)
    fn = np.zeros(n_attributes)
    for pred, gt in zip(pred_sets, gt_sets):
        for c in pred:
            if c in gt:
                tp[c] += 1
            else:
                fp[c] += 1
        for c in gt:
            if c not in pred:
                fn[c] += 1
    denom = 2 * tp + fp + fn
    return {c: (float(2 * tp[c] / denom[c]) if denom[c] else 1.0) for c in range(n_attributes)}


def interpolated_ap(tp, n_pos):
    """101-point interpolated AP from score-sorted TP flags.

    Recall levels ``i / 100`` are compared exactly in integers, so a recall
    of ``7 / 10`` reaches level 70 regardless of float rounding.
    """
    tp = np.asarray(tp, dtype=np.int64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, tp.size + 1)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(100 * ctp, np.arange(len(RECALL_POINTS)) * int(n_pos), side="left")
    q = np.where(idx < tp.size, precision[np.minimum(idx, tp.size - 1)], 0.0)
    return float(q.mean())


def _check_grid(grid, name):
    grid = tuple(float(v) for v in grid)
    if not grid or any(not 0 < v <= 1 for v in grid):
        raise ValidationError(f"{name} must be non-empty with values in (0, 1]")
    return grid


def ap_iou_f1(predictions, ground_truth, iou_grid=DEFAULT_GRID, f1_grid=DEFAULT_GRID):
    iou_grid = _check_grid(iou_grid, "iou_grid")
    f1_grid = _check_grid(f1_grid, "f1_grid")
    ground_truth = list(ground_truth)
    if not ground_truth:
        raise UndefinedMetricError("AP is undefined without ground truth")
    f1_all = tuple(sorted(set(f1_grid) | {0.5, 0.75}))
    f_sel = [f1_all.index(v) for v in f1_grid]

    gt_by = {}
    for g in ground_truth:
        gt_by.setdefault((g.part_class, g.sample_id), []).append(g)
    det_by = {}
    for i, p in enumerate(predictions):
        det_by.setdefault((p.part_class, p.sample_id), []).append((i, p))
    classes = sorted({g.part_class for g in ground_truth})

    table = {}
    for k in classes:
        n_pos = sum(len(v) for (c, _), v in gt_by.items() if c == k)
        samples = sorted({s for (c, s) in det_by if c == k})
        flags, scores = [], []
        for s in samples:
            dets = det_by[(k, s)]
            order = np.argsort([-p.score for _, p in dets], kind="mergesort")
            dets = [dets[o][1] for o in order]
            gts = gt_by.get((k, s), [])
            if gts:
                ious = np.array([[iou(d.box, g.box) for g in gts] for d in dets])
                match = backend.greedy_match(ious)
                hit = match >= 0
                m_iou = np.where(hit, ious[np.arange(len(dets)), np.maximum(match, 0)], 0.0)
                m_f1 = np.array([attr_f1(d.attributes, gts[m].attributes) if m >= 0 else 0.0
                                 for d, m in zip(dets, match)])
                ok_iou = m_iou[None, :] >= np.asarray(iou_grid)[:, None]   # T x nd
                ok_f1 = m_f1[None, :] >= np.asarray(f1_all)[:, None]       # F x nd
                flags.append((hit & ok_iou[:, None, :] & ok_f1[None, :, :]).astype(np.uint8))
            else:
                flags.append(np.zeros((len(iou_grid), len(f1_all), len(dets)), dtype=np.uint8))
            scores.extend(d.score for d in dets)
        ap = np.zeros((len(iou_grid), len(f1_all)))
        if scores:
            order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="mergesort")
            tp = np.concatenate(flags, axis=2)[:, :, order]
            for t in range(len(iou_grid)):
                for f in range(len(f1_all)):
                    ap[t, f] = interpolated_ap(tp[t, f], n_pos)
        table[k] = ap

    stack = np.stack([table[k] for k in classes])  # K x T x F_all
    report_table = {k: table[k][:, f_sel] for k in classes}
    return EvalReport(
        ap_all=float(stack[:, :, f_sel].mean()),
        ap_50_f1=float(stack[:, :, f1_all.index(0.5)].mean()),
        ap_75_f1=float(stack[:, :, f1_all.index(0.75)].mean()),
        per_class_ap={k: float(report_table[k].mean()) for k in classes},
        per_attribute_f1={},
        n_instances=len(ground_truth),
        iou_grid=iou_grid, f1_grid=f1_grid, table=report_table,
    )


def predictions_to_json(preds):
    return [{"sample_id": p.sample_id, "class": p.part_class, "box": list(p.box.as_tuple()),
             "score": p.score,
             "attribute_probabilities": [float(v) for v in p.attribute_probabilities]}
            for p in preds]


def predictions_from_json(doc):
    if not isinstance(doc, list):
        raise ValidationError("prediction file must hold a JSON list")
    out = []
    for i, d in enumerate(doc):
        try:
            out.append(Prediction(int(d["sample_id"]), int(d["class"]), Box.of(d["box"]),
                                  float(d["score"]),
                                  np.asarray(d["attribute_probabilities"], dtype=np.float64)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"prediction {i}: malformed or missing field: {exc}") from None
    return out
