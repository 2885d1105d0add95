"""Pure-Python/numpy versions of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np


def roi_align_batch(fmap, boxes, size):
    fmap = np.asarray(fmap, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    D, H, W = fmap.shape
    padded = np.zeros((D, H + 2, W + 2))
    padded[:, 1:-1, 1:-1] = fmap
    steps = np.arange(size) + 0.5
    cy = boxes[:, 1:2] + steps * boxes[:, 3:4] / size  # K x S
    cx = boxes[:, 0:1] + steps * boxes[:, 2:3] / size
    y0 = np.floor(cy)
    x0 = np.floor(cx)
    ay = (cy - y0)[:, :, None]
    ax = (cx - x0)[:, None, :]
    # shift by one into the padded frame; anything further out lands on the zero border
    ry0 = np.clip(y0.astype(np.int64) + 1, 0, H + 1)[:, :, None]
    ry1 = np.clip(y0.astype(np.int64) + 2, 0, H + 1)[:, :, None]
    rx0 = np.clip(x0.astype(np.int64) + 1, 0, W + 1)[:, None, :]
    rx1 = np.clip(x0.astype(np.int64) + 2, 0, W + 1)[:, None, :]
    p00 = padded[:, ry0, rx0]  # D x K x S x S
    p01 = padded[:, ry0, rx1]
    p10 = padded[:, ry1, rx0]
    p11 = padded[:, ry1, rx1]
    top = p00 + ax * (p01 - p00)
    bot = p10 + ax * (p11 - p10)
    out = top + ay * (bot - top)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def greedy_match(iou):
    """Visit detections in row order; each takes the unmatched GT of highest
    positive IoU (the later column on ties).  Returns GT index or -1 per row."""
    iou = np.asarray(iou, dtype=np.float64)
    nd, ng = iou.shape
    match = np.full(nd, -1, dtype=np.int64)
    used = [False] * ng
    for d in range(nd):
        best, best_iou = -1, 0.0
        for g in range(ng):
            if used[g]:
                continue
            v = iou[d, g]
            if v > 0.0 and v >= best_iou:
                best, best_iou = g, v
        if best >= 0:
            used[best] = True
            match[d] = best
    return match
