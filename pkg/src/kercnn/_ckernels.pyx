# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: RoI bilinear sampling and greedy IoU matching.

Must agree bit-for-bit with ``kercnn._fallback``; both evaluate the same
float64 expressions in the same order.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef inline double _pix(const double[:, :, ::1] m, Py_ssize_t d, Py_ssize_t y,
                        Py_ssize_t x, Py_ssize_t H, Py_ssize_t W) nogil:
    if y < 0 or y >= H or x < 0 or x >= W:
        return 0.0
    return m[d, y, x]


def roi_align_batch(fmap, boxes, Py_ssize_t size):
    cdef const double[:, :, ::1] m = np.ascontiguousarray(fmap, dtype=np.float64)
    cdef const double[:, ::1] b = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t D = m.shape[0], H = m.shape[1], W = m.shape[2], K = b.shape[0]
    out_arr = np.empty((K, D, size, size), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t k, d, iy, ix, x0, y0
    cdef double cx, cy, ax, ay, p00, p01, p10, p11, top, bot
    with nogil:
        for k in range(K):
            for iy in range(size):
                cy = b[k, 1] + (iy + 0.5) * b[k, 3] / size
                y0 = <Py_ssize_t>floor(cy)
                ay = cy - y0
                for ix in range(size):
                    cx = b[k, 0] + (ix + 0.5) * b[k, 2] / size
                    x0 = <Py_ssize_t>floor(cx)
                    ax = cx - x0
                    for d in range(D):
                        p00 = _pix(m, d, y0, x0, H, W)
                        p01 = _pix(m, d, y0, x0 + 1, H, W)
                        p10 = _pix(m, d, y0 + 1, x0, H, W)
                        p11 = _pix(m, d, y0 + 1, x0 + 1, H, W)
                        top = p00 + ax * (p01 - p00)
                        bot = p10 + ax * (p11 - p10)
                        out[k, d, iy, ix] = top + ay * (bot - top)
    return out_arr


def greedy_match(iou):
    cdef const double[:, ::1] ious = np.ascontiguousarray(iou, dtype=np.float64)
    cdef Py_ssize_t nd = ious.shape[0], ng = ious.shape[1]
    match_arr = np.full(nd, -1, dtype=np.int64)
    used_arr = np.zeros(ng, dtype=np.uint8)
    cdef cnp.int64_t[::1] match = match_arr
    cdef cnp.uint8_t[::1] used = used_arr
    cdef Py_ssize_t d, g, best
    cdef double best_iou, v
    with nogil:
        for d in range(nd):
            best = -1
            best_iou = 0.0
            for g in range(ng):
                if used[g]:
                    continue
                v = ious[d, g]
                if v > 0.0 and v >= best_iou:
                    best = g
                    best_iou = v
            if best >= 0:
                used[best] = 1
                match[d] = best
    return match_arr
