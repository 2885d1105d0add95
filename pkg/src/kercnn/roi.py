"""Fixed-size region features from a feature map.

Feature maps are ``D x H x W`` arrays whose pixel ``(i, j)`` sits at
coordinate ``(x=j, y=i)``.  Boxes are ``(x, y, w, h)`` with ``(x, y)`` the
top-left corner in that frame.
"""
from dataclasses import dataclass
import math

import numpy as np

from . import backend
from .errors import DimensionError, InvalidBoxError


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float

    def validate(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBoxError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidBoxError(f"degenerate box {vals}: width and height must be positive")
        return self

    def as_tuple(self):
        return (self.x, self.y, self.w, self.h)

    @property
    def center(self):
        return (self.x + self.w / 2, self.y + self.h / 2)

    @classmethod
    def of(cls, seq):
        x, y, w, h = (float(v) for v in seq)
        return cls(x, y, w, h)


def _check_map(fmap):
    fmap = np.asarray(fmap)
    if fmap.ndim != 3 or min(fmap.shape) < 1:
        raise DimensionError(f"feature map must be D x H x W with positive sizes, got {fmap.shape}")
    return fmap


def roi_align_many(fmap, boxes, size):
    """Sample ``size x size`` bin centres of every box; returns ``K x D x S x S``.

    One bilinear sample per bin, zero padding outside the map.
    """
    if size < 1:
        raise DimensionError(f"output size must be >= 1, got {size}")
    fmap = _check_map(fmap)
    boxes = [b.validate() for b in boxes]
    arr = np.array([b.as_tuple() for b in boxes], dtype=np.float64).reshape(-1, 4)
    out = backend.roi_align_batch(fmap, arr, int(size))
    return out.astype(fmap.dtype if fmap.dtype.kind == "f" else np.float64)


def roi_align(fmap, box, size):
    return roi_align_many(fmap, [box], size)[0]


def pair_regions(fmap, person, part, size_v=14, size_u=14):
    """RoI features for a (person, part) pair: ``(f_v, f_u)``."""
    f_v = roi_align(fmap, person, size_v)
    f_u = roi_align(fmap, part, size_u)
    return f_v, f_u
