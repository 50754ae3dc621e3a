"""Axis-aligned bounding boxes in [cx, cy, h, w] center/size form.

cx is the horizontal (column) center, cy the vertical (row) center, h the
vertical size and w the horizontal size, all in the same length unit
(pixels at the image boundary, feature-map cells inside the network).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    h: float
    w: float

    def to_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.h, self.w], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "BoundingBox":
        cx, cy, h, w = (float(v) for v in arr)
        return cls(cx, cy, h, w)

    @property
    def corners(self) -> tuple[float, float, float, float]:
        """(left, top, right, bottom)"""
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    @property
    def area(self) -> float:
        return self.h * self.w

    def scaled(self, factor: float) -> "BoundingBox":
        return BoundingBox(self.cx * factor, self.cy * factor,
                           self.h * factor, self.w * factor)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    al, at, ar, ab = a.corners
    bl, bt, br, bb = b.corners
    iw = max(0.0, min(ar, br) - max(al, bl))
    ih = max(0.0, min(ab, bb) - max(at, bt))
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU for [n,4] and [m,4] arrays of [cx,cy,h,w] boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    al, ar = a[:, 0] - a[:, 3] / 2, a[:, 0] + a[:, 3] / 2
    at, ab_ = a[:, 1] - a[:, 2] / 2, a[:, 1] + a[:, 2] / 2
    bl, br = b[:, 0] - b[:, 3] / 2, b[:, 0] + b[:, 3] / 2
    bt, bb = b[:, 1] - b[:, 2] / 2, b[:, 1] + b[:, 2] / 2
    iw = np.maximum(0.0, np.minimum(ar[:, None], br) - np.maximum(al[:, None], bl))
    ih = np.maximum(0.0, np.minimum(ab_[:, None], bb) - np.maximum(at[:, None], bt))
    inter = iw * ih
    union = (a[:, 2] * a[:, 3])[:, None] + b[:, 2] * b[:, 3] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out
