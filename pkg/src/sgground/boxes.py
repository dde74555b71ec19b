"""Axis-aligned boxes in unit-square scene coordinates (y grows downward)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def corners(self):
        """(x1, y1, x2, y2) with x1 <= x2, y1 <= y2."""
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    @property
    def area(self) -> float:
        return self.w * self.h

    def validate(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive: {self}")
        x1, y1, x2, y2 = self.corners()
        if x2 <= 0 or x1 >= 1 or y2 <= 0 or y1 >= 1:
            raise ValueError(f"box does not intersect the unit square: {self}")

    def scaled(self, s: float) -> "Box":
        return Box(self.cx * s, self.cy * s, self.w * s, self.h * s)

    def as_list(self):
        return [self.cx, self.cy, self.w, self.h]

    @classmethod
    def from_list(cls, vals) -> "Box":
        return cls(float(vals[0]), float(vals[1]), float(vals[2]), float(vals[3]))

    @classmethod
    def from_corners(cls, x1, y1, x2, y2) -> "Box":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)


def iou(a: Box, b: Box) -> float:
    """Intersection over union by rectangle arithmetic; symmetric, in [0, 1].

    All areas come from the same corner arithmetic, so identical boxes give
    exactly 1.0.
    """
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    return inter / (area_a + area_b - inter)


def union_box(a: Box, b: Box) -> Box:
    """Smallest axis-aligned box enclosing both; idempotent and commutative."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    return Box.from_corners(min(ax1, bx1), min(ay1, by1), max(ax2, bx2), max(ay2, by2))


def box_deltas(proposal: Box, target: Box) -> np.ndarray:
    """Regression targets (dx/w, dy/h, ln w*/w, ln h*/h) for a matched pair."""
    return np.array([
        (target.cx - proposal.cx) / proposal.w,
        (target.cy - proposal.cy) / proposal.h,
        np.log(target.w / proposal.w),
        np.log(target.h / proposal.h),
    ])
