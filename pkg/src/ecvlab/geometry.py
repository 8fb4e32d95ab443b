"""Integer-grid bounding boxes.

Boxes use a half-open convention: ``BoundingBox(x1, y1, x2, y2)`` covers the
cells ``[x1, x2) x [y1, y2)``, so the area equals the number of covered cells.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BoundingBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {self.as_tuple()}")

    @classmethod
    def maybe(cls, x1: int, y1: int, x2: int, y2: int, grid: int | None = None) -> "BoundingBox | None":
        """Build a box, or return None if the coordinates violate the invariants."""
        if not (x1 < x2 and y1 < y2):
            return None
        if grid is not None and not (0 <= x1 and 0 <= y1 and x2 <= grid and y2 <= grid):
            return None
        return cls(int(x1), int(y1), int(x2), int(y2))

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    def within(self, grid: int) -> bool:
        return self.x1 >= 0 and self.y1 >= 0 and self.x2 <= grid and self.y2 <= grid


def area(b: BoundingBox) -> int:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def intersection_area(a: BoundingBox, b: BoundingBox) -> int:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0
    return w * h


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    return inter / union


def iou_arrays(a, b):
    """Broadcasting IoU over ``(..., 4)`` integer coordinate arrays."""
    import numpy as np

    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    w = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    h = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.clip(w, 0, None) * np.clip(h, 0, None)
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    return inter / (area_a + area_b - inter)
