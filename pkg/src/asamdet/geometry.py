"""Boxes, positional queries and overlap measures.

A positional query is (x, y, z, r): box centre in input pixels, z = log2 of
the geometric-mean side (so the area is 4**z) and r = log2 of the square root
of the height/width ratio. Width is 2**(z - r) and height is 2**(z + r).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import GeometryError
from .tensor import Tensor


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise GeometryError(f"degenerate box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class PositionalQuery:
    x: float
    y: float
    z: float
    r: float

    @property
    def width(self) -> float:
        return 2.0 ** (self.z - self.r)

    @property
    def height(self) -> float:
        return 2.0 ** (self.z + self.r)


@dataclass
class QuerySet:
    """N action queries: spatial content [N, D], temporal content [N, D], positions [N, 4]."""

    spatial: Tensor
    temporal: Tensor
    positional: Tensor

    def __post_init__(self):
        n = self.spatial.shape[0]
        if self.temporal.shape[0] != n or self.positional.shape != (n, 4):
            raise GeometryError(
                f"query blocks disagree: spatial {self.spatial.shape}, temporal {self.temporal.shape}, "
                f"positional {self.positional.shape}"
            )
        if self.spatial.shape[1] != self.temporal.shape[1]:
            raise GeometryError("spatial and temporal queries must share D")

    @property
    def n(self) -> int:
        return self.spatial.shape[0]

    def positional_queries(self) -> list[PositionalQuery]:
        return [PositionalQuery(*map(float, row)) for row in self.positional.data]

    def boxes(self) -> list[Box]:
        return [pquery_to_box(q) for q in self.positional_queries()]


def pquery_to_box(q: PositionalQuery) -> Box:
    w, h = q.width, q.height
    return Box(q.x - 0.5 * w, q.y - 0.5 * h, q.x + 0.5 * w, q.y + 0.5 * h)


def box_to_pquery(b: Box) -> PositionalQuery:
    w, h = b.x2 - b.x1, b.y2 - b.y1
    if not (w > 0 and h > 0):
        raise GeometryError(f"degenerate box {b}")
    cx, cy = b.center
    return PositionalQuery(cx, cy, 0.5 * math.log2(w * h), 0.5 * math.log2(h / w))


def init_queries(n: int, d: int, frame_size: tuple[int, int], seed: int = 0, std: float = 0.02) -> QuerySet:
    """Content queries from a seeded normal; every positional query covers the whole frame.

    ``frame_size`` is (H, W).
    """
    if n <= 0 or d <= 0:
        raise GeometryError(f"need N, D > 0, got N={n}, D={d}")
    h, w = frame_size
    rng = np.random.default_rng(seed)
    spatial = rng.normal(0.0, std, size=(n, d))
    temporal = rng.normal(0.0, std, size=(n, d))
    full = box_to_pquery(Box(0.0, 0.0, float(w), float(h)))
    pos = np.tile([full.x, full.y, full.z, full.r], (n, 1))
    return QuerySet(Tensor(spatial), Tensor(temporal), Tensor(pos))


def iou(a: Box, b: Box) -> float:
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def giou(a: Box, b: Box) -> float:
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    union = a.area + b.area - inter
    hull = (max(a.x2, b.x2) - min(a.x1, b.x1)) * (max(a.y2, b.y2) - min(a.y1, b.y1))
    # hull >= union exactly; rounding can flip the sign and push giou above iou
    return inter / union - max(hull - union, 0.0) / hull


# -- array forms -----------------------------------------------------------------------

def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix between corner-form boxes a [m, 4] and b [n, 4]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    hw = np.maximum(a[:, None, 2], b[None, :, 2]) - np.minimum(a[:, None, 0], b[None, :, 0])
    hh = np.maximum(a[:, None, 3], b[None, :, 3]) - np.minimum(a[:, None, 1], b[None, :, 1])
    hull = hw * hh
    return inter / union - np.maximum(hull - union, 0.0) / hull


def pquery_to_box_tensor(pq: Tensor) -> Tensor:
    """Differentiable decode of positions [N, 4] (x, y, z, r) to corners [N, 4]."""
    x, y, z, r = pq[:, 0], pq[:, 1], pq[:, 2], pq[:, 3]
    half_w = T.exp2(z - r) * 0.5
    half_h = T.exp2(z + r) * 0.5
    return T.stack([x - half_w, y - half_h, x + half_w, y + half_h], axis=1)


def giou_tensor(pred: Tensor, target: np.ndarray) -> Tensor:
    """Elementwise GIoU between matched rows of pred [M, 4] and target [M, 4]."""
    tgt = Tensor(np.asarray(target, dtype=np.float64).reshape(-1, 4))
    px1, py1, px2, py2 = (pred[:, i] for i in range(4))
    tx1, ty1, tx2, ty2 = (tgt[:, i] for i in range(4))
    iw = T.relu(T.minimum(px2, tx2) - T.maximum(px1, tx1))
    ih = T.relu(T.minimum(py2, ty2) - T.maximum(py1, ty1))
    inter = iw * ih
    union = (px2 - px1) * (py2 - py1) + (tx2 - tx1) * (ty2 - ty1) - inter
    hull = (T.maximum(px2, tx2) - T.minimum(px1, tx1)) * (T.maximum(py2, ty2) - T.minimum(py1, ty1))
    return inter / union - (hull - union) / hull
