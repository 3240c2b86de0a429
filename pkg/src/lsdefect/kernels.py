"""Box/mask IoU, greedy NMS, and ROI pooling kernels.

Boxes use continuous half-open semantics: a box ``(x_min, y_min, x_max, y_max)``
covers area ``(x_max - x_min) * (y_max - y_min)``. Feature maps are ``(C, H, W)``
or ``(H, W)`` arrays whose stored value ``[j, i]`` sits at continuous
coordinate ``x=i, y=j``; interpolation clamps to the border.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._backend import impl


class DegenerateROIWarning(UserWarning):
    """Raised (as a warning) when an ROI has zero area; pooled output is all zeros."""


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"bbox coordinates must be finite: {vals}")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"bbox has negative extent: {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_xyxy(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def as_xywh(self) -> list[float]:
        return [self.x_min, self.y_min, self.width, self.height]

    @classmethod
    def from_xywh(cls, xywh: Sequence[float]) -> "BBox":
        x, y, w, h = (float(v) for v in xywh)
        return cls(x, y, x + w, y + h)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "BBox":
        """Tight box of the set pixels (pixel (x, y) covers [x, x+1) x [y, y+1))."""
        ys = np.flatnonzero(mask.any(axis=1))
        xs = np.flatnonzero(mask.any(axis=0))
        if ys.size == 0:
            raise ValueError("cannot take the bounding box of an empty mask")
        return cls(float(xs[0]), float(ys[0]), float(xs[-1] + 1), float(ys[-1] + 1))


def _as_xyxy_array(boxes: Iterable) -> np.ndarray:
    rows = [b.as_xyxy() if isinstance(b, BBox) else tuple(b) for b in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.ascontiguousarray(rows, dtype=np.float64)


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 when the union has zero area."""
    return float(impl.box_iou_matrix(_as_xyxy_array([a]), _as_xyxy_array([b]))[0, 0])


def box_iou_matrix(a: Iterable, b: Iterable) -> np.ndarray:
    """Pairwise IoU between two box collections (BBox objects or xyxy rows)."""
    return impl.box_iou_matrix(_as_xyxy_array(a), _as_xyxy_array(b))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """popcount(a & b) / popcount(a | b); 0 when both masks are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def mask_iou_matrix(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> np.ndarray:
    if not len(a) or not len(b):
        return np.zeros((len(a), len(b)), dtype=np.float64)
    fa = np.stack([np.asarray(m, dtype=bool).ravel() for m in a]).astype(np.float64)
    fb = np.stack([np.asarray(m, dtype=bool).ravel() for m in b]).astype(np.float64)
    if fa.shape[1] != fb.shape[1]:
        raise ValueError("mask shape mismatch")
    inter = fa @ fb.T
    union = fa.sum(1)[:, None] + fb.sum(1)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def nms(boxes: Sequence[tuple[BBox, float]], iou_threshold: float) -> list[int]:
    """Greedy non-maximum suppression.

    Boxes are visited by descending score (equal scores: lower index first);
    a box is kept iff its IoU with every already-kept box is below
    ``iou_threshold``. Returns kept indices in the order they were kept.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    if not boxes:
        return []
    arr = _as_xyxy_array(b for b, _ in boxes)
    scores = np.ascontiguousarray([s for _, s in boxes], dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return [int(i) for i in impl.nms(arr, scores, float(iou_threshold))]


def _as_fm(fm) -> tuple[np.ndarray, bool]:
    arr = np.asarray(fm, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    if arr.ndim != 3 or min(arr.shape) == 0:
        raise ValueError(f"feature map must be a non-empty (C, H, W) or (H, W) array, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature map values must be finite")
    return np.ascontiguousarray(arr), squeeze


def _check_roi(roi, out_w: int, out_h: int) -> np.ndarray:
    if out_w < 1 or out_h < 1:
        raise ValueError("output grid must be at least 1x1")
    box = roi if isinstance(roi, BBox) else BBox(*roi)
    return np.asarray(box.as_xyxy(), dtype=np.float64)


def _degenerate(fm: np.ndarray, out_h: int, out_w: int, squeeze: bool) -> np.ndarray:
    warnings.warn("ROI has zero area; returning zeros", DegenerateROIWarning, stacklevel=3)
    out = np.zeros((fm.shape[0], out_h, out_w))
    return out[0] if squeeze else out


def roi_align(fm, roi, out_w: int, out_h: int, samples_per_axis: int = 2) -> np.ndarray:
    """ROI-Align: mean of ``samples_per_axis**2`` bilinear samples per output bin.

    Samples in each bin sit at offsets ``(k + 0.5) / s`` of the bin size.
    Returns an ``(out_h, out_w)`` grid for a 2-D map, ``(C, out_h, out_w)`` otherwise.
    """
    if samples_per_axis < 1:
        raise ValueError("samples_per_axis must be >= 1")
    arr, squeeze = _as_fm(fm)
    r = _check_roi(roi, out_w, out_h)
    if (r[2] - r[0]) * (r[3] - r[1]) == 0:
        return _degenerate(arr, out_h, out_w, squeeze)
    out = impl.roi_align(arr, r, int(out_h), int(out_w), int(samples_per_axis))
    return out[0] if squeeze else out


def roi_pool(fm, roi, out_w: int, out_h: int) -> np.ndarray:
    """ROI max pooling with floor-quantized ROI corners (Faster R-CNN style).

    Sub-windows falling outside the map collapse onto the nearest valid cell.
    """
    arr, squeeze = _as_fm(fm)
    r = _check_roi(roi, out_w, out_h)
    if (r[2] - r[0]) * (r[3] - r[1]) == 0:
        return _degenerate(arr, out_h, out_w, squeeze)
    out = impl.roi_pool(arr, r, int(out_h), int(out_w))
    return out[0] if squeeze else out
