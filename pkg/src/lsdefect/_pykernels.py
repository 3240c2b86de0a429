"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` function for function and are used whenever the
compiled extension is unavailable (or ``LSDEFECT_PURE_PYTHON=1``). Inputs are
assumed validated by the public wrappers in :mod:`lsdefect.kernels` and
:mod:`lsdefect.annotset`.
"""

from __future__ import annotations

import numpy as np


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (n, 4) and (m, 4) xyxy boxes."""
    ax1, ay1, ax2, ay2 = (a[:, k][:, None] for k in range(4))
    bx1, by1, bx2, by2 = (b[:, k][None, :] for k in range(4))
    iw = np.maximum(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0)
    ih = np.maximum(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0)
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    out = np.zeros(inter.shape, dtype=np.float64)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    n = boxes.shape[0]
    order = np.lexsort((np.arange(n), -scores))
    kept: list[int] = []
    for i in order:
        if kept:
            ious = box_iou_matrix(boxes[i : i + 1], boxes[kept])[0]
            if np.any(ious >= iou_threshold):
                continue
        kept.append(int(i))
    return np.asarray(kept, dtype=np.int64)


def _interp_axis(coords: np.ndarray, size: int):
    c = np.clip(coords, 0.0, size - 1)
    lo = np.minimum(np.floor(c).astype(np.int64), size - 1)
    hi = np.minimum(lo + 1, size - 1)
    return lo, hi, c - lo


def roi_align(fm: np.ndarray, roi: np.ndarray, out_h: int, out_w: int, samples: int) -> np.ndarray:
    """Bilinear ROI pooling over a (C, H, W) map; value (i, j) sits at x=i, y=j."""
    _, height, width = fm.shape
    x1, y1, x2, y2 = (float(v) for v in roi)
    bin_w = (x2 - x1) / out_w
    bin_h = (y2 - y1) / out_h
    frac = (np.arange(samples) + 0.5) / samples
    xs = (x1 + bin_w * (np.arange(out_w)[:, None] + frac[None, :])).ravel()
    ys = (y1 + bin_h * (np.arange(out_h)[:, None] + frac[None, :])).ravel()
    y_lo, y_hi, ly = _interp_axis(ys, height)
    x_lo, x_hi, lx = _interp_axis(xs, width)
    rows = fm[:, y_lo, :] * (1.0 - ly)[None, :, None] + fm[:, y_hi, :] * ly[None, :, None]
    vals = rows[:, :, x_lo] * (1.0 - lx) + rows[:, :, x_hi] * lx
    vals = vals.reshape(fm.shape[0], out_h, samples, out_w, samples)
    return vals.mean(axis=(2, 4))


def _pool_windows(lo: int, extent: int, bins: int, size: int) -> list[tuple[int, int]]:
    out = []
    for b in range(bins):
        start = lo + (b * extent) // bins
        end = lo + -((-(b + 1) * extent) // bins)
        s = min(max(start, 0), size - 1)
        e = min(max(end, s + 1), size)
        out.append((s, e))
    return out


def roi_pool(fm: np.ndarray, roi: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Quantized max pooling; ROI corners are floored to integer cells."""
    channels, height, width = fm.shape
    qx1, qy1, qx2, qy2 = (int(np.floor(v)) for v in roi)
    ext_w = max(qx2 - qx1, 1)
    ext_h = max(qy2 - qy1, 1)
    out = np.empty((channels, out_h, out_w), dtype=np.float64)
    xw = _pool_windows(qx1, ext_w, out_w, width)
    yw = _pool_windows(qy1, ext_h, out_h, height)
    for by, (ys, ye) in enumerate(yw):
        for bx, (xs, xe) in enumerate(xw):
            out[:, by, bx] = fm[:, ys:ye, xs:xe].max(axis=(1, 2))
    return out


def rasterize(xs: np.ndarray, ys: np.ndarray, width: int, height: int) -> np.ndarray:
    """Even-odd fill at pixel centers; an edge through a center counts as left/top-inclusive."""
    toggles = np.zeros((height, width + 1), dtype=np.int64)
    yc = np.arange(height) + 0.5
    n = xs.shape[0]
    for k in range(n):
        x0, y0 = xs[k], ys[k]
        x1, y1 = xs[(k + 1) % n], ys[(k + 1) % n]
        if y0 == y1:
            continue
        crosses = ((y0 <= yc) & (yc < y1)) | ((y1 <= yc) & (yc < y0))
        rows = np.flatnonzero(crosses)
        if rows.size == 0:
            continue
        x_int = x0 + (yc[rows] - y0) * (x1 - x0) / (y1 - y0)
        cols = np.clip(np.ceil(x_int - 0.5), 0, width).astype(np.int64)
        np.add.at(toggles, (rows, cols), 1)
    return (np.cumsum(toggles[:, :width], axis=1) & 1).astype(bool)


def rle_encode(mask: np.ndarray) -> np.ndarray:
    flat = mask.ravel(order="F")
    if flat.size == 0:
        return np.zeros(1, dtype=np.int64)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).astype(np.int64)
    if flat[0]:
        counts = np.concatenate(([0], counts))
    return counts


def rle_decode(counts: np.ndarray, height: int, width: int) -> np.ndarray:
    values = (np.arange(counts.shape[0]) & 1).astype(bool)
    flat = np.repeat(values, counts)
    return flat.reshape(width, height).T.copy()
