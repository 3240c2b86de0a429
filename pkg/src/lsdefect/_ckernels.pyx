# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; behaviour matches lsdefect._pykernels exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil

cnp.import_array()


cdef inline double _iou(double ax1, double ay1, double ax2, double ay2,
                        double bx1, double by1, double bx2, double by2) noexcept nogil:
    cdef double iw = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
    cdef double ih = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
    if iw < 0.0:
        iw = 0.0
    if ih < 0.0:
        ih = 0.0
    cdef double inter = iw * ih
    cdef double union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union > 0.0:
        return inter / union
    return 0.0


def box_iou_matrix(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = _iou(a[i, 0], a[i, 1], a[i, 2], a[i, 3],
                               b[j, 0], b[j, 1], b[j, 2], b[j, 3])
    return out


def nms(const double[:, ::1] boxes, const double[::1] scores, double iou_threshold):
    cdef Py_ssize_t n = boxes.shape[0], t, k, i, j, nkept = 0
    cdef cnp.int64_t[::1] order = np.lexsort((np.arange(n), -np.asarray(scores))).astype(np.int64)
    kept = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] kv = kept
    cdef bint keep
    with nogil:
        for t in range(n):
            i = order[t]
            keep = True
            for k in range(nkept):
                j = kv[k]
                if _iou(boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3],
                        boxes[j, 0], boxes[j, 1], boxes[j, 2], boxes[j, 3]) >= iou_threshold:
                    keep = False
                    break
            if keep:
                kv[nkept] = i
                nkept += 1
    return kept[:nkept].copy()


cdef inline void _axis(double c, Py_ssize_t size, Py_ssize_t* lo, Py_ssize_t* hi, double* frac) noexcept nogil:
    if c < 0.0:
        c = 0.0
    if c > size - 1:
        c = size - 1
    lo[0] = <Py_ssize_t>floor(c)
    if lo[0] > size - 1:
        lo[0] = size - 1
    hi[0] = lo[0] + 1
    if hi[0] > size - 1:
        hi[0] = size - 1
    frac[0] = c - lo[0]


def roi_align(const double[:, :, ::1] fm, roi, int out_h, int out_w, int samples):
    cdef Py_ssize_t channels = fm.shape[0], height = fm.shape[1], width = fm.shape[2]
    cdef double x1 = roi[0], y1 = roi[1], x2 = roi[2], y2 = roi[3]
    cdef double bin_w = (x2 - x1) / out_w, bin_h = (y2 - y1) / out_h
    cdef double inv = 1.0 / (samples * samples)
    cdef Py_ssize_t c, by, bx, sy, sx, ylo, yhi, xlo, xhi
    cdef double y, x, ly, lx, acc, top, bot
    out = np.empty((channels, out_h, out_w), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for c in range(channels):
            for by in range(out_h):
                for bx in range(out_w):
                    acc = 0.0
                    for sy in range(samples):
                        y = y1 + bin_h * (by + (sy + 0.5) / samples)
                        _axis(y, height, &ylo, &yhi, &ly)
                        for sx in range(samples):
                            x = x1 + bin_w * (bx + (sx + 0.5) / samples)
                            _axis(x, width, &xlo, &xhi, &lx)
                            top = fm[c, ylo, xlo] * (1.0 - lx) + fm[c, ylo, xhi] * lx
                            bot = fm[c, yhi, xlo] * (1.0 - lx) + fm[c, yhi, xhi] * lx
                            acc += top * (1.0 - ly) + bot * ly
                    o[c, by, bx] = acc * inv
    return out


cdef inline void _window(Py_ssize_t lo, Py_ssize_t extent, Py_ssize_t b, Py_ssize_t bins,
                         Py_ssize_t size, Py_ssize_t* s, Py_ssize_t* e) noexcept nogil:
    cdef Py_ssize_t start = lo + (b * extent) // bins
    cdef Py_ssize_t end = lo + ((b + 1) * extent + bins - 1) // bins
    if start < 0:
        start = 0
    if start > size - 1:
        start = size - 1
    if end < start + 1:
        end = start + 1
    if end > size:
        end = size
    s[0] = start
    e[0] = end


def roi_pool(const double[:, :, ::1] fm, roi, int out_h, int out_w):
    cdef Py_ssize_t channels = fm.shape[0], height = fm.shape[1], width = fm.shape[2]
    cdef Py_ssize_t qx1 = <Py_ssize_t>floor(roi[0]), qy1 = <Py_ssize_t>floor(roi[1])
    cdef Py_ssize_t qx2 = <Py_ssize_t>floor(roi[2]), qy2 = <Py_ssize_t>floor(roi[3])
    cdef Py_ssize_t ext_w = qx2 - qx1, ext_h = qy2 - qy1
    if ext_w < 1:
        ext_w = 1
    if ext_h < 1:
        ext_h = 1
    cdef Py_ssize_t c, by, bx, ys, ye, xs, xe, yy, xx
    cdef double best
    out = np.empty((channels, out_h, out_w), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for c in range(channels):
            for by in range(out_h):
                _window(qy1, ext_h, by, out_h, height, &ys, &ye)
                for bx in range(out_w):
                    _window(qx1, ext_w, bx, out_w, width, &xs, &xe)
                    best = fm[c, ys, xs]
                    for yy in range(ys, ye):
                        for xx in range(xs, xe):
                            if fm[c, yy, xx] > best:
                                best = fm[c, yy, xx]
                    o[c, by, bx] = best
    return out


def rasterize(const double[::1] xs, const double[::1] ys, int width, int height):
    cdef Py_ssize_t n = xs.shape[0], k, r, col
    cdef double x0, y0, x1, y1, yc, xi, ylo, yhi
    toggles = np.zeros((height, width + 1), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] t = toggles
    with nogil:
        for k in range(n):
            x0 = xs[k]
            y0 = ys[k]
            x1 = xs[(k + 1) % n]
            y1 = ys[(k + 1) % n]
            if y0 == y1:
                continue
            ylo = y0 if y0 < y1 else y1
            yhi = y1 if y0 < y1 else y0
            for r in range(height):
                yc = r + 0.5
                if yc < ylo or yc >= yhi:
                    continue
                xi = x0 + (yc - y0) * (x1 - x0) / (y1 - y0)
                xi = ceil(xi - 0.5)
                if xi < 0:
                    col = 0
                elif xi > width:
                    col = width
                else:
                    col = <Py_ssize_t>xi
                t[r, col] ^= 1
        for r in range(height):
            for col in range(1, width):
                t[r, col] ^= t[r, col - 1]
    return toggles[:, :width].astype(bool)


def rle_encode(const cnp.uint8_t[:, :] mask):
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1], x, y, nruns = 0
    cdef cnp.uint8_t cur = 0, v
    cdef cnp.int64_t run = 0
    counts = np.empty(h * w + 2, dtype=np.int64)
    cdef cnp.int64_t[::1] cv = counts
    with nogil:
        for x in range(w):
            for y in range(h):
                v = 1 if mask[y, x] else 0
                if v == cur:
                    run += 1
                else:
                    cv[nruns] = run
                    nruns += 1
                    run = 1
                    cur = v
        cv[nruns] = run
        nruns += 1
    return counts[:nruns].copy()


def rle_decode(const cnp.int64_t[::1] counts, int height, int width):
    out = np.zeros((width, height), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] o = out
    cdef Py_ssize_t i, p = 0, k, nc = counts.shape[0]
    with nogil:
        for i in range(nc):
            if i & 1:
                for k in range(counts[i]):
                    o[(p + k) // height, (p + k) % height] = 1
            p += counts[i]
    return out.T.astype(bool)
