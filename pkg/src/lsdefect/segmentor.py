"""Defect predictor interface and the rule-based reference segmentor.

The reference segmentor compares the binarized image with the ideal raster of
an estimated line/space model. Bright pixels where a space should be
("excess") become bridge or collapse candidates; dark pixels inside a line
("deficit") become break candidates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy import ndimage

from . import classes as C
from .annotset import AnnotationFormatError, RleMask, rle_decode, rle_encode
from .classes import DefectClass
from .kernels import BBox

_EIGHT = np.ones((3, 3), dtype=bool)


class NoPatternError(ValueError):
    """The image shows no periodic line/space structure."""


class UnclassifiableError(ValueError):
    """A residual component matches none of the class rules."""


@dataclass(frozen=True)
class DefectInstance:
    defect_class: DefectClass
    score: float
    mask: np.ndarray
    bbox: BBox

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if not self.mask.any():
            raise ValueError("instance mask is empty")

    @classmethod
    def from_mask(cls, defect_class: DefectClass, score: float, mask: np.ndarray) -> "DefectInstance":
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("instance mask is empty")
        return cls(DefectClass(defect_class), float(score), mask, BBox.from_mask(mask))

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass(frozen=True)
class PatternModel:
    pitch: int
    line_width: int
    phase: int
    polarity: bool = True
    threshold: float = 127.0
    line_level: float = 200.0
    space_level: float = 50.0

    def __post_init__(self):
        if not 0 < self.line_width < self.pitch:
            raise ValueError(f"need 0 < line_width < pitch, got {self.line_width}, {self.pitch}")
        if not 0 <= self.phase < self.pitch:
            raise ValueError(f"phase must lie in [0, pitch), got {self.phase}")

    def line_columns(self, width: int) -> np.ndarray:
        return (np.arange(width) - self.phase) % self.pitch < self.line_width

    def period_index(self, xs: np.ndarray) -> np.ndarray:
        """Line index for line columns, space index (space k follows line k) otherwise."""
        return (np.asarray(xs) - self.phase) // self.pitch

    def line_left(self, k: int) -> int:
        return self.phase + k * self.pitch


@dataclass(frozen=True)
class RuleConfig:
    min_area: int = 8
    thin_ratio: float = C.THIN_RATIO
    h_tolerance: float = C.H_TOLERANCE
    collapse_min_pitches: float = C.COLLAPSE_MIN_PITCHES
    # horizontal opening width; strips narrower than this (edge roughness) are dropped
    open_width: int = 3
    break_line_fraction: float = 0.9

    def collapse_min_height(self, model: PatternModel) -> float:
        return self.collapse_min_pitches * model.pitch


# -- pattern estimation ----------------------------------------------------------


def otsu_threshold(img: np.ndarray) -> float:
    """Otsu's threshold on the 256-bin histogram; pixels ``> t`` are foreground."""
    hist = np.bincount(np.asarray(img, dtype=np.uint8).ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    w1 = total - w0
    m0 = np.cumsum(hist * levels)
    mt = m0[-1]
    valid = (w0 > 0) & (w1 > 0)
    between = np.zeros(256)
    between[valid] = (mt * w0[valid] - total * m0[valid]) ** 2 / (w0[valid] * w1[valid])
    if not valid.any():
        return float(levels[hist > 0][0])
    best = np.flatnonzero(between == between.max())
    return float(best.mean())


def _column_autocorr(profile: np.ndarray) -> np.ndarray:
    p = profile - profile.mean()
    n = p.size
    return np.array([np.dot(p[: n - lag], p[lag:]) / (n - lag) for lag in range(n // 2 + 1)])


def estimate_pattern(img: np.ndarray) -> PatternModel:
    """Fit pitch, phase, line width and intensity levels of a line/space image."""
    img = np.asarray(img)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a non-empty 2-D gray image")
    ac = _column_autocorr(img.mean(axis=0, dtype=np.float64))
    if ac.size < 4 or ac[0] <= 1e-9:
        raise NoPatternError("column profile is flat")
    pitch = None
    for lag in range(2, ac.size - 1):
        if ac[lag] >= ac[lag - 1] and ac[lag] > ac[lag + 1] and ac[lag] >= 0.5 * ac[0]:
            pitch = lag
            break
    if pitch is None:
        raise NoPatternError("no dominant autocorrelation peak")

    thr = otsu_threshold(img)
    col_frac = (img > thr).mean(axis=0)
    residue = np.arange(img.shape[1]) % pitch
    folded = np.bincount(residue, weights=col_frac, minlength=pitch) / np.bincount(residue, minlength=pitch)
    bright = folded > 0.5
    lw = int(bright.sum())
    if lw == 0 or lw == pitch:
        raise NoPatternError("binarized profile has no line/space alternation")
    # start of the longest circular run of bright residues
    best_start, best_len = 0, -1
    for r in range(pitch):
        if bright[r] and not bright[r - 1]:
            run = 0
            while run < pitch and bright[(r + run) % pitch]:
                run += 1
            if run > best_len:
                best_start, best_len = r, run
    model = PatternModel(pitch=pitch, line_width=best_len, phase=best_start, threshold=thr)
    lines = model.line_columns(img.shape[1])
    return PatternModel(
        pitch=pitch,
        line_width=best_len,
        phase=best_start,
        polarity=True,
        threshold=thr,
        line_level=float(np.median(img[:, lines])),
        space_level=float(np.median(img[:, ~lines])),
    )


# -- classification ----------------------------------------------------------------


def classify_instance(component: np.ndarray, model: PatternModel, cfg: RuleConfig = RuleConfig()) -> DefectClass:
    """Apply the class decision rules to one candidate region.

    Works on residual components and on full instance masks alike: only the
    pixels falling in space columns decide among collapse and bridge classes.
    Raises :class:`UnclassifiableError` when no rule applies.
    """
    ys, xs = np.nonzero(component)
    if ys.size == 0:
        raise ValueError("component is empty")
    in_line = (xs - model.phase) % model.pitch < model.line_width
    period = model.period_index(xs)

    if in_line.mean() >= cfg.break_line_fraction:
        if np.unique(period[in_line]).size == 1:
            return DefectClass.LINE_BREAK
        raise UnclassifiableError("dark region spans more than one line")

    sx, sy, sk = xs[~in_line], ys[~in_line], period[~in_line]
    col_counts = np.bincount(sx - sx.min())
    if col_counts.max() >= cfg.collapse_min_height(model):
        return DefectClass.LINE_COLLAPSE

    spaces = np.unique(sk)
    if spaces.size == 1:
        if col_counts.max() < cfg.thin_ratio * model.line_width:
            return DefectClass.THIN_BRIDGE
        return DefectClass.SINGLE_BRIDGE
    if np.any(np.diff(spaces) != 1):
        raise UnclassifiableError("bright region spans non-adjacent spaces")
    centroids = np.array([sy[sk == k].mean() for k in spaces])
    if centroids.max() - centroids.min() <= cfg.h_tolerance:
        return DefectClass.MULTI_BRIDGE_H
    return DefectClass.MULTI_BRIDGE_NH


def _rows_at(mask: np.ndarray, col: int) -> np.ndarray:
    return np.flatnonzero(mask[:, col]) if 0 <= col < mask.shape[1] else np.zeros(0, dtype=np.int64)


def reconstruct_mask(residual: np.ndarray, cls: DefectClass, model: PatternModel) -> np.ndarray:
    """Full instance extent from its residual: add the line pixels a bridge or collapse covers."""
    out = residual.copy()
    h, w = out.shape
    if cls in (DefectClass.LINE_BREAK, DefectClass.THIN_BRIDGE, DefectClass.SINGLE_BRIDGE):
        return out
    ys, xs = np.nonzero(residual)
    spaces = np.unique(model.period_index(xs[(xs - model.phase) % model.pitch >= model.line_width]))
    lw = model.line_width
    if cls is DefectClass.LINE_COLLAPSE:
        k = int(spaces[0])
        x0 = max(model.line_left(k), 0)
        x1 = min(model.line_left(k + 1) + lw, w)
        out[ys.min() : ys.max() + 1, x0:x1] = True
        return out
    for k in spaces[:-1]:
        left = model.line_left(int(k) + 1)
        mid = left + lw // 2
        rows_l = _rows_at(residual, left - 1)
        rows_r = _rows_at(residual, left + lw)
        out[rows_l[:, None], np.arange(max(left, 0), min(mid, w))[None, :]] = True
        out[rows_r[:, None], np.arange(max(mid, 0), min(left + lw, w))[None, :]] = True
    return out


# -- detection -----------------------------------------------------------------------


def _components(mask: np.ndarray):
    labels, n = ndimage.label(mask, structure=_EIGHT)
    slices = ndimage.find_objects(labels)
    return labels, [(i + 1, sl) for i, sl in enumerate(slices) if sl is not None]


def _group_excess(labels, comps, model: PatternModel) -> list[list[int]]:
    """Union components in adjacent spaces whose row ranges overlap (bridges cut by a line)."""
    info = []
    for lab, sl in comps:
        # excess components never cross a line column, so the center column names the space
        space = int(model.period_index((sl[1].start + sl[1].stop - 1) // 2))
        info.append((lab, space, sl[0].start, sl[0].stop))
    parent = list(range(len(info)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, (_, si, r0i, r1i) in enumerate(info):
        for j, (_, sj, r0j, r1j) in enumerate(info):
            if sj == si + 1 and r0i < r1j and r0j < r1i:
                parent[find(j)] = find(i)
    groups: dict[int, list[int]] = {}
    for i in range(len(info)):
        groups.setdefault(find(i), []).append(info[i][0])
    return list(groups.values())


def detect(
    img: np.ndarray, model: PatternModel, cfg: RuleConfig = RuleConfig()
) -> tuple[list[DefectInstance], list[np.ndarray]]:
    """Return (instances sorted by score descending, rejected residual masks)."""
    img = np.asarray(img)
    if not model.polarity:
        raise ValueError("only bright-line imagery is supported")
    h, w = img.shape
    ideal = np.broadcast_to(model.line_columns(w)[None, :], (h, w))
    binary = img > model.threshold
    excess = binary & ~ideal
    deficit = ~binary & ideal
    if cfg.open_width > 1:
        se = np.ones((1, cfg.open_width), dtype=bool)
        excess = ndimage.binary_opening(excess, structure=se)
        deficit = ndimage.binary_opening(deficit, structure=se)

    contrast = model.line_level - model.space_level
    ideal_val = np.where(ideal, model.line_level, model.space_level)
    obs = img.astype(np.float64)

    candidates: list[np.ndarray] = []
    labels, comps = _components(excess)
    for group in _group_excess(labels, comps, model):
        candidates.append(np.isin(labels, group))
    labels, comps = _components(deficit)
    for lab, sl in comps:
        m = np.zeros((h, w), dtype=bool)
        m[sl] = labels[sl] == lab
        candidates.append(m)

    found, rejects = [], []
    for residual in candidates:
        if np.count_nonzero(residual) < cfg.min_area:
            continue
        try:
            cls = classify_instance(residual, model, cfg)
        except UnclassifiableError:
            rejects.append(residual)
            continue
        diff = np.abs(obs[residual] - ideal_val[residual]).mean()
        score = min(1.0, float(diff / contrast)) if contrast > 0 else 1.0
        found.append(DefectInstance.from_mask(cls, score, reconstruct_mask(residual, cls, model)))
    found.sort(key=lambda d: (-d.score, d.bbox.y_min, d.bbox.x_min))
    return found, rejects


def detect_instances(img: np.ndarray, model: PatternModel, cfg: RuleConfig = RuleConfig()) -> list[DefectInstance]:
    return detect(img, model, cfg)[0]


class RuleBasedSegmentor:
    """Reference predictor: ``predict(img) -> list[DefectInstance]``."""

    def __init__(self, cfg: RuleConfig = RuleConfig()):
        self.cfg = cfg

    def predict(self, img: np.ndarray) -> list[DefectInstance]:
        return detect_instances(img, estimate_pattern(img), self.cfg)


# -- prediction files -----------------------------------------------------------------


def instance_record(image_id: str, inst: DefectInstance) -> dict:
    return {
        "image_id": image_id,
        "category_id": inst.defect_class.category_id,
        "score": inst.score,
        "bbox": inst.bbox.as_xywh(),
        "segmentation": rle_encode(inst.mask).to_dict(),
    }


def dump_predictions(preds: Mapping[str, Iterable[DefectInstance]]) -> str:
    """Serialize to JSON lines, one record per instance."""
    lines = [json.dumps(instance_record(iid, inst)) for iid, insts in preds.items() for inst in insts]
    return "".join(line + "\n" for line in lines)


def load_predictions(doc: str) -> dict[str, list[DefectInstance]]:
    """Parse a JSON-lines prediction file; bboxes are recomputed from the masks."""
    out: dict[str, list[DefectInstance]] = {}
    for idx, line in enumerate(l for l in doc.splitlines() if l.strip()):
        try:
            rec = json.loads(line)
            image_id = str(rec["image_id"])
            cls = DefectClass.from_category_id(rec["category_id"])
            score = float(rec["score"])
            if not (math.isfinite(score) and 0.0 <= score <= 1.0):
                raise ValueError(f"score {score} outside [0, 1]")
            mask = rle_decode(RleMask.from_dict(rec["segmentation"]))
            inst = DefectInstance.from_mask(cls, score, mask)
        except (KeyError, TypeError, ValueError, AnnotationFormatError) as exc:
            raise AnnotationFormatError(f"prediction record {idx}: {exc}") from None
        out.setdefault(image_id, []).append(inst)
    return out
