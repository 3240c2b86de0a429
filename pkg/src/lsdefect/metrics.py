"""COCO-style AP50 evaluation for boxes and masks."""

from __future__ import annotations

import json
from decimal import ROUND_HALF_UP, Decimal
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .classes import ALL_CLASSES, DefectClass
from .kernels import box_iou_matrix, mask_iou_matrix
from .segmentor import DefectInstance


class UndefinedAPError(ValueError):
    """AP is undefined for a class without ground-truth instances."""


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.5
    score_threshold: float = 0.5
    mask_mode: str = "both"  # "box", "mask" or "both"
    weighted_map: bool = False

    def __post_init__(self):
        for name in ("iou_threshold", "score_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.mask_mode not in ("box", "mask", "both"):
            raise ValueError(f"mask_mode must be box, mask or both, got {self.mask_mode!r}")


@dataclass
class ClassAP:
    defect_class: DefectClass
    bbox_ap: float | None
    segmentation_ap: float | None
    gt_count: int
    pred_count: int


@dataclass
class EvalSummary:
    per_class: list[ClassAP] = field(default_factory=list)
    map_bbox: float | None = None
    map_segmentation: float | None = None

    def to_dict(self) -> dict:
        return {
            "per_class": [{**asdict(c), "defect_class": c.defect_class.value} for c in self.per_class],
            "map_bbox": self.map_bbox,
            "map_segmentation": self.map_segmentation,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self) -> str:
        """Plain-text table: Class | BBox AP | Segmentation AP, with an mAP footer."""

        def cell(v):
            if v is None:
                return "-"
            # half-up on the decimal value, so 0.9355 prints as 0.936 rather than 0.935
            return str(Decimal(f"{v:.9f}").quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))

        rows = [("Class Name", "BBox AP", "Segmentation AP")]
        rows += [(c.defect_class.value, cell(c.bbox_ap), cell(c.segmentation_ap)) for c in self.per_class if c.gt_count > 0]
        rows.append(("mAP", cell(self.map_bbox), cell(self.map_segmentation)))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
        lines = [sep]
        for i, r in enumerate(rows):
            lines.append("| " + " | ".join(v.ljust(w) for v, w in zip(r, widths)) + " |")
            if i == 0 or i == len(rows) - 2:
                lines.append(sep)
        lines.append(sep)
        return "\n".join(lines) + "\n"


def mean_ap(values: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Unweighted (default) or weighted mean of per-class APs."""
    if not len(values):
        raise ValueError("no APs to aggregate")
    if weights is None:
        return float(sum(values) / len(values))
    w = np.asarray(weights, dtype=np.float64)
    return float(np.dot(values, w) / w.sum())


def _iou_matrix(preds: Sequence[DefectInstance], gts: Sequence[DefectInstance], use_masks: bool) -> np.ndarray:
    if use_masks:
        return mask_iou_matrix([p.mask for p in preds], [g.mask for g in gts])
    return box_iou_matrix([p.bbox for p in preds], [g.bbox for g in gts])


def _greedy(order: Sequence[int], ious: np.ndarray, threshold: float) -> list[bool]:
    n_gt = ious.shape[1]
    matched = np.zeros(n_gt, dtype=bool)
    labels = [False] * ious.shape[0]
    for i in order:
        if n_gt == 0:
            break
        cand = np.where(matched, -1.0, ious[i])
        j = int(np.argmax(cand))
        if cand[j] >= threshold:
            matched[j] = True
            labels[i] = True
    return labels


def match_predictions(
    preds: Sequence[DefectInstance], gts: Sequence[DefectInstance], cfg: EvalConfig = EvalConfig(), use_masks: bool | None = None
) -> list[bool]:
    """TP (True) / FP (False) per prediction, for one image and one class.

    Predictions are visited by descending score (ties: lower index first).
    Each takes its best-IoU unmatched ground truth if that IoU clears the
    threshold. ``use_masks`` defaults to ``cfg.mask_mode == "mask"``.
    """
    if use_masks is None:
        use_masks = cfg.mask_mode == "mask"
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    return _greedy(order, _iou_matrix(preds, gts, use_masks), cfg.iou_threshold)


def average_precision(labels: Sequence[bool], gt_count: int) -> float:
    """101-point interpolated AP of a score-ranked TP/FP list."""
    if gt_count <= 0:
        raise UndefinedAPError("AP is undefined without ground-truth instances")
    tp = np.cumsum(np.asarray(labels, dtype=np.int64))
    if tp.size == 0:
        return 0.0
    precision = tp / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # first rank whose recall tp/gt reaches i/100, compared exactly in integers
    idx = np.searchsorted(100 * tp, np.arange(101) * gt_count, side="left")
    sampled = np.where(idx < envelope.size, envelope[np.minimum(idx, envelope.size - 1)], 0.0)
    return float(sampled.mean())


def evaluate(
    preds: Mapping[str, Sequence[DefectInstance]],
    gts: Mapping[str, Sequence[DefectInstance]],
    cfg: EvalConfig = EvalConfig(),
) -> EvalSummary:
    """Per-class box and mask AP pooled over images, plus mAP over classes that have ground truth.

    Predictions below ``cfg.score_threshold`` are dropped first. Pooled ranking
    is by score descending, then image id, then instance index, so the result
    does not depend on image order.
    """
    unknown = set(preds) - set(gts)
    if unknown:
        raise KeyError(f"predictions reference unknown image ids: {sorted(unknown)[:5]}")
    modes = {"box": [False], "mask": [True], "both": [False, True]}[cfg.mask_mode]
    pooled = {(c, m): [] for c in ALL_CLASSES for m in modes}
    gt_counts = {c: 0 for c in ALL_CLASSES}
    pred_counts = {c: 0 for c in ALL_CLASSES}

    for image_id in sorted(gts):
        img_gts = gts[image_id]
        img_preds = [(i, p) for i, p in enumerate(preds.get(image_id, ())) if p.score >= cfg.score_threshold]
        for c in ALL_CLASSES:
            cg = [g for g in img_gts if g.defect_class is c]
            cp = [(i, p) for i, p in img_preds if p.defect_class is c]
            gt_counts[c] += len(cg)
            pred_counts[c] += len(cp)
            if not cp:
                continue
            order = sorted(range(len(cp)), key=lambda k: (-cp[k][1].score, cp[k][0]))
            for m in modes:
                labels = _greedy(order, _iou_matrix([p for _, p in cp], cg, m), cfg.iou_threshold)
                pooled[(c, m)].extend((-cp[k][1].score, image_id, cp[k][0], labels[k]) for k in range(len(cp)))

    summary = EvalSummary()
    for c in ALL_CLASSES:
        aps = {}
        for m in modes:
            if gt_counts[c] == 0:
                aps[m] = None
                continue
            ranked = sorted(pooled[(c, m)])
            aps[m] = average_precision([r[3] for r in ranked], gt_counts[c])
        summary.per_class.append(
            ClassAP(c, aps.get(False), aps.get(True), gt_counts[c], pred_counts[c])
        )

    evaluated = [c for c in summary.per_class if c.gt_count > 0]
    if evaluated:
        weights = [c.gt_count for c in evaluated] if cfg.weighted_map else None
        if False in modes:
            summary.map_bbox = mean_ap([c.bbox_ap for c in evaluated], weights)
        if True in modes:
            summary.map_segmentation = mean_ap([c.segmentation_ap for c in evaluated], weights)
    return summary


def summary_from_table(rows: Mapping[str, tuple[float, float]]) -> EvalSummary:
    """Build a summary from reported per-class (bbox AP, segmentation AP) pairs."""
    per_class = [ClassAP(DefectClass.parse(k), float(b), float(s), 1, 0) for k, (b, s) in rows.items()]
    return EvalSummary(
        per_class=per_class,
        map_bbox=mean_ap([c.bbox_ap for c in per_class]),
        map_segmentation=mean_ap([c.segmentation_ap for c in per_class]),
    )
