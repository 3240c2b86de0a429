"""Per-instance morphometry, per-class area statistics, and the CSV/folder report."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .classes import ALL_CLASSES, DefectClass
from .segmentor import DefectInstance

CSV_COLUMNS = (
    "image_id",
    "instance_index",
    "defect_class",
    "score",
    "area_px",
    "length_px",
    "width_px",
    "centroid_x",
    "centroid_y",
)


@dataclass(frozen=True)
class DefectParams:
    image_id: str
    instance_index: int
    defect_class: DefectClass
    area_px: int
    length_px: float
    width_px: float
    centroid: tuple[float, float]
    score: float

    def csv_row(self) -> list[str]:
        return [
            self.image_id,
            str(self.instance_index),
            self.defect_class.value,
            f"{self.score:.3f}",
            str(self.area_px),
            f"{self.length_px:.3f}",
            f"{self.width_px:.3f}",
            f"{self.centroid[0]:.3f}",
            f"{self.centroid[1]:.3f}",
        ]


@dataclass(frozen=True)
class ClassAreaStats:
    defect_class: DefectClass
    count: int
    area_min: float | None
    area_mean: float | None
    area_max: float | None

    def to_dict(self) -> dict:
        return {
            "class": self.defect_class.value,
            "count": self.count,
            "area_min": self.area_min,
            "area_mean": self.area_mean,
            "area_max": self.area_max,
        }


def extract_params(inst: DefectInstance, image_id: str, index: int) -> DefectParams:
    """Area, axis-aligned length/width and centroid (mean pixel center) of one instance."""
    ys, xs = np.nonzero(inst.mask)
    if ys.size == 0:
        raise ValueError(f"{image_id}#{index}: empty mask")
    bw = float(xs.max() - xs.min() + 1)
    bh = float(ys.max() - ys.min() + 1)
    return DefectParams(
        image_id=image_id,
        instance_index=index,
        defect_class=inst.defect_class,
        area_px=int(ys.size),
        length_px=max(bw, bh),
        width_px=min(bw, bh),
        centroid=(float(xs.mean() + 0.5), float(ys.mean() + 0.5)),
        score=inst.score,
    )


def extract_all(preds: Mapping[str, Sequence[DefectInstance]]) -> list[DefectParams]:
    return [extract_params(inst, iid, k) for iid in sorted(preds) for k, inst in enumerate(preds[iid])]


def summarize(params: Sequence[DefectParams]) -> list[ClassAreaStats]:
    """One row per class in category order; absent classes have count 0."""
    out = []
    for c in ALL_CLASSES:
        areas = [p.area_px for p in params if p.defect_class is c]
        if areas:
            out.append(ClassAreaStats(c, len(areas), float(min(areas)), float(np.mean(areas)), float(max(areas))))
        else:
            out.append(ClassAreaStats(c, 0, None, None, None))
    return out


def render_csv(params: Sequence[DefectParams]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for p in sorted(params, key=lambda p: (p.image_id, p.instance_index)):
        writer.writerow(p.csv_row())
    return buf.getvalue()


def overlay(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Copy of ``img`` with the mask's outer boundary drawn at 255."""
    edge = mask & ~ndimage.binary_erosion(mask, structure=np.ones((3, 3), dtype=bool), border_value=0)
    out = np.array(img, dtype=np.uint8, copy=True)
    out[edge] = 255
    return out


def _save_png(arr: np.ndarray, path: Path) -> None:
    try:
        Image.fromarray(arr).save(path)
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def write_report(
    params: Sequence[DefectParams],
    stats: Sequence[ClassAreaStats],
    out_dir: str | os.PathLike,
    images: Mapping[str, np.ndarray] | None = None,
    instances: Mapping[str, Sequence[DefectInstance]] | None = None,
) -> list[Path]:
    """Write ``report.csv``, ``stats.json`` and per-class image folders.

    Folder output needs ``images`` (source rasters) and ``instances`` (masks,
    indexed like ``params``); without them only the CSV and stats are written.
    Returns the written paths.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(render_csv(params), encoding="utf-8", newline="\n")
        (out / "stats.json").write_text(json.dumps([s.to_dict() for s in stats], indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing report in {out}: {exc}") from exc
    written = [out / "report.csv", out / "stats.json"]
    if images is None or instances is None:
        return written

    for p in sorted(params, key=lambda p: (p.image_id, p.instance_index)):
        cls_dir = out / p.defect_class.value
        cls_dir.mkdir(exist_ok=True)
        img = images[p.image_id]
        mask = instances[p.image_id][p.instance_index].mask
        src = cls_dir / f"{p.image_id}.png"
        if not src.exists():
            _save_png(np.asarray(img, dtype=np.uint8), src)
            written.append(src)
        stem = f"{p.image_id}_inst{p.instance_index}"
        _save_png(mask.astype(np.uint8) * 255, cls_dir / f"{stem}_mask.png")
        _save_png(overlay(img, mask), cls_dir / f"{stem}_overlay.png")
        written += [cls_dir / f"{stem}_mask.png", cls_dir / f"{stem}_overlay.png"]
    return written
