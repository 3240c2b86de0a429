"""Synthetic line/space images with injected defects and exact ground truth.

Lines are vertical and bright on a dark background. Line ``k`` occupies
columns ``[offset + k*pitch, offset + k*pitch + line_width)`` with
``offset = (pitch - line_width) // 2``; space ``k`` sits between lines ``k``
and ``k + 1``.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from . import classes as C
from .annotset import ImageAnnotation, Instance, Polygon, export_coco, parse_labelme, rasterize, to_labelme
from .classes import ALL_CLASSES, DefectClass

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")

_ROUGHNESS_STREAM = 0
_NOISE_STREAM = 1
_GEOMETRY_STREAM = 2


@dataclass(frozen=True)
class SceneSpec:
    width: int = 480
    height: int = 480
    pitch: int = 32
    line_width: int = 16
    line_intensity: int = 200
    space_intensity: int = 50
    noise_sigma: float = 0.0
    edge_roughness_amp: float = 0.0
    seed: int = 0

    def __post_init__(self):
        errors = []
        if self.width < 1 or self.height < 1:
            errors.append("image dimensions must be positive")
        if not 0 < self.line_width < self.pitch <= self.width:
            errors.append(f"need 0 < line_width ({self.line_width}) < pitch ({self.pitch}) <= width ({self.width})")
        for name in ("line_intensity", "space_intensity"):
            if not 0 <= getattr(self, name) <= 255:
                errors.append(f"{name} must lie in [0, 255]")
        if self.line_intensity <= self.space_intensity:
            errors.append("line_intensity must exceed space_intensity")
        if self.noise_sigma < 0 or self.edge_roughness_amp < 0:
            errors.append("noise_sigma and edge_roughness_amp must be >= 0")
        if not 0 <= self.seed < 2**64:
            errors.append("seed must be a 64-bit unsigned integer")
        if errors:
            raise ValueError("invalid SceneSpec: " + "; ".join(errors))

    @property
    def offset(self) -> int:
        return (self.pitch - self.line_width) // 2

    @property
    def space_width(self) -> int:
        return self.pitch - self.line_width

    @property
    def n_lines(self) -> int:
        """Lines lying fully inside the image."""
        return max(0, (self.width - self.offset - self.line_width) // self.pitch + 1)

    def line_left(self, k: int) -> int:
        return self.offset + k * self.pitch

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])


@dataclass(frozen=True)
class DefectSpec:
    """Geometry of one injected defect.

    ``size`` is class specific: bridge thickness, break gap length, or collapse
    run height (all in px). ``spaces`` is the number of spaces a bridge spans;
    ``shear`` is the per-space vertical shift of a non-horizontal bridge.
    """

    defect_class: DefectClass
    anchor_line: int
    anchor_y: int
    size: int
    spaces: int = 1
    shear: int = 0

    def __post_init__(self):
        object.__setattr__(self, "defect_class", DefectClass(self.defect_class))


# -- geometry ----------------------------------------------------------------


def _staircase(xs: Sequence[int], tops: Sequence[int], thickness: int) -> Polygon:
    """Outline of adjacent rectangles [xs[j], xs[j+1]) x [tops[j], tops[j]+thickness)."""
    n = len(tops)
    top = []
    for j in range(n):
        top += [(xs[j], tops[j]), (xs[j + 1], tops[j])]
    bottom = []
    for j in reversed(range(n)):
        bottom += [(xs[j + 1], tops[j] + thickness), (xs[j], tops[j] + thickness)]
    return Polygon(tuple(top + bottom))


def defect_polygon(spec: SceneSpec, d: DefectSpec) -> Polygon:
    """Exact outline of the region painted for ``d``; validates class geometry."""
    cls, a, y0, t = d.defect_class, d.anchor_line, d.anchor_y, d.size
    lw = spec.line_width

    def need(cond: bool, msg: str):
        if not cond:
            raise ValueError(f"invalid {cls.value} geometry: {msg}")

    need(t >= 1, "size must be >= 1")
    need(a >= 0, "anchor_line must be >= 0")
    last_line = a + (d.spaces if cls in C.BRIDGE_CLASSES else 1 if cls is DefectClass.LINE_COLLAPSE else 0)
    need(last_line < spec.n_lines, f"touches line {last_line} but only {spec.n_lines} lines fit")

    if cls in (DefectClass.THIN_BRIDGE, DefectClass.SINGLE_BRIDGE):
        need(d.spaces == 1 and d.shear == 0, "single-space bridges span exactly one space with no shear")
        thin = t < C.THIN_RATIO * lw
        need(thin == (cls is DefectClass.THIN_BRIDGE), f"thickness {t} vs thin limit {C.THIN_RATIO * lw}")
        poly = Polygon.rectangle(spec.line_left(a) + lw, y0, spec.line_left(a + 1), y0 + t)
    elif cls is DefectClass.MULTI_BRIDGE_H:
        need(d.spaces >= 2 and d.shear == 0, "horizontal multi-bridge spans >= 2 spaces with no shear")
        poly = Polygon.rectangle(spec.line_left(a) + lw, y0, spec.line_left(a + d.spaces), y0 + t)
    elif cls is DefectClass.MULTI_BRIDGE_NH:
        need(d.spaces >= 2, "non-horizontal multi-bridge spans >= 2 spaces")
        need(0 < abs(d.shear) < t, f"shear must satisfy 0 < |shear| < thickness ({t})")
        need(abs(d.shear) * (d.spaces - 1) > C.H_TOLERANCE, "row spread must exceed the horizontal tolerance")
        # steps happen at the center column of each interior line
        xs = [spec.line_left(a) + lw]
        xs += [spec.line_left(a + j) + lw // 2 for j in range(1, d.spaces)]
        xs += [spec.line_left(a + d.spaces)]
        poly = _staircase(xs, [y0 + j * d.shear for j in range(d.spaces)], t)
    elif cls is DefectClass.LINE_BREAK:
        need(d.spaces == 1 and d.shear == 0, "a break lies in one line")
        need(t >= C.MIN_BREAK_GAP, f"gap must be >= {C.MIN_BREAK_GAP} px")
        poly = Polygon.rectangle(spec.line_left(a), y0, spec.line_left(a) + lw, y0 + t)
    else:  # LINE_COLLAPSE
        need(d.spaces == 1 and d.shear == 0, "a collapse merges two adjacent lines")
        need(t >= C.COLLAPSE_MIN_PITCHES * spec.pitch, f"run height must be >= {C.COLLAPSE_MIN_PITCHES}x pitch")
        poly = Polygon.rectangle(spec.line_left(a), y0, spec.line_left(a + 1) + lw, y0 + t)

    x0, py0, x1, py1 = poly.extents()
    need(x0 >= 0 and py0 >= 0 and x1 <= spec.width and py1 <= spec.height, "geometry leaves the image")
    return poly


def defect_intensity(spec: SceneSpec, d: DefectSpec) -> int:
    return spec.space_intensity if d.defect_class is DefectClass.LINE_BREAK else spec.line_intensity


# -- rendering ---------------------------------------------------------------


def _line_raster(spec: SceneSpec) -> np.ndarray:
    """Float raster of the pattern with optional per-row edge roughness."""
    h, w = spec.height, spec.width
    # include a partially visible last line so the raster stays periodic
    n = -(-(w - spec.offset) // spec.pitch)
    lefts = np.array([spec.line_left(k) for k in range(n)], dtype=np.int64)
    left_edge = np.repeat(lefts[None, :], h, axis=0)
    right_edge = left_edge + spec.line_width
    bound = int(math.floor(spec.edge_roughness_amp))
    if bound > 0 and n:
        rng = spec.rng(_ROUGHNESS_STREAM)
        steps = rng.integers(-1, 2, size=(h, n, 2))
        walk = np.zeros((h, n, 2), dtype=np.int64)
        cur = np.zeros((n, 2), dtype=np.int64)
        for y in range(h):
            cur = np.clip(cur + steps[y], -bound, bound)
            walk[y] = cur
        left_edge = left_edge + walk[:, :, 0]
        right_edge = right_edge + walk[:, :, 1]
    cols = np.arange(w)[None, None, :]
    bright = ((cols >= left_edge[:, :, None]) & (cols < right_edge[:, :, None])).any(axis=1)
    return np.where(bright, float(spec.line_intensity), float(spec.space_intensity))


def _finish(raster: np.ndarray, spec: SceneSpec) -> np.ndarray:
    if spec.noise_sigma > 0:
        raster = raster + spec.rng(_NOISE_STREAM).normal(0.0, spec.noise_sigma, raster.shape)
    return np.clip(np.rint(raster), 0, 255).astype(np.uint8)


def render_clean_pattern(spec: SceneSpec) -> np.ndarray:
    """Defect-free 8-bit line/space image (roughness, then noise)."""
    return _finish(_line_raster(spec), spec)


def _paint(raster: np.ndarray, spec: SceneSpec, defects: Sequence[DefectSpec], image_id: str):
    masks, instances = [], []
    for i, d in enumerate(defects):
        poly = defect_polygon(spec, d)
        mask = rasterize(poly, spec.width, spec.height)
        for j, prev in enumerate(masks):
            if np.any(mask & prev):
                raise ValueError(f"defect {i} overlaps defect {j}")
        masks.append(mask)
        instances.append(Instance(d.defect_class, poly))
    for d, mask in zip(defects, masks):
        raster[mask] = defect_intensity(spec, d)
    return raster, ImageAnnotation(image_id=image_id, width=spec.width, height=spec.height, instances=tuple(instances))


def inject_defects(
    img: np.ndarray, spec: SceneSpec, defects: Sequence[DefectSpec], image_id: str = ""
) -> tuple[np.ndarray, ImageAnnotation]:
    """Paint defects onto a copy of ``img`` and return it with its annotation."""
    img = np.asarray(img)
    if img.shape != (spec.height, spec.width):
        raise ValueError(f"image shape {img.shape} does not match scene {spec.height}x{spec.width}")
    out, ann = _paint(img.copy(), spec, defects, image_id)
    return out, ann


def render_sample(
    spec: SceneSpec, defects: Sequence[DefectSpec], image_id: str = ""
) -> tuple[np.ndarray, ImageAnnotation]:
    """Full generation order: pattern and roughness, defects, then noise."""
    raster, ann = _paint(_line_raster(spec), spec, defects, image_id)
    return _finish(raster, spec), ann


# -- random defects and datasets ----------------------------------------------


def random_defect(cls: DefectClass, spec: SceneSpec, rng: np.random.Generator, margin: int = 8) -> DefectSpec:
    """Draw a valid single defect of class ``cls`` for the scene."""
    cls = DefectClass(cls)
    lw, pitch = spec.line_width, spec.pitch
    spaces, shear = 1, 0
    if cls is DefectClass.THIN_BRIDGE:
        hi = math.ceil(C.THIN_RATIO * lw) - 1
        size = int(rng.integers(min(2, hi), hi + 1))
    elif cls is DefectClass.SINGLE_BRIDGE:
        lo = math.ceil(C.THIN_RATIO * lw)
        size = int(rng.integers(lo, max(lo, lw - 2) + 1))
    elif cls is DefectClass.MULTI_BRIDGE_H:
        spaces = int(rng.integers(2, 4))
        size = int(rng.integers(max(2, lw // 2 - 2), lw // 2 + 5))
    elif cls is DefectClass.MULTI_BRIDGE_NH:
        spaces = int(rng.integers(2, 4))
        size = int(rng.integers(lw // 2 + 2, lw // 2 + 7))
        shear = int(rng.integers(4, max(4, size - 3) + 1)) * int(rng.choice([-1, 1]))
    elif cls is DefectClass.LINE_BREAK:
        size = int(rng.integers(C.MIN_BREAK_GAP, max(C.MIN_BREAK_GAP, lw) + 1))
    else:
        lo = C.COLLAPSE_MIN_PITCHES * pitch
        size = int(rng.integers(lo, lo + pitch + 1))

    lines_used = spaces if cls in C.BRIDGE_CLASSES else 1 if cls is DefectClass.LINE_COLLAPSE else 0
    anchor = int(rng.integers(0, spec.n_lines - lines_used))
    rise = shear * (spaces - 1)
    y_lo = margin + max(0, -rise)
    y_hi = spec.height - margin - size - max(0, rise)
    if y_hi < y_lo:
        raise ValueError(f"scene too small for a {cls.value} defect")
    anchor_y = int(rng.integers(y_lo, y_hi + 1))
    return DefectSpec(cls, anchor, anchor_y, size, spaces, shear)


@dataclass(frozen=True)
class ImageJob:
    image_id: str
    index: int
    split: str
    classes: tuple[str, ...]


@dataclass
class DatasetManifest:
    seed: int
    scene: dict
    plan: dict
    images: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {"seed": self.seed, "scene": self.scene, "plan": self.plan, **self.extra, "images": self.images}
        return json.dumps(doc, indent=2, sort_keys=False)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DatasetManifest":
        doc = json.loads(Path(path).read_text())
        images = doc.pop("images")
        return cls(seed=doc.pop("seed"), scene=doc.pop("scene"), plan=doc.pop("plan"), images=images, extra=doc)

    def split(self, name: str | None) -> list[dict]:
        return [im for im in self.images if name is None or im["split"] == name]


def uniform_plan(train: int = 80, val: int = 10, test: int = 10, clean: int = 0) -> dict:
    """Same per-class count for every class; optional defect-free images per split."""
    plan = {}
    for split, n in zip(SPLITS, (train, val, test)):
        plan[split] = {c.value: n for c in ALL_CLASSES}
        if clean:
            plan[split]["clean"] = clean
    return plan


def plan_jobs(split_plan: Mapping[str, Mapping[str, int]]) -> list[ImageJob]:
    jobs = []
    for split in split_plan:
        counts = split_plan[split]
        for key, n in counts.items():
            if key != "clean":
                DefectClass.parse(key)
            if n < 0:
                raise ValueError(f"negative count for {split}/{key}")
        for key in [c.value for c in ALL_CLASSES] + ["clean"]:
            for _ in range(counts.get(key, 0)):
                idx = len(jobs)
                cls = () if key == "clean" else (key,)
                jobs.append(ImageJob(f"{split}_{idx:05d}", idx, split, cls))
    return jobs


def make_image(base_spec: SceneSpec, job: ImageJob) -> tuple[np.ndarray, ImageAnnotation]:
    spec = replace(base_spec, seed=(base_spec.seed + job.index) % 2**64)
    rng = spec.rng(_GEOMETRY_STREAM)
    defects = [random_defect(DefectClass(c), spec, rng) for c in job.classes]
    return render_sample(spec, defects, job.image_id)


def _write_one(args) -> dict:
    base_spec, job, out_dir = args
    img, ann = make_image(base_spec, job)
    img_rel = f"images/{job.image_id}.png"
    ann_rel = f"annotations/{job.image_id}.json"
    img_path, ann_path = Path(out_dir) / img_rel, Path(out_dir) / ann_rel
    try:
        Image.fromarray(img).save(img_path)
        ann_path.write_text(to_labelme(ann, f"../{img_rel}"))
    except OSError as exc:
        raise OSError(f"failed writing {img_path.parent.parent}/{job.image_id}: {exc}") from exc
    return {"id": job.image_id, "file": img_rel, "annotation": ann_rel, "split": job.split, "classes": list(job.classes)}


def generate_dataset(
    base_spec: SceneSpec,
    split_plan: Mapping[str, Mapping[str, int]],
    out_dir: str | os.PathLike,
    jobs: int = 1,
    extra: dict | None = None,
) -> DatasetManifest:
    """Write PNG images, Labelme annotations, per-split COCO files and ``manifest.json``.

    Image ``i`` (global index across splits) uses seed ``base_spec.seed + i``,
    so output is identical for any ``jobs`` value.
    """
    work = plan_jobs(split_plan)
    manifest = DatasetManifest(seed=base_spec.seed, scene=asdict(base_spec), plan={k: dict(v) for k, v in split_plan.items()}, extra=dict(extra or {}))
    if not work:
        return manifest
    out = Path(out_dir)
    for sub in ("images", "annotations"):
        try:
            (out / sub).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create {out / sub}: {exc}") from exc
    args = [(base_spec, job, str(out)) for job in work]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            manifest.images = list(pool.map(_write_one, args, chunksize=8))
    else:
        manifest.images = [_write_one(a) for a in args]

    for split in split_plan:
        anns = [load_annotation(out, im) for im in manifest.split(split)]
        (out / f"coco_{split}.json").write_text(export_coco(anns))
    (out / "manifest.json").write_text(manifest.to_json())
    log.info("wrote %d images to %s", len(manifest.images), out)
    return manifest


def load_annotation(root: str | os.PathLike, entry: Mapping) -> ImageAnnotation:
    ann = parse_labelme((Path(root) / entry["annotation"]).read_text())
    return replace(ann, image_id=entry["id"])


def load_image(root: str | os.PathLike, entry: Mapping) -> np.ndarray:
    with Image.open(Path(root) / entry["file"]) as im:
        return np.asarray(im.convert("L"))
