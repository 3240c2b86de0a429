"""Annotation model and ingestion.

Masks are plain ``(H, W)`` boolean numpy arrays indexed ``[y, x]``; pixel
``(x, y)`` has its center at ``(x + 0.5, y + 0.5)``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._backend import impl
from .classes import ALL_CLASSES, DefectClass


class DegeneratePolygonWarning(UserWarning):
    """The polygon has zero area; its rasterization is empty."""


class AnnotationFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Polygon:
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(pts) < 3:
            raise ValueError(f"polygon needs at least 3 points, got {len(pts)}")
        if not all(math.isfinite(v) for p in pts for v in p):
            raise ValueError("polygon coordinates must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def xs(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=np.float64)

    @property
    def ys(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=np.float64)

    def signed_area(self) -> float:
        x, y = self.xs, self.ys
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    def is_degenerate(self) -> bool:
        """True when all distinct vertices are collinear (no enclosed area)."""
        pts = np.unique(np.column_stack([self.xs, self.ys]), axis=0)
        if len(pts) < 3:
            return True
        d = pts[1:] - pts[0]
        cross = d[:, 0][:, None] * d[:, 1][None, :] - d[:, 1][:, None] * d[:, 0][None, :]
        return bool(np.all(cross == 0))

    def clamped(self, width: float, height: float) -> "Polygon":
        return Polygon(tuple((min(max(x, 0.0), width), min(max(y, 0.0), height)) for x, y in self.points))

    def transformed(self, matrix: np.ndarray) -> "Polygon":
        """Apply a 2x3 affine matrix to every vertex."""
        pts = np.column_stack([self.xs, self.ys, np.ones(len(self.points))]) @ matrix.T
        return Polygon(tuple((float(x), float(y)) for x, y in pts))

    def extents(self) -> tuple[float, float, float, float]:
        x, y = self.xs, self.ys
        return float(x.min()), float(y.min()), float(x.max()), float(y.max())

    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float) -> "Polygon":
        return cls(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))


@dataclass(frozen=True)
class Instance:
    defect_class: DefectClass
    polygon: Polygon


@dataclass(frozen=True)
class ImageAnnotation:
    image_id: str
    width: int
    height: int
    instances: tuple[Instance, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")

    def masks(self) -> list[np.ndarray]:
        return [rasterize(inst.polygon, self.width, self.height) for inst in self.instances]


@dataclass(frozen=True)
class RleMask:
    """Column-major run lengths, alternating zero/one runs, leading with a zero-run."""

    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self):
        arr = _validate_counts(self.counts, self.width, self.height)
        object.__setattr__(self, "counts", tuple(arr.tolist()))

    def to_dict(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "RleMask":
        try:
            h, w = (int(v) for v in d["size"])
            counts = d["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationFormatError(f"malformed RLE object: {exc}") from None
        if isinstance(counts, str) or not all(isinstance(c, int) and not isinstance(c, bool) for c in counts):
            raise AnnotationFormatError("RLE counts must be a list of integers")
        return cls(width=w, height=h, counts=tuple(counts))


def _validate_counts(counts: Sequence[int], width: int, height: int) -> np.ndarray:
    if width < 0 or height < 0:
        raise AnnotationFormatError("RLE size must be non-negative")
    arr = np.asarray(counts)
    if arr.ndim != 1 or arr.size == 0:
        raise AnnotationFormatError("RLE counts must be a non-empty flat list")
    if arr.dtype.kind not in "iu" and not (arr.dtype.kind == "f" and np.all(arr == np.round(arr))):
        raise AnnotationFormatError("RLE counts must be integers")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise AnnotationFormatError("RLE counts must be non-negative")
    if np.any(arr[1:] == 0):
        raise AnnotationFormatError("RLE has an interior zero-length run")
    total = int(arr.sum())
    if total != width * height:
        raise AnnotationFormatError(f"RLE counts sum to {total}, expected {width}x{height}={width * height}")
    return arr


# -- rasterization and RLE ---------------------------------------------------


def rasterize(poly: Polygon, width: int, height: int) -> np.ndarray:
    """Even-odd rasterization at pixel centers.

    Centers lying exactly on an edge follow a top-left rule: included on left
    and top edges, excluded on right and bottom edges. A zero-area polygon
    yields an empty mask and a :class:`DegeneratePolygonWarning`.
    """
    if poly.is_degenerate():
        warnings.warn("polygon has zero area", DegeneratePolygonWarning, stacklevel=2)
        return np.zeros((height, width), dtype=bool)
    return impl.rasterize(
        np.ascontiguousarray(poly.xs), np.ascontiguousarray(poly.ys), int(width), int(height)
    )


def rle_encode(mask: np.ndarray) -> RleMask:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    counts = impl.rle_encode(mask.view(np.uint8))
    return RleMask(width=mask.shape[1], height=mask.shape[0], counts=counts)


def rle_decode(rle: RleMask) -> np.ndarray:
    # RleMask validates on construction and is immutable
    return impl.rle_decode(np.asarray(rle.counts, dtype=np.int64), rle.height, rle.width)


# -- Labelme / COCO ------------------------------------------------------------


def parse_labelme(doc: str | bytes) -> ImageAnnotation:
    """Parse a Labelme JSON document; only polygon shapes are accepted."""
    try:
        data = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise AnnotationFormatError(f"malformed Labelme JSON: {exc}") from None
    if not isinstance(data, dict):
        raise AnnotationFormatError("Labelme document must be a JSON object")
    try:
        width = int(data["imageWidth"])
        height = int(data["imageHeight"])
    except (KeyError, TypeError, ValueError):
        raise AnnotationFormatError("Labelme document lacks integer imageWidth/imageHeight") from None
    shapes = data.get("shapes", [])
    if not isinstance(shapes, list):
        raise AnnotationFormatError("'shapes' must be a list")
    image_path = data.get("imagePath") or ""
    image_id = str(data.get("image_id") or image_path.rsplit("/", 1)[-1].rsplit(".", 1)[0])

    instances = []
    for idx, shape in enumerate(shapes):
        shape_type = shape.get("shape_type", "polygon")
        if shape_type != "polygon":
            raise AnnotationFormatError(f"shape {idx}: unsupported shape_type {shape_type!r}")
        try:
            cls = DefectClass.parse(shape.get("label"))
        except ValueError as exc:
            raise AnnotationFormatError(f"shape {idx}: {exc}") from None
        try:
            poly = Polygon(tuple(tuple(p) for p in shape["points"])).clamped(width, height)
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationFormatError(f"shape {idx}: invalid polygon: {exc}") from None
        instances.append(Instance(cls, poly))
    return ImageAnnotation(image_id=image_id, width=width, height=height, instances=tuple(instances))


def to_labelme(ann: ImageAnnotation, image_path: str = "") -> str:
    doc = {
        "version": "5.0.1",
        "flags": {},
        "shapes": [
            {
                "label": inst.defect_class.value,
                "points": [list(p) for p in inst.polygon.points],
                "group_id": None,
                "shape_type": "polygon",
                "flags": {},
            }
            for inst in ann.instances
        ],
        "imagePath": image_path or f"{ann.image_id}.png",
        "imageData": None,
        "imageHeight": ann.height,
        "imageWidth": ann.width,
    }
    return json.dumps(doc, indent=2)


def coco_categories() -> list[dict]:
    return [{"id": c.category_id, "name": c.value, "supercategory": "defect"} for c in ALL_CLASSES]


def export_coco(annotations: Iterable[ImageAnnotation]) -> str:
    """COCO instances JSON; area is the popcount of the rasterized polygon."""
    images, records = [], []
    seen: set[str] = set()
    for img_idx, ann in enumerate(annotations, start=1):
        if ann.image_id in seen:
            raise ValueError(f"duplicate image id {ann.image_id!r}")
        seen.add(ann.image_id)
        images.append(
            {"id": img_idx, "file_name": f"{ann.image_id}.png", "width": ann.width, "height": ann.height, "image_key": ann.image_id}
        )
        for inst in ann.instances:
            x0, y0, x1, y1 = inst.polygon.extents()
            mask = rasterize(inst.polygon, ann.width, ann.height)
            records.append(
                {
                    "id": len(records) + 1,
                    "image_id": img_idx,
                    "category_id": inst.defect_class.category_id,
                    "segmentation": [[v for p in inst.polygon.points for v in p]],
                    "bbox": [x0, y0, x1 - x0, y1 - y0],
                    "area": int(np.count_nonzero(mask)),
                    "iscrowd": 0,
                }
            )
    return json.dumps({"images": images, "annotations": records, "categories": coco_categories()})


def parse_coco(doc: str) -> list[ImageAnnotation]:
    """Inverse of :func:`export_coco` for polygon segmentations."""
    data = json.loads(doc)
    by_image: dict[int, list[Instance]] = {img["id"]: [] for img in data["images"]}
    for rec in data["annotations"]:
        seg = rec["segmentation"][0]
        pts = tuple(zip(seg[0::2], seg[1::2]))
        by_image[rec["image_id"]].append(Instance(DefectClass.from_category_id(rec["category_id"]), Polygon(pts)))
    return [
        ImageAnnotation(
            image_id=img.get("image_key") or img["file_name"].rsplit(".", 1)[0],
            width=img["width"],
            height=img["height"],
            instances=tuple(by_image[img["id"]]),
        )
        for img in data["images"]
    ]


# -- augmentation ----------------------------------------------------------------

GEOMETRIC_OPS = frozenset({"rotate", "translate", "shear", "scale", "flip_x", "flip_y"})
PHOTOMETRIC_OPS = frozenset({"contrast", "brightness", "hue", "saturation"})


@dataclass(frozen=True)
class AugmentOp:
    """One augmentation. Geometric ops act about the image center."""

    kind: str
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in GEOMETRIC_OPS | PHOTOMETRIC_OPS:
            raise ValueError(f"unknown augmentation {self.kind!r}")
        if self.kind == "scale" and any(p <= 0 for p in self.params):
            raise ValueError(f"scale factors must be positive, got {self.params}")

    @classmethod
    def rotate(cls, degrees: float) -> "AugmentOp":
        return cls("rotate", (float(degrees),))

    @classmethod
    def translate(cls, dx: float, dy: float) -> "AugmentOp":
        return cls("translate", (float(dx), float(dy)))

    @classmethod
    def shear(cls, kx: float, ky: float) -> "AugmentOp":
        return cls("shear", (float(kx), float(ky)))

    @classmethod
    def scale(cls, sx: float, sy: float) -> "AugmentOp":
        return cls("scale", (float(sx), float(sy)))

    @classmethod
    def flip_x(cls) -> "AugmentOp":
        return cls("flip_x")

    @classmethod
    def flip_y(cls) -> "AugmentOp":
        return cls("flip_y")

    @classmethod
    def contrast(cls, c: float) -> "AugmentOp":
        return cls("contrast", (float(c),))

    @classmethod
    def brightness(cls, b: float) -> "AugmentOp":
        return cls("brightness", (float(b),))

    @classmethod
    def hue(cls, h: float) -> "AugmentOp":
        return cls("hue", (float(h),))

    @classmethod
    def saturation(cls, s: float) -> "AugmentOp":
        return cls("saturation", (float(s),))

    def matrix(self, width: int, height: int) -> np.ndarray:
        """2x3 forward affine map in pixel-edge coordinates."""
        cx, cy = width / 2.0, height / 2.0
        if self.kind == "translate":
            dx, dy = self.params
            return np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]])
        if self.kind == "flip_x":
            return np.array([[-1.0, 0.0, float(width)], [0.0, 1.0, 0.0]])
        if self.kind == "flip_y":
            return np.array([[1.0, 0.0, 0.0], [0.0, -1.0, float(height)]])
        if self.kind == "rotate":
            (deg,) = self.params
            quarter = deg / 90.0
            if quarter == round(quarter):
                # exact for right angles so repeated rotations compose to identity
                c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][int(round(quarter)) % 4]
            else:
                rad = math.radians(deg)
                c, s = math.cos(rad), math.sin(rad)
            lin = np.array([[c, -s], [s, c]], dtype=np.float64)
        elif self.kind == "shear":
            kx, ky = self.params
            lin = np.array([[1.0, kx], [ky, 1.0]])
        else:  # scale
            sx, sy = self.params
            lin = np.array([[sx, 0.0], [0.0, sy]])
        center = np.array([cx, cy])
        return np.column_stack([lin, center - lin @ center])


def _warp_nearest(img: np.ndarray, matrix: np.ndarray, fill: int) -> np.ndarray:
    h, w = img.shape
    lin, off = matrix[:, :2], matrix[:, 2]
    inv = np.linalg.inv(lin)
    yy, xx = np.mgrid[0:h, 0:w]
    dst = np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5])
    src = inv @ (dst - off[:, None])
    sx = np.floor(src[0] + 1e-9).astype(np.int64)
    sy = np.floor(src[1] + 1e-9).astype(np.int64)
    ok = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.full(h * w, fill, dtype=img.dtype)
    out[ok] = img[sy[ok], sx[ok]]
    return out.reshape(h, w)


def augment(
    img: np.ndarray, ann: ImageAnnotation, op: AugmentOp, fill: int = 50
) -> tuple[np.ndarray, ImageAnnotation]:
    """Apply one augmentation to an 8-bit image and its annotation.

    Geometric ops resample the raster with nearest neighbour (out-of-frame
    pixels take ``fill``) and move polygon vertices by the same affine map.
    Photometric ops leave the annotation untouched; hue and saturation are
    identity on single-channel data.
    """
    img = np.asarray(img)
    if op.kind in GEOMETRIC_OPS:
        m = op.matrix(img.shape[1], img.shape[0])
        out = _warp_nearest(img, m, fill)
        new_ann = ImageAnnotation(
            image_id=ann.image_id,
            width=ann.width,
            height=ann.height,
            instances=tuple(Instance(i.defect_class, i.polygon.transformed(m)) for i in ann.instances),
        )
        return out, new_ann
    if op.kind in ("hue", "saturation"):
        return img.copy(), ann
    f = img.astype(np.float64)
    if op.kind == "contrast":
        f = (f - f.mean()) * op.params[0] + f.mean()
    else:
        f = f + op.params[0]
    return np.clip(np.rint(f), 0, 255).astype(np.uint8), ann
