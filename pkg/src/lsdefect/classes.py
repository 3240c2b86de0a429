"""Defect label set and geometry constants shared by the generator and the segmentor."""

from __future__ import annotations

from enum import Enum


class DefectClass(str, Enum):
    """The closed set of stochastic defect labels, in category-id order."""

    THIN_BRIDGE = "thin_bridge"
    SINGLE_BRIDGE = "single_bridge"
    LINE_COLLAPSE = "line_collapse"
    LINE_BREAK = "line_break"
    MULTI_BRIDGE_H = "multi_bridge_h"
    MULTI_BRIDGE_NH = "multi_bridge_nh"

    def __str__(self) -> str:
        return self.value

    @property
    def category_id(self) -> int:
        return CATEGORY_IDS[self]

    @classmethod
    def parse(cls, label: str) -> "DefectClass":
        """Strict lookup; labels must match the snake_case convention exactly."""
        try:
            return cls(label)
        except ValueError:
            raise ValueError(
                f"unknown defect label {label!r}; expected one of {[c.value for c in cls]}"
            ) from None

    @classmethod
    def from_category_id(cls, category_id: int) -> "DefectClass":
        if isinstance(category_id, bool) or not isinstance(category_id, int):
            raise ValueError(f"category id must be an integer, got {category_id!r}")
        if not 1 <= category_id <= len(ALL_CLASSES):
            raise ValueError(f"unknown category id {category_id}; expected 1..{len(ALL_CLASSES)}")
        return ALL_CLASSES[category_id - 1]


ALL_CLASSES: tuple[DefectClass, ...] = tuple(DefectClass)
CATEGORY_IDS: dict[DefectClass, int] = {c: i + 1 for i, c in enumerate(ALL_CLASSES)}

BRIDGE_CLASSES = frozenset(
    {
        DefectClass.THIN_BRIDGE,
        DefectClass.SINGLE_BRIDGE,
        DefectClass.MULTI_BRIDGE_H,
        DefectClass.MULTI_BRIDGE_NH,
    }
)

# Geometry conventions. The generator validates against these and the
# segmentor's RuleConfig defaults to them, so a zero-noise closed loop is exact.
THIN_RATIO = 0.5  # thin bridge: thickness < THIN_RATIO * line_width
H_TOLERANCE = 3.0  # px spread of per-space centroid rows for a horizontal multi-bridge
MIN_BREAK_GAP = 4  # px
COLLAPSE_MIN_PITCHES = 4  # collapse run height >= COLLAPSE_MIN_PITCHES * pitch
