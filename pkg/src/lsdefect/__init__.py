"""Line/space SEM defect inspection toolkit.

Synthetic dataset generation with exact ground truth, Labelme/COCO/RLE
annotation handling, a rule-based defect segmentor, COCO-style AP50
evaluation, and per-instance morphometry reports.
"""

from ._backend import BACKEND
from .classes import ALL_CLASSES, DefectClass

__version__ = "0.1.0"

__all__ = ["ALL_CLASSES", "BACKEND", "DefectClass", "__version__"]
