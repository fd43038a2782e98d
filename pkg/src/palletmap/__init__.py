"""Post-detection stages for pallet and pallet-hole perception.

Box geometry, detection losses, hole-to-pallet association, detection
metrics, annotation-aware augmentation and a TPE tuner.
"""

from palletmap.annotation_io import Detection, GroundTruth, NormalizedAnnotation
from palletmap.association import AssociationConfig, AssociationMap, associate
from palletmap.geometry import BoundingBox, Point, centroid, contains, iou

__version__ = "0.1.0"

__all__ = [
    "AssociationConfig",
    "AssociationMap",
    "BoundingBox",
    "Detection",
    "GroundTruth",
    "NormalizedAnnotation",
    "Point",
    "associate",
    "centroid",
    "contains",
    "iou",
]
