"""Scene bundle data model, on-disk format, and frame subsampling."""

from .types import (
    CameraModel,
    Detection2D,
    FrameRecord,
    GroundTruthInstance,
    Pose,
    SceneBundle,
    ScenePointCloud,
)
from .io import load_bundle, save_bundle, subsample_frames

__all__ = [
    "CameraModel",
    "Detection2D",
    "FrameRecord",
    "GroundTruthInstance",
    "Pose",
    "SceneBundle",
    "ScenePointCloud",
    "load_bundle",
    "save_bundle",
    "subsample_frames",
]
