"""Core scene data model: camera, poses, frames, detections, cloud, bundle.

Everything is immutable after construction; `validate()` methods enforce
the structural invariants that the loader relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimMismatch, InvalidBundle, InvalidPose

POSE_TOL = 1e-5
DESCRIPTOR_NORM_TOL = 1e-4
UNLABELED_SUPERPOINT = -1


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def validate(self) -> None:
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidBundle("camera intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidBundle("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise InvalidBundle("image dimensions must be >= 1")

    def project(self, pts_cam: np.ndarray) -> np.ndarray:
        """Project camera-space points (N,3) to pixel coordinates (N,2).

        Callers are responsible for filtering non-positive depth.
        """
        pts = np.asarray(pts_cam, dtype=np.float64).reshape(-1, 3)
        z = pts[:, 2]
        u = self.fx * pts[:, 0] / z + self.cx
        v = self.fy * pts[:, 1] / z + self.cy
        return np.stack([u, v], axis=1)


@dataclass(frozen=True)
class Pose:
    """4x4 homogeneous rigid transform, camera-to-world convention."""

    matrix: np.ndarray  # (4, 4) float64

    def validate(self) -> None:
        m = self.matrix
        if m.shape != (4, 4):
            raise InvalidPose(f"pose must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidPose("pose contains non-finite entries")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > POSE_TOL:
            raise InvalidPose("rotation block is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > POSE_TOL:
            raise InvalidPose("rotation determinant is not +1")
        if not np.array_equal(m[3], np.array([0.0, 0.0, 0.0, 1.0])):
            raise InvalidPose("bottom row must be (0, 0, 0, 1)")

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def transform(self, pts_cam: np.ndarray) -> np.ndarray:
        """Map camera-space points to world coordinates."""
        pts = np.asarray(pts_cam, dtype=np.float64).reshape(-1, 3)
        return pts @ self.rotation.T + self.translation

    def inverse_transform(self, pts_world: np.ndarray) -> np.ndarray:
        """Map world points into this camera's frame."""
        pts = np.asarray(pts_world, dtype=np.float64).reshape(-1, 3)
        return (pts - self.translation) @ self.rotation


@dataclass(frozen=True)
class Detection2D:
    """One 2-D instance detection: box, full-image mask, optional descriptor."""

    det_id: int
    bbox: tuple[float, float, float, float]
    mask: np.ndarray  # (H, W) bool
    confidence: float
    descriptor: np.ndarray | None = None  # (D,) float64, unit norm

    def validate(self, cam: CameraModel) -> None:
        x0, y0, x1, y1 = self.bbox
        if not (0 <= x0 < x1 <= cam.width and 0 <= y0 < y1 <= cam.height):
            raise InvalidBundle(
                f"detection {self.det_id}: bbox {self.bbox} outside canvas"
            )
        if self.mask.shape != (cam.height, cam.width):
            raise DimMismatch(
                f"detection {self.det_id}: mask shape {self.mask.shape} "
                f"!= camera {cam.height}x{cam.width}"
            )
        if not (0.0 <= self.confidence <= 1.0):
            raise InvalidBundle(
                f"detection {self.det_id}: confidence {self.confidence} not in [0,1]"
            )
        if self.descriptor is not None:
            if not np.all(np.isfinite(self.descriptor)):
                raise InvalidBundle(
                    f"detection {self.det_id}: non-finite descriptor"
                )
            norm = float(np.linalg.norm(self.descriptor))
            if abs(norm - 1.0) > DESCRIPTOR_NORM_TOL:
                raise InvalidBundle(
                    f"detection {self.det_id}: descriptor norm {norm} != 1"
                )


@dataclass(frozen=True)
class FrameRecord:
    """One posed RGB-D frame with its detections."""

    frame_id: int
    pose: Pose
    depth: np.ndarray  # (H, W) float32, meters; 0.0 = invalid
    detections: tuple[Detection2D, ...]
    rgb_path: str | None = None
    feature_map: np.ndarray | None = None  # (H', W', D) float32

    def validate(self, cam: CameraModel) -> None:
        self.pose.validate()
        if self.depth.shape != (cam.height, cam.width):
            raise DimMismatch(
                f"frame {self.frame_id}: depth shape {self.depth.shape} "
                f"!= camera {cam.height}x{cam.width}"
            )
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise InvalidBundle(
                f"frame {self.frame_id}: depth must be finite and >= 0"
            )
        if self.feature_map is not None and (
            self.feature_map.ndim != 3 or not np.all(np.isfinite(self.feature_map))
        ):
            raise InvalidBundle(f"frame {self.frame_id}: bad feature map")
        for det in self.detections:
            det.validate(cam)


@dataclass(frozen=True)
class ScenePointCloud:
    """Global scene points with optional per-point superpoint labels."""

    positions: np.ndarray  # (N, 3) float32
    superpoint_label: np.ndarray | None = None  # (N,) int64, -1 = unlabeled

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    def validate(self) -> None:
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InvalidBundle(
                f"cloud positions must be (N,3), got {self.positions.shape}"
            )
        if self.positions.shape[0] < 1:
            raise InvalidBundle("cloud must contain at least one point")
        if not np.all(np.isfinite(self.positions)):
            raise InvalidBundle("cloud positions must be finite")
        if self.superpoint_label is not None:
            if self.superpoint_label.shape != (self.positions.shape[0],):
                raise DimMismatch(
                    "superpoint labels must cover exactly the cloud points"
                )
            if np.any(self.superpoint_label < UNLABELED_SUPERPOINT):
                raise InvalidBundle("superpoint labels must be >= -1")


@dataclass(frozen=True)
class GroundTruthInstance:
    label: str
    point_indices: np.ndarray  # sorted unique int64


@dataclass(frozen=True)
class SceneBundle:
    """A fully-loaded scene: camera, frames, cloud, optional ground truth."""

    camera: CameraModel
    frames: tuple[FrameRecord, ...]
    cloud: ScenePointCloud
    ground_truth: tuple[GroundTruthInstance, ...] | None = None

    def validate(self) -> None:
        self.camera.validate()
        ids = [f.frame_id for f in self.frames]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise InvalidBundle("frame ids must be strictly increasing")
        for frame in self.frames:
            frame.validate(self.camera)
        self.cloud.validate()
        if self.ground_truth is not None:
            n = len(self.cloud)
            for inst in self.ground_truth:
                idx = inst.point_indices
                if idx.size and (idx.min() < 0 or idx.max() >= n):
                    raise InvalidBundle(
                        f"ground truth '{inst.label}' indexes outside the cloud"
                    )

    def frame_by_id(self, frame_id: int) -> FrameRecord:
        for frame in self.frames:
            if frame.frame_id == frame_id:
                return frame
        raise KeyError(f"no frame with id {frame_id}")
