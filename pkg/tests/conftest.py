"""Shared test helpers: random rigid poses, tiny bundles, brute oracles."""

from __future__ import annotations

import numpy as np
import pytest

from ot3d.scene.types import (
    CameraModel,
    Detection2D,
    FrameRecord,
    GroundTruthInstance,
    Pose,
    SceneBundle,
    ScenePointCloud,
)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish proper rotation via quaternion normalization."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def make_pose(rotation: np.ndarray | None = None, translation=(0.0, 0.0, 0.0)) -> Pose:
    m = np.eye(4)
    if rotation is not None:
        m[:3, :3] = rotation
    m[:3, 3] = translation
    return Pose(matrix=m)


def random_pose(rng: np.random.Generator, span: float = 2.0) -> Pose:
    return make_pose(random_rotation(rng), rng.uniform(-span, span, size=3))


@pytest.fixture
def small_camera() -> CameraModel:
    return CameraModel(fx=50.0, fy=50.0, cx=15.5, cy=11.5, width=32, height=24)


def full_mask(cam: CameraModel, pixels) -> np.ndarray:
    mask = np.zeros((cam.height, cam.width), dtype=bool)
    for u, v in pixels:
        mask[v, u] = True
    return mask


def minimal_bundle(cam: CameraModel | None = None) -> SceneBundle:
    """One identity-pose frame, 4x4 depth of 1 m, one 4-pixel detection."""
    if cam is None:
        cam = CameraModel(fx=10.0, fy=10.0, cx=1.5, cy=1.5, width=4, height=4)
    depth = np.ones((cam.height, cam.width), dtype=np.float32)
    mask = np.zeros((cam.height, cam.width), dtype=bool)
    mask[1:3, 1:3] = True
    det = Detection2D(
        det_id=0,
        bbox=(1.0, 1.0, 3.0, 3.0),
        mask=mask,
        confidence=0.9,
        descriptor=np.array([1.0, 0.0]),
    )
    frame = FrameRecord(
        frame_id=0,
        pose=make_pose(),
        depth=depth,
        detections=(det,),
    )
    cloud = ScenePointCloud(
        positions=np.array([[0.0, 0.0, 1.0], [0.1, 0.0, 1.0]], dtype=np.float32),
        superpoint_label=np.array([0, -1], dtype=np.int64),
    )
    gt = (GroundTruthInstance(label="block", point_indices=np.array([0, 1])),)
    return SceneBundle(camera=cam, frames=(frame,), cloud=cloud, ground_truth=gt)
