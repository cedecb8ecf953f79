"""Lifts 2-D detections into denoised 3-D world-space instances.

Each detection's mask pixels are back-projected through the depth map and
camera pose, density-filtered with DBSCAN (largest cluster wins), and
paired with a unit-norm appearance descriptor (precomputed or pooled from
a dense feature grid).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllNoise, EmptyLift, NoFeatureSupport
from .scene.types import CameraModel, Detection2D, FrameRecord, Pose
from .spatial import UniformGrid

DEFAULT_DEPTH_RANGE = (0.05, 20.0)
DEFAULT_DBSCAN_EPS = 0.08
DEFAULT_DBSCAN_MIN_PTS = 10
NOISE = -1


@dataclass(frozen=True)
class FrameInstance:
    """A lifted, denoised per-frame 3-D instance."""

    frame_id: int
    det_id: int
    points: np.ndarray  # (M, 3) float64, world coordinates
    descriptor: np.ndarray  # (D,) float64, unit norm


def backproject_pixels(
    us: np.ndarray,
    vs: np.ndarray,
    depths: np.ndarray,
    cam: CameraModel,
    pose: Pose,
) -> np.ndarray:
    """Back-project pixel centers (u, v) with depths to world points."""
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    d = np.asarray(depths, dtype=np.float64)
    x = (us - cam.cx) * d / cam.fx
    y = (vs - cam.cy) * d / cam.fy
    return pose.transform(np.stack([x, y, d], axis=1))


def backproject_mask(
    frame: FrameRecord,
    det: Detection2D,
    cam: CameraModel,
    depth_range: tuple[float, float] = DEFAULT_DEPTH_RANGE,
) -> np.ndarray:
    """World points for every mask pixel whose depth is valid and in range.

    Raises EmptyLift when no pixel survives, which signals a degenerate
    detection to be dropped upstream.
    """
    d_min, d_max = depth_range
    vs, us = np.nonzero(det.mask)
    d = frame.depth[vs, us].astype(np.float64)
    keep = (d > 0) & (d >= d_min) & (d <= d_max)
    if not np.any(keep):
        raise EmptyLift(
            f"frame {frame.frame_id} det {det.det_id}: no pixel in depth range"
        )
    return backproject_pixels(us[keep], vs[keep], d[keep], cam, frame.pose)


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density-based clustering; returns one label per point, noise = -1.

    Core points count themselves among their eps-neighbors (inclusive
    radius). Clusters are grown in point-scan order, so a border point
    reachable from several clusters joins the lowest cluster id.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ValueError(f"min_pts must be >= 1, got {min_pts}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    m = pts.shape[0]
    labels = np.full(m, NOISE, dtype=np.int64)
    if m == 0:
        return labels
    grid = UniformGrid(pts, eps)
    indptr, nbrs = grid.neighbors_csr(pts, eps)
    counts = np.diff(indptr)
    core = counts >= min_pts

    cluster = 0
    for seed in range(m):
        if labels[seed] != NOISE or not core[seed]:
            continue
        labels[seed] = cluster
        queue = [seed]
        while queue:
            p = queue.pop()
            seg = nbrs[indptr[p] : indptr[p + 1]]
            fresh = seg[labels[seg] == NOISE]
            labels[fresh] = cluster
            queue.extend(fresh[core[fresh]].tolist())
        cluster += 1
    return labels


def denoise_instance(
    points: np.ndarray,
    eps: float = DEFAULT_DBSCAN_EPS,
    min_pts: int = DEFAULT_DBSCAN_MIN_PTS,
) -> np.ndarray:
    """Keep only the largest DBSCAN cluster (ties: lowest cluster id)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    labels = dbscan(pts, eps, min_pts)
    clustered = labels[labels != NOISE]
    if clustered.size == 0:
        raise AllNoise(f"no cluster among {pts.shape[0]} points")
    sizes = np.bincount(clustered)
    best = int(np.argmax(sizes))  # argmax returns the first (lowest) max
    return pts[labels == best]


def pool_descriptor(
    feature_map: np.ndarray, det: Detection2D, cam: CameraModel
) -> np.ndarray:
    """Mask-averaged descriptor from a dense H'xW'xD feature grid.

    Feature cell (r, c) has center ((c+0.5)*width/W', (r+0.5)*height/H')
    in image coordinates; a center belongs to the pixel obtained by
    flooring. Falls back to bbox containment when no center lies inside
    the mask, and raises NoFeatureSupport when the bbox also covers none.
    """
    hp, wp, _ = feature_map.shape
    sx = cam.width / wp
    sy = cam.height / hp
    cols, rows = np.meshgrid(np.arange(wp), np.arange(hp))
    x = (cols.ravel() + 0.5) * sx
    y = (rows.ravel() + 0.5) * sy
    px = np.floor(x).astype(np.int64)
    py = np.floor(y).astype(np.int64)
    inb = (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
    in_mask = np.zeros(x.shape, dtype=bool)
    in_mask[inb] = det.mask[py[inb], px[inb]]
    selected = in_mask
    if not np.any(selected):
        x0, y0, x1, y1 = det.bbox
        selected = (x >= x0) & (x < x1) & (y >= y0) & (y < y1)
    if not np.any(selected):
        raise NoFeatureSupport(
            f"det {det.det_id}: no feature cell under mask or bbox"
        )
    cells = feature_map.reshape(-1, feature_map.shape[2])[selected]
    mean = cells.astype(np.float64).mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        raise NoFeatureSupport(f"det {det.det_id}: pooled feature is zero")
    return mean / norm


def lift_detection(
    frame: FrameRecord,
    det: Detection2D,
    cam: CameraModel,
    depth_range: tuple[float, float] = DEFAULT_DEPTH_RANGE,
    eps: float = DEFAULT_DBSCAN_EPS,
    min_pts: int = DEFAULT_DBSCAN_MIN_PTS,
) -> FrameInstance:
    """Full per-detection lift: back-project, denoise, resolve descriptor."""
    raw = backproject_mask(frame, det, cam, depth_range)
    clean = denoise_instance(raw, eps, min_pts)
    if det.descriptor is not None:
        descriptor = det.descriptor.astype(np.float64)
    elif frame.feature_map is not None:
        descriptor = pool_descriptor(frame.feature_map, det, cam)
    else:
        raise NoFeatureSupport(
            f"frame {frame.frame_id} det {det.det_id}: no descriptor source"
        )
    return FrameInstance(
        frame_id=frame.frame_id,
        det_id=det.det_id,
        points=clean,
        descriptor=descriptor,
    )
