"""Track-to-scene proposal construction and the three refinement stages.

A track's accumulated points are matched onto the global cloud by gated
nearest-neighbor association, optionally expanded by a metric radius,
filtered by multi-view mask-consistency voting, recomposed from whole
superpoints when labels are available, and finally deduplicated by
length-ranked voxel-IoU merging.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, EmptyProposal
from .scene.types import SceneBundle, ScenePointCloud, UNLABELED_SUPERPOINT
from .spatial import UniformGrid
from .tracker import Track
from .voxels import voxel_iou, voxelize

STAGES = ("raw", "expanded", "consistency", "geometry", "merged")


@dataclass
class RefineConfig:
    """Refinement thresholds; defaults follow the reference operating point."""

    r_assoc: float = 0.05
    tau_exp: float = 0.03
    tau_vis: float = 0.1
    gamma: float = 0.3
    tau_merge: float = 0.6
    occlusion_check: bool = False
    delta_occ: float = 0.05

    def validate(self) -> None:
        if not self.r_assoc > 0:
            raise ConfigError(f"r_assoc must be positive, got {self.r_assoc}")
        if self.tau_exp < 0:
            raise ConfigError(f"tau_exp must be >= 0, got {self.tau_exp}")
        for name in ("tau_vis", "gamma", "tau_merge"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0,1], got {v}")
        if not self.delta_occ > 0:
            raise ConfigError(f"delta_occ must be positive, got {self.delta_occ}")

    def grid_cell_size(self) -> float:
        return max(self.r_assoc, self.tau_exp)


@dataclass
class Proposal:
    """A scene-cloud index set moving through the refinement stages."""

    track_id: int
    stage: str
    point_indices: np.ndarray  # sorted unique int64
    objectness: int
    merged_from: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")


@dataclass(frozen=True)
class ConsistencyScore:
    """Per-point multi-view voting result."""

    scores: np.ndarray  # (K,) float64 in [0,1]
    visible_views: np.ndarray  # (K,) int64


def round_to_pixel(coords: np.ndarray) -> np.ndarray:
    """Nearest pixel center, half-up (pixel centers sit at integers)."""
    return np.floor(np.asarray(coords) + 0.5).astype(np.int64)


def associate_to_scene(
    track: Track,
    cloud: ScenePointCloud,
    r_assoc: float,
    grid: UniformGrid | None = None,
) -> Proposal:
    """Map each track point to its nearest scene point within r_assoc.

    Raises EmptyProposal when no track point finds a neighbor inside the
    gate; exact-distance ties resolve to the lowest scene index.
    """
    if grid is None:
        grid = UniformGrid(cloud.positions, r_assoc)
    idx, _ = grid.query_nearest(track.points, r_assoc)
    hits = np.unique(idx[idx >= 0])
    if hits.size == 0:
        raise EmptyProposal(
            f"track {track.track_id}: no scene point within {r_assoc} m"
        )
    return Proposal(
        track_id=track.track_id,
        stage="raw",
        point_indices=hits,
        objectness=track.length,
    )


def expand(
    prop: Proposal,
    cloud: ScenePointCloud,
    tau_exp: float,
    grid: UniformGrid | None = None,
) -> Proposal:
    """Add scene points within tau_exp of any member; tau_exp=0 is identity."""
    _expect_stage(prop, "raw")
    if tau_exp == 0.0:
        return replace(prop, stage="expanded")
    if grid is None:
        grid = UniformGrid(cloud.positions, tau_exp)
    members = cloud.positions[prop.point_indices].astype(np.float64)
    near = grid.query_radius_union(members, tau_exp)
    merged = np.union1d(prop.point_indices, near)
    return replace(prop, stage="expanded", point_indices=merged)


def observation_masks(
    track: Track, bundle: SceneBundle
) -> list[tuple[object, np.ndarray, np.ndarray]]:
    """(pose, mask, depth) of the track's matched detection per observed frame."""
    out = []
    for frame_id, det_id in track.observations:
        frame = bundle.frame_by_id(frame_id)
        det = next(d for d in frame.detections if d.det_id == det_id)
        out.append((frame.pose, det.mask, frame.depth))
    return out


def consistency_scores(
    prop: Proposal,
    bundle: SceneBundle,
    track: Track,
    cfg: RefineConfig,
) -> ConsistencyScore:
    """Average in-mask vote per point over the track's observation frames.

    A view counts as visible for a point when the camera-space depth is
    positive and the continuous projection lands inside the canvas
    [0,width) x [0,height). With occlusion checking enabled, the depth
    raster at the rounded pixel must also be valid and agree with the
    point's depth within delta_occ. Points visible in no view score 0.
    """
    _expect_stage(prop, "expanded")
    cam = bundle.camera
    points = bundle.cloud.positions[prop.point_indices].astype(np.float64)
    k = points.shape[0]
    votes = np.zeros(k, dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    for pose, mask, depth in observation_masks(track, bundle):
        pts_cam = pose.inverse_transform(points)
        z = pts_cam[:, 2]
        front = z > 0
        uv = np.zeros((k, 2))
        uv[front] = cam.project(pts_cam[front])
        u, v = uv[:, 0], uv[:, 1]
        visible = front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        px = round_to_pixel(u)
        py = round_to_pixel(v)
        inb = (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
        if cfg.occlusion_check:
            ok = visible & inb
            raster = np.zeros(k)
            raster[ok] = depth[py[ok], px[ok]]
            unoccluded = ok & (raster > 0) & (np.abs(raster - z) <= cfg.delta_occ)
            visible = unoccluded
        in_mask = np.zeros(k, dtype=bool)
        sel = visible & inb
        in_mask[sel] = mask[py[sel], px[sel]]
        counts += visible
        votes += visible & in_mask
    scores = np.zeros(k, dtype=np.float64)
    seen = counts > 0
    scores[seen] = votes[seen] / counts[seen]
    return ConsistencyScore(scores=scores, visible_views=counts)


def filter_consistency(
    prop: Proposal, scores: ConsistencyScore, tau_vis: float
) -> Proposal:
    """Keep exactly the points with score >= tau_vis (inclusive)."""
    _expect_stage(prop, "expanded")
    keep = scores.scores >= tau_vis
    if not np.any(keep):
        raise EmptyProposal(
            f"track {prop.track_id}: no point reaches tau_vis={tau_vis}"
        )
    return replace(
        prop, stage="consistency", point_indices=prop.point_indices[keep]
    )


def geometry_refine(
    prop: Proposal, cloud: ScenePointCloud, gamma: float
) -> Proposal:
    """Recompose the proposal from whole superpoints.

    A superpoint is included iff the fraction of its points inside the
    proposal is >= gamma; member points of non-qualifying superpoints are
    dropped. Unlabeled points act as singleton superpoints and are kept
    iff they are already members. Skipped (stage advances unchanged) when
    the cloud carries no superpoint labels.
    """
    _expect_stage(prop, "consistency")
    labels = cloud.superpoint_label
    if labels is None:
        return replace(prop, stage="geometry")
    n = len(cloud)
    member = np.zeros(n, dtype=bool)
    member[prop.point_indices] = True
    labeled = labels != UNLABELED_SUPERPOINT
    keep = np.zeros(n, dtype=bool)
    if np.any(labeled):
        lbl = labels[labeled]
        sizes = np.bincount(lbl)
        inside = np.bincount(lbl[member[labeled]], minlength=sizes.size)
        present = sizes > 0
        qualifies = np.zeros(sizes.size, dtype=bool)
        qualifies[present] = inside[present] / sizes[present] >= gamma
        keep[labeled] = qualifies[lbl]
    keep[~labeled & member] = True
    indices = np.flatnonzero(keep).astype(np.int64)
    if indices.size == 0:
        raise EmptyProposal(f"track {prop.track_id}: no superpoint reaches gamma")
    return replace(prop, stage="geometry", point_indices=indices)


def merge_proposals(
    props: list[Proposal],
    tau_merge: float,
    voxel_size: float,
    cloud: ScenePointCloud,
) -> list[Proposal]:
    """Length-ranked greedy merging of overlapping proposals.

    Proposals are visited by objectness descending (ties: lower track id);
    a candidate whose voxel IoU with an already-retained proposal reaches
    tau_merge is absorbed into the earliest such proposal. Passes repeat
    until stable, so the output is idempotent under re-merging and
    pairwise below tau_merge.
    """
    stages = {p.stage for p in props}
    if len(stages) > 1:
        raise ValueError(f"proposals at mixed stages: {sorted(stages)}")
    items = [
        Proposal(
            track_id=p.track_id,
            stage="merged",
            point_indices=np.array(p.point_indices, dtype=np.int64),
            objectness=p.objectness,
            merged_from=list(p.merged_from),
        )
        for p in sorted(props, key=lambda p: (-p.objectness, p.track_id))
    ]
    positions = cloud.positions
    changed = True
    while changed:
        changed = False
        retained: list[Proposal] = []
        vox: list = []
        for cand in items:
            cvox = voxelize(positions[cand.point_indices], voxel_size)
            absorbed = False
            for host, hvox in zip(retained, vox):
                if voxel_iou(cvox, hvox) >= tau_merge:
                    host.point_indices = np.union1d(
                        host.point_indices, cand.point_indices
                    )
                    host.merged_from.extend([cand.track_id, *cand.merged_from])
                    hvox.union_into(cvox)
                    absorbed = True
                    changed = True
                    break
            if not absorbed:
                retained.append(cand)
                vox.append(cvox)
        items = retained
    return items


def _expect_stage(prop: Proposal, stage: str) -> None:
    if prop.stage != stage:
        raise ValueError(
            f"proposal for track {prop.track_id} is at stage "
            f"'{prop.stage}', expected '{stage}'"
        )
