"""Online visual-spatial association of lifted instances into tracks.

Each frame, a score matrix blends descriptor cosine and occupancy voxel
IoU per track/instance pair; a maximum-score assignment is solved, pairs
at or above the match threshold update their track (EMA descriptor, voxel
union, point accumulation), and leftover instances seed new tracks.
Tracks never terminate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DimMismatch, ZeroVector
from .lifting import FrameInstance
from .voxels import VoxelSet, voxel_iou, voxelize

# Every complete assignment of the padded square matrix contains exactly
# |T - N| padded pairs, so the padding value is a constant offset to every
# total and cannot change which real pairs win. Padding with 0 instead of a
# huge negative keeps sums small enough for the 1e-9 optimality tolerance.
PAD_VALUE = 0.0
_OPT_TOL = 1e-9


@dataclass
class TrackerConfig:
    """Association parameters; defaults follow the operating point used
    throughout evaluation (appearance/occupancy balance 0.5, match gate 0.4)."""

    alpha: float = 0.5
    tau_match: float = 0.4
    beta_ema: float = 0.9
    voxel_size: float = 0.05

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0,1], got {self.alpha}")
        if not 0.0 <= self.beta_ema <= 1.0:
            raise ConfigError(f"beta_ema must be in [0,1], got {self.beta_ema}")
        if not np.isfinite(self.tau_match):
            raise ConfigError("tau_match must be finite")
        if not self.voxel_size > 0:
            raise ConfigError(f"voxel_size must be positive, got {self.voxel_size}")


@dataclass
class Track:
    """Accumulated state for one tracked instance."""

    track_id: int
    voxels: VoxelSet
    descriptor: np.ndarray  # (D,) float64, unit norm (EMA state)
    points: np.ndarray  # (M, 3) float64, all matched world points
    observations: list[tuple[int, int]] = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.observations)


def similarity(track: Track, inst: FrameInstance, alpha: float) -> float:
    """Blended score: alpha * cosine + (1 - alpha) * voxel IoU.

    Cosine is the raw dot product of the unit descriptors (not clamped),
    so the result lies in [-alpha, 1].
    """
    if track.descriptor.shape != inst.descriptor.shape:
        raise DimMismatch(
            f"descriptor dims differ: {track.descriptor.shape} vs "
            f"{inst.descriptor.shape}"
        )
    cos = float(np.dot(track.descriptor, inst.descriptor))
    iou = voxel_iou(voxelize(inst.points, track.voxels.voxel_size), track.voxels)
    return alpha * cos + (1.0 - alpha) * iou


def associate(
    score_matrix: np.ndarray, tau_match: float
) -> tuple[list[tuple[int, int]], list[int]]:
    """Optimal one-to-one assignment, thresholded into accepted matches.

    The rectangular matrix is padded square; padded pairs are discarded
    before thresholding. Accepted matches have score >= tau_match
    (inclusive); every other instance index is returned as unmatched.
    Among equally optimal assignments the lexicographically smallest
    assignment vector is chosen, which makes tie-breaking deterministic.
    """
    scores = np.asarray(score_matrix, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError(f"score matrix must be 2-D, got shape {scores.shape}")
    n_tracks, n_inst = scores.shape
    if n_tracks == 0 or n_inst == 0:
        return [], list(range(n_inst))
    if not np.all(np.isfinite(scores)):
        raise ValueError("score matrix must be finite")
    n = max(n_tracks, n_inst)
    padded = np.full((n, n), PAD_VALUE)
    padded[:n_tracks, :n_inst] = scores
    cols = _lexmin_optimal_assignment(padded)
    matches = [
        (i, int(cols[i]))
        for i in range(n_tracks)
        if cols[i] < n_inst and scores[i, cols[i]] >= tau_match
    ]
    taken = {j for _, j in matches}
    unmatched = [j for j in range(n_inst) if j not in taken]
    return matches, unmatched


def _solve_max(matrix: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(matrix, maximize=True)
    return float(matrix[rows, cols].sum())


def _lexmin_optimal_assignment(padded: np.ndarray) -> np.ndarray:
    """Column per row of the lexicographically smallest optimal assignment."""
    n = padded.shape[0]
    best = _solve_max(padded)
    avail = list(range(n))
    result = np.empty(n, dtype=np.int64)
    prefix = 0.0
    for i in range(n):
        rest_rows = padded[i + 1 :]
        # Upper bound on any completion: optimum over all still-open columns.
        ub = _solve_max(rest_rows[:, avail]) if i + 1 < n else 0.0
        for pos, j in enumerate(avail):
            cand = prefix + padded[i, j]
            if cand + ub < best - _OPT_TOL:
                continue
            if i + 1 < n:
                rest = _solve_max(rest_rows[:, avail[:pos] + avail[pos + 1 :]])
            else:
                rest = 0.0
            if cand + rest >= best - _OPT_TOL:
                result[i] = j
                prefix = cand
                avail.pop(pos)
                break
        else:  # pragma: no cover - optimal column always exists
            raise RuntimeError("assignment canonicalization failed")
    return result


def update_track(track: Track, inst: FrameInstance, beta_ema: float) -> Track:
    """Fold an accepted match into the track state.

    The descriptor becomes normalize(beta * f_T + (1-beta) * f_I); when the
    blend is the zero vector (antipodal descriptors at beta = 0.5) the old
    descriptor is kept, since the conflict is irrecoverable.
    """
    blend = beta_ema * track.descriptor + (1.0 - beta_ema) * inst.descriptor
    try:
        track.descriptor = _normalized(blend)
    except ZeroVector:
        pass
    track.voxels.union_into(voxelize(inst.points, track.voxels.voxel_size))
    track.points = np.concatenate([track.points, inst.points], axis=0)
    track.observations.append((inst.frame_id, inst.det_id))
    return track


def step(
    tracks: list[Track], frame_instances: list[FrameInstance], cfg: TrackerConfig
) -> list[Track]:
    """Process one frame: associate, update matches, seed new tracks.

    Mutates and returns `tracks`. Frames must be presented in temporal
    order; new track ids continue from the highest existing id.
    """
    if not frame_instances:
        return tracks
    if tracks:
        scores = np.array(
            [
                [similarity(t, inst, cfg.alpha) for inst in frame_instances]
                for t in tracks
            ]
        )
        matches, unmatched = associate(scores, cfg.tau_match)
        for ti, ii in matches:
            update_track(tracks[ti], frame_instances[ii], cfg.beta_ema)
    else:
        unmatched = list(range(len(frame_instances)))
    next_id = max((t.track_id for t in tracks), default=-1) + 1
    for ii in unmatched:
        tracks.append(_new_track(next_id, frame_instances[ii], cfg.voxel_size))
        next_id += 1
    return tracks


class Tracker:
    """Stateful wrapper running `step` over a frame sequence."""

    def __init__(self, cfg: TrackerConfig):
        cfg.validate()
        self.cfg = cfg
        self.tracks: list[Track] = []

    def step(self, frame_instances: list[FrameInstance]) -> list[Track]:
        return step(self.tracks, frame_instances, self.cfg)


def _new_track(track_id: int, inst: FrameInstance, voxel_size: float) -> Track:
    return Track(
        track_id=track_id,
        voxels=voxelize(inst.points, voxel_size),
        descriptor=_normalized(inst.descriptor.astype(np.float64)),
        points=np.array(inst.points, dtype=np.float64),
        observations=[(inst.frame_id, inst.det_id)],
    )


def _normalized(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise ZeroVector("cannot normalize a zero vector")
    return v / norm
