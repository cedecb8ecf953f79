"""Similarity blending, assignment optimality/determinism, track updates."""

import itertools

import numpy as np
import pytest

from ot3d.errors import DimMismatch
from ot3d.lifting import FrameInstance
from ot3d.tracker import (
    Track,
    Tracker,
    TrackerConfig,
    associate,
    similarity,
    step,
    update_track,
)
from ot3d.voxels import voxelize


def _inst(points, descriptor, frame_id=0, det_id=0):
    return FrameInstance(
        frame_id=frame_id,
        det_id=det_id,
        points=np.asarray(points, dtype=np.float64),
        descriptor=np.asarray(descriptor, dtype=np.float64),
    )


def _track(points, descriptor, track_id=0, v=0.05):
    pts = np.asarray(points, dtype=np.float64)
    return Track(
        track_id=track_id,
        voxels=voxelize(pts, v),
        descriptor=np.asarray(descriptor, dtype=np.float64),
        points=pts,
        observations=[(0, 0)],
    )


E1 = np.array([1.0, 0.0, 0.0])
E2 = np.array([0.0, 1.0, 0.0])


# --- similarity ------------------------------------------------------------------


def test_similarity_identical_is_one():
    pts = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]
    track = _track(pts, E1)
    inst = _inst(pts, E1)
    for alpha in (0.0, 0.3, 0.5, 1.0):
        assert similarity(track, inst, alpha) == pytest.approx(1.0)


def test_similarity_blend_value():
    # cos = 0.8 via crafted descriptors; IoU = 0.4 via 2-shared-of-5 cells.
    d_track = np.array([1.0, 0.0])
    d_inst = np.array([0.8, 0.6])
    track = _track([[0.01, 0, 0], [0.06, 0, 0], [0.11, 0, 0]], d_track)
    inst = _inst([[0.01, 0, 0], [0.06, 0, 0], [0.16, 0, 0], [0.21, 0, 0]], d_inst)
    # track cells {0,1,2}, inst cells {0,1,3,4}: inter 2, union 5 -> 0.4
    assert similarity(track, inst, 0.5) == pytest.approx(0.5 * 0.8 + 0.5 * 0.4)


def test_similarity_dim_mismatch():
    track = _track([[0, 0, 0]], np.array([1.0, 0.0]))
    inst = _inst([[0, 0, 0]], np.array([1.0, 0.0, 0.0]))
    with pytest.raises(DimMismatch):
        similarity(track, inst, 0.5)


def test_similarity_monotone_and_range():
    rng = np.random.default_rng(3)
    alpha = 0.5
    # s is non-decreasing in cos at fixed IoU and bounded in [-alpha, 1].
    track = _track([[0.0, 0.0, 0.0]], E1)
    cosines = []
    for angle in np.linspace(0, np.pi, 7):
        desc = np.array([np.cos(angle), np.sin(angle), 0.0])
        s = similarity(track, _inst([[0.0, 0.0, 0.0]], desc), alpha)
        cosines.append(s)
        assert -alpha <= s <= 1.0 + 1e-12
    assert all(a >= b - 1e-12 for a, b in zip(cosines, cosines[1:]))


# --- associate --------------------------------------------------------------------


def _exhaustive_best(scores: np.ndarray) -> float:
    t, n = scores.shape
    best = -np.inf
    if t <= n:
        for cols in itertools.permutations(range(n), t):
            best = max(best, sum(scores[i, c] for i, c in enumerate(cols)))
    else:
        for rows in itertools.permutations(range(t), n):
            best = max(best, sum(scores[r, j] for j, r in enumerate(rows)))
    return best


def _exhaustive_lexmin_assignment(scores: np.ndarray) -> list[tuple[int, int]]:
    """All optimal complete assignments; pick lexicographically smallest."""
    t, n = scores.shape
    size = max(t, n)
    padded = np.full((size, size), -1e9)
    padded[:t, :n] = scores
    best_total = -np.inf
    best_vec = None
    for perm in itertools.permutations(range(size)):
        total = sum(padded[i, perm[i]] for i in range(size))
        if total > best_total + 1e-12 or (
            total > best_total - 1e-12 and (best_vec is None or list(perm) < best_vec)
        ):
            if total > best_total + 1e-12:
                best_vec = list(perm)
                best_total = total
            elif list(perm) < best_vec:
                best_vec = list(perm)
    return [(i, best_vec[i]) for i in range(t) if best_vec[i] < n]


def test_associate_single_match():
    matches, unmatched = associate(np.array([[0.9]]), 0.4)
    assert matches == [(0, 0)] and unmatched == []


def test_associate_prefers_total_score():
    scores = np.array([[0.9, 0.85], [0.8, 0.1]])
    assert _exhaustive_best(scores) == pytest.approx(1.65)
    matches, unmatched = associate(scores, 0.4)
    assert sorted(matches) == [(0, 1), (1, 0)]
    assert unmatched == []


def test_associate_below_threshold():
    matches, unmatched = associate(np.array([[0.3]]), 0.4)
    assert matches == [] and unmatched == [0]


def test_associate_threshold_inclusive():
    matches, _ = associate(np.array([[0.4]]), 0.4)
    assert matches == [(0, 0)]


def test_associate_optimality_random():
    rng = np.random.default_rng(17)
    for _ in range(200):
        t = int(rng.integers(1, 8))
        n = int(rng.integers(1, 8))
        scores = rng.uniform(-1, 1, size=(t, n))
        matches, _ = associate(scores, -np.inf)
        total = sum(scores[i, j] for i, j in matches)
        assert abs(total - _exhaustive_best(scores)) <= 1e-9


def test_associate_lexicographic_ties():
    cases = [
        np.ones((2, 2)),
        np.ones((3, 3)),
        np.array([[0.5, 0.5, 0.1], [0.5, 0.5, 0.1]]),
        np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]),
        np.array([[0.2, 0.7], [0.7, 0.2]]),
    ]
    rng = np.random.default_rng(23)
    for _ in range(40):  # quantized randoms force frequent ties
        t = int(rng.integers(1, 6))
        n = int(rng.integers(1, 6))
        cases.append(np.round(rng.uniform(0, 1, size=(t, n)) * 4) / 4)
    for scores in cases:
        matches, _ = associate(scores, -np.inf)
        assert sorted(matches) == sorted(_exhaustive_lexmin_assignment(scores))


def test_associate_threshold_monotone():
    rng = np.random.default_rng(29)
    for _ in range(50):
        scores = rng.uniform(0, 1, size=(rng.integers(1, 6), rng.integers(1, 6)))
        taus = sorted(rng.uniform(0, 1, size=2))
        low, _ = associate(scores, taus[0])
        high, _ = associate(scores, taus[1])
        assert len(high) <= len(low)


# --- update_track -----------------------------------------------------------------


def test_update_fixed_point():
    track = _track([[0, 0, 0]], E1)
    update_track(track, _inst([[0, 0, 0]], E1, frame_id=1), beta_ema=0.9)
    assert np.allclose(track.descriptor, E1)
    assert track.length == 2


def test_update_beta_zero_adopts_instance():
    track = _track([[0, 0, 0]], E1)
    update_track(track, _inst([[0, 0, 0]], E2, frame_id=1), beta_ema=0.0)
    assert np.allclose(track.descriptor, E2)


def test_update_blend_closed_form():
    track = _track([[0, 0, 0]], E1)
    update_track(track, _inst([[0, 0, 0]], E2, frame_id=1), beta_ema=0.9)
    expected = np.array([0.9, 0.1, 0.0]) / np.sqrt(0.82)
    assert np.allclose(track.descriptor, expected)


def test_update_zero_blend_keeps_old_descriptor():
    track = _track([[0, 0, 0]], E1)
    update_track(track, _inst([[0, 0, 0]], -E1, frame_id=1), beta_ema=0.5)
    assert np.allclose(track.descriptor, E1)
    assert track.length == 2  # geometry still folded in


def test_update_maintains_voxel_invariant():
    rng = np.random.default_rng(31)
    track = _track(rng.uniform(size=(20, 3)), E1)
    for k in range(1, 4):
        update_track(
            track, _inst(rng.uniform(size=(15, 3)), E1, frame_id=k), beta_ema=0.9
        )
    assert track.voxels.cells == voxelize(track.points, 0.05).cells
    assert track.length == len(track.observations) == 4


# --- step -------------------------------------------------------------------------


def test_step_bootstrap_three_tracks():
    cfg = TrackerConfig()
    instances = [
        _inst([[i, 0, 0]], E1, frame_id=0, det_id=i) for i in range(3)
    ]
    tracks = step([], instances, cfg)
    assert [t.track_id for t in tracks] == [0, 1, 2]
    assert all(t.length == 1 for t in tracks)


def test_step_perfect_match_extends_track():
    cfg = TrackerConfig()
    pts = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]
    tracks = step([], [_inst(pts, E1, frame_id=0)], cfg)
    tracks = step(tracks, [_inst(pts, E1, frame_id=1)], cfg)
    assert len(tracks) == 1
    assert tracks[0].length == 2


def test_step_geometry_disambiguates_identical_descriptors():
    # Two spatially separated instances sharing one descriptor: assignment
    # must give each the geometrically overlapping track (2x2 exhaustive
    # check: diagonal total 2*(0.5+0.5*IoU) beats the crossed total).
    cfg = TrackerConfig()
    pts_a = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]]
    pts_b = [[5.0, 0.0, 0.0], [5.1, 0.0, 0.0]]
    tracks = step([], [_inst(pts_a, E1, 0, 0), _inst(pts_b, E1, 0, 1)], cfg)
    tracks = step(tracks, [_inst(pts_a, E1, 1, 0), _inst(pts_b, E1, 1, 1)], cfg)
    assert len(tracks) == 2
    assert tracks[0].observations == [(0, 0), (1, 0)]
    assert tracks[1].observations == [(0, 1), (1, 1)]


def test_step_determinism():
    rng = np.random.default_rng(41)
    frames = []
    for f in range(5):
        frames.append(
            [
                _inst(
                    rng.uniform(size=(10, 3)),
                    rng.normal(size=4) / np.linalg.norm(rng.normal(size=4) + 1e-9),
                    frame_id=f,
                    det_id=d,
                )
                for d in range(3)
            ]
        )

    def run():
        tracker = Tracker(TrackerConfig())
        for batch in frames:
            tracker.step(batch)
        return [
            (t.track_id, tuple(t.observations), t.points.shape[0])
            for t in tracker.tracks
        ]

    assert run() == run()


def test_tracks_never_deleted():
    cfg = TrackerConfig()
    tracks = step([], [_inst([[0, 0, 0]], E1, 0, 0)], cfg)
    tracks = step(tracks, [_inst([[9, 9, 9]], E2, 1, 0)], cfg)
    assert len(tracks) == 2  # old track stays although unmatched
