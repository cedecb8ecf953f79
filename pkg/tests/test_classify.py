"""View ranking, job emission, answer aggregation, backends, wire protocol."""

import json

import numpy as np
import pytest

from conftest import make_pose
from ot3d.classify import (
    ClassificationJob,
    DescriptorBackend,
    ExternalBackend,
    JobAnswer,
    JobView,
    OracleBackend,
    aggregate_answers,
    emit_jobs,
    rank_views,
    read_answers,
    validate_protocol,
    write_jobs,
)
from ot3d.errors import NoVisibleView, ProtocolError
from ot3d.refine import Proposal
from ot3d.scene.types import (
    CameraModel,
    FrameRecord,
    GroundTruthInstance,
    SceneBundle,
    ScenePointCloud,
)

CAM = CameraModel(fx=40.0, fy=40.0, cx=15.5, cy=11.5, width=32, height=24)


def _bundle(poses, cloud_pts, gt=None, rgb=None):
    frames = tuple(
        FrameRecord(
            frame_id=i,
            pose=pose,
            depth=np.full((CAM.height, CAM.width), 3.0, dtype=np.float32),
            detections=(),
            rgb_path=None if rgb is None else rgb[i],
        )
        for i, pose in enumerate(poses)
    )
    cloud = ScenePointCloud(positions=np.asarray(cloud_pts, dtype=np.float32))
    return SceneBundle(camera=CAM, frames=frames, cloud=cloud, ground_truth=gt)


def _prop(indices, track_id=0, objectness=1):
    return Proposal(
        track_id=track_id,
        stage="merged",
        point_indices=np.asarray(sorted(indices), dtype=np.int64),
        objectness=objectness,
    )


def test_rank_primary_key_frustum_fraction():
    # Camera 0 (shifted left) sees all 4 points; camera 1 at identity only
    # sees the two near the axis.
    pts = [[-1.1, 0.0, 2.0], [-1.0, 0.0, 2.0], [0.0, 0.0, 2.0], [0.1, 0.0, 2.0]]
    poses = [make_pose(translation=(-0.5, 0.0, 0.0)), make_pose()]
    bundle = _bundle(poses, pts)
    ranking = rank_views(_prop(range(4)), bundle)
    assert ranking[0].frame_id == 0
    assert ranking[0].frustum_fraction == 1.0
    assert ranking[1].frustum_fraction == 0.5


def test_rank_tie_broken_by_projected_area():
    # Same fraction (1.0) from both views; the closer camera resolves the
    # grid onto more distinct pixels.
    pts = [[x * 0.025, y * 0.025, 2.0] for x in range(-3, 4) for y in range(-3, 4)]
    poses = [make_pose(translation=(0.0, 0.0, 1.0)), make_pose()]
    bundle = _bundle(poses, pts)
    ranking = rank_views(_prop(range(len(pts))), bundle)
    assert ranking[0].frame_id == 0  # 1 m away sees a bigger projection
    assert ranking[0].frustum_fraction == ranking[1].frustum_fraction == 1.0
    assert ranking[0].projected_area > ranking[1].projected_area


def test_rank_remaining_tie_by_frame_id():
    pts = [[0.0, 0.0, 2.0]]
    bundle = _bundle([make_pose(), make_pose()], pts)
    ranking = rank_views(_prop([0]), bundle)
    assert [v.frame_id for v in ranking] == [0, 1]


def test_rank_behind_all_cameras_raises():
    bundle = _bundle([make_pose()], [[0.0, 0.0, -5.0]])
    with pytest.raises(NoVisibleView):
        rank_views(_prop([0]), bundle)


def test_rank_fraction_matches_brute_force():
    rng = np.random.default_rng(5)
    from conftest import random_pose

    pts = rng.uniform(-2, 2, size=(40, 3))
    poses = [random_pose(rng, span=2.5) for _ in range(6)]
    bundle = _bundle(poses, pts)
    try:
        ranking = rank_views(_prop(range(40)), bundle)
    except NoVisibleView:
        return
    by_frame = {v.frame_id: v for v in ranking}
    d_min, d_max = 0.05, 20.0
    for i, pose in enumerate(poses):
        inside = 0
        for p in bundle.cloud.positions.astype(np.float64):
            hom = np.linalg.inv(pose.matrix) @ np.array([*p, 1.0])
            x, y, z = hom[:3]
            if z <= 0 or z < d_min or z > d_max:
                continue
            u = CAM.fx * x / z + CAM.cx
            v = CAM.fy * y / z + CAM.cy
            if 0 <= u < CAM.width and 0 <= v < CAM.height:
                inside += 1
        assert by_frame[i].frustum_fraction == pytest.approx(inside / 40, abs=0)
    fracs = [v.frustum_fraction for v in ranking]
    assert fracs == sorted(fracs, reverse=True)


# --- emit_jobs -------------------------------------------------------------------


def test_emit_top_k_truncation():
    pts = [[0.0, 0.0, 2.0]]
    poses = [make_pose(translation=(0, 0, -0.1 * i)) for i in range(5)]
    bundle = _bundle(poses, pts)
    jobs3 = emit_jobs([_prop([0])], bundle, ["chair"], None, 3)
    assert len(jobs3[0].views) == 3
    jobs1 = emit_jobs([_prop([0])], bundle, ["chair"], None, 1)
    assert len(jobs1[0].views) == 1


def test_emit_fewer_views_than_k():
    pts = [[0.0, 0.0, 2.0]]
    # Second camera faces away: only one usable view.
    away = make_pose(
        rotation=np.array([[1, 0, 0], [0, -1, 0], [0, 0, -1]], dtype=float)
    )
    bundle = _bundle([make_pose(), away], pts)
    jobs = emit_jobs([_prop([0])], bundle, ["chair"], None, 3)
    assert len(jobs[0].views) == 1


def test_emit_box_dilated_then_clamped():
    # 0.25 is exact in float32, so the projections are exact too.
    pts = [[0.0, 0.0, 2.0], [0.25, 0.25, 2.0]]
    bundle = _bundle([make_pose()], pts)
    jobs = emit_jobs([_prop([0, 1])], bundle, ["chair"], None, 1)
    x0, y0, x1, y1 = jobs[0].views[0].box
    # projections: (15.5, 11.5) and (20.5, 16.5); dilation 5 px
    assert (x0, y0) == (10.5, 6.5)
    assert (x1, y1) == (25.5, 21.5)
    assert 0 <= x0 < x1 <= CAM.width and 0 <= y0 < y1 <= CAM.height


def test_emit_box_never_outside_canvas():
    rng = np.random.default_rng(9)
    from conftest import random_pose

    for _ in range(20):
        pts = rng.uniform(-3, 3, size=(30, 3))
        poses = [random_pose(rng, span=3.0) for _ in range(4)]
        bundle = _bundle(poses, pts)
        jobs = emit_jobs([_prop(range(30))], bundle, None, "find it", 3)
        for job in jobs:
            for view in job.views:
                x0, y0, x1, y1 = view.box
                assert 0 <= x0 <= CAM.width and 0 <= x1 <= CAM.width
                assert 0 <= y0 <= CAM.height and 0 <= y1 <= CAM.height


def test_emit_skips_invisible_proposals():
    bundle = _bundle([make_pose()], [[0.0, 0.0, 2.0], [0.0, 0.0, -2.0]])
    jobs = emit_jobs(
        [_prop([0], track_id=0), _prop([1], track_id=1)],
        bundle,
        ["chair"],
        None,
        1,
    )
    assert [j.proposal_id for j in jobs] == [0]


# --- aggregation -----------------------------------------------------------------


def _job(n_views=3):
    return ClassificationJob(
        job_id=0,
        proposal_id=0,
        views=tuple(JobView(image=None, box=(0, 0, 1, 1)) for _ in range(n_views)),
        label_set=("chair", "table"),
    )


def test_aggregate_majority():
    out = aggregate_answers(
        _job(), JobAnswer(0, "chair", per_view=("chair", "chair", "table"))
    )
    assert out == ("chair", pytest.approx(2 / 3))


def test_aggregate_all_none_drops():
    out = aggregate_answers(
        _job(), JobAnswer(0, "none", per_view=("none", "none", "none"))
    )
    assert out is None


def test_aggregate_tie_takes_top_view():
    out = aggregate_answers(
        _job(2), JobAnswer(0, "chair", per_view=("chair", "table"))
    )
    assert out == ("chair", pytest.approx(0.5))


def test_aggregate_single_answer_passthrough():
    out = aggregate_answers(_job(), JobAnswer(0, "table", per_view=None))
    assert out == ("table", 1.0)


def test_aggregate_no_match_maps_to_none():
    assert aggregate_answers(_job(), JobAnswer(0, "NO MATCH")) is None


# --- oracle backend ----------------------------------------------------------------


def test_oracle_backend_labels_by_iou():
    gt = (
        GroundTruthInstance("chair", np.arange(0, 10)),
        GroundTruthInstance("table", np.arange(10, 20)),
    )
    bundle = _bundle([make_pose()], np.zeros((20, 3)), gt=gt)
    backend = OracleBackend(
        bundle=bundle,
        proposals={
            0: np.arange(0, 9),  # IoU 0.9 with chair
            1: np.arange(8, 12),  # IoU < 0.5 with both
        },
    )
    jobs = [
        ClassificationJob(0, 0, (JobView(None, (0, 0, 1, 1)),)),
        ClassificationJob(1, 1, (JobView(None, (0, 0, 1, 1)),)),
    ]
    answers = backend.answer(jobs)
    assert answers[0].label == "chair"
    assert answers[1].label == "none"


def test_descriptor_backend_argmax_with_floor():
    backend = DescriptorBackend(
        descriptors={0: np.array([1.0, 0.0]), 1: np.array([0.0, 1.0])},
        embeddings={
            "chair": np.array([0.96, 0.28]),
            "table": np.array([0.0, 1.0]),
        },
        floor=0.5,
    )
    jobs = [
        ClassificationJob(0, 0, (), label_set=("chair", "table")),
        ClassificationJob(1, 1, (), label_set=("chair",)),
    ]
    answers = backend.answer(jobs)
    assert answers[0].label == "chair"
    assert answers[1].label == "none"  # cos(e2, chair)=0.28 < floor


# --- wire protocol ----------------------------------------------------------------


def test_jobs_answers_round_trip(tmp_path):
    jobs = [
        ClassificationJob(
            0,
            7,
            (JobView("img.png", (1.0, 2.0, 3.0, 4.0)),),
            label_set=("chair",),
        ),
        ClassificationJob(1, 8, (JobView(None, (0.0, 0.0, 5.0, 5.0)),), task="sit"),
    ]
    write_jobs(jobs, tmp_path / "jobs.jsonl")
    lines = (tmp_path / "jobs.jsonl").read_text().strip().split("\n")
    assert len(lines) == 2
    first = json.loads(lines[0])
    assert first["job_id"] == 0 and first["proposal_id"] == 7
    assert first["views"][0]["box"] == [1.0, 2.0, 3.0, 4.0]
    (tmp_path / "answers.jsonl").write_text(
        '{"job_id": 0, "label": "chair", "per_view": ["chair"]}\n'
        '{"job_id": 1, "label": "none", "per_view": null}\n'
    )
    answers = read_answers(tmp_path / "answers.jsonl")
    by_id = validate_protocol(jobs, answers)
    assert by_id[0].label == "chair"
    assert by_id[1].per_view is None


def test_protocol_unknown_job_id(tmp_path):
    jobs = [ClassificationJob(0, 0, ())]
    with pytest.raises(ProtocolError):
        validate_protocol(jobs, [JobAnswer(5, "chair")])


def test_protocol_duplicate_answer():
    jobs = [ClassificationJob(0, 0, ())]
    with pytest.raises(ProtocolError):
        validate_protocol(jobs, [JobAnswer(0, "a"), JobAnswer(0, "b")])


def test_protocol_missing_answer():
    jobs = [ClassificationJob(0, 0, ()), ClassificationJob(1, 1, ())]
    with pytest.raises(ProtocolError):
        validate_protocol(jobs, [JobAnswer(0, "a")])


def test_external_backend_round_trip(tmp_path):
    jobs = [ClassificationJob(0, 3, (JobView(None, (0, 0, 2, 2)),), task="open")]
    script = tmp_path / "echo_backend.py"
    script.write_text(
        "import json, sys\n"
        "jobs_path, answers_path = sys.argv[1], sys.argv[2]\n"
        "with open(jobs_path) as f, open(answers_path, 'w') as out:\n"
        "    for line in f:\n"
        "        job = json.loads(line)\n"
        "        out.write(json.dumps({'job_id': job['job_id'], 'label': 'knob'}) + '\\n')\n"
    )
    backend = ExternalBackend(command=f"python3 {script}", workdir=tmp_path)
    answers = backend.answer(jobs)
    assert validate_protocol(jobs, answers)[0].label == "knob"
