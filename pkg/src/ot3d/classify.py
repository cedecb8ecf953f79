"""Per-proposal view ranking, classification jobs, backends, aggregation.

Views are ranked by the fraction of proposal points inside each camera
frustum (ties by projected pixel area, then frame id); the top-K views
per proposal form a classification job carrying an annotation box. Jobs
can be answered in-process (oracle or descriptor backends) or shipped to
an external command through a newline-delimited JSON wire protocol.
"""

from __future__ import annotations

import json
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NoVisibleView, ProtocolError
from .lifting import DEFAULT_DEPTH_RANGE
from .refine import Proposal, round_to_pixel
from .scene.types import SceneBundle

NONE_LABEL = "none"
_FRACTION_QUANTUM = 1e-6
BOX_DILATION_PX = 5.0


@dataclass(frozen=True)
class ViewScore:
    frame_id: int
    frustum_fraction: float
    projected_area: int


@dataclass(frozen=True)
class JobView:
    image: str | None
    box: tuple[float, float, float, float]


@dataclass(frozen=True)
class ClassificationJob:
    job_id: int
    proposal_id: int
    views: tuple[JobView, ...]
    label_set: tuple[str, ...] | None = None
    task: str | None = None


@dataclass(frozen=True)
class JobAnswer:
    job_id: int
    label: str
    per_view: tuple[str, ...] | None = None


@dataclass(frozen=True)
class InstanceResult:
    proposal_id: int
    label: str
    confidence: float
    point_indices: np.ndarray


def _normalize_label(label: str) -> str:
    cleaned = label.strip().lower()
    if cleaned in ("", "none", "no match"):
        return NONE_LABEL
    return label.strip()


def _view_stats(
    points: np.ndarray,
    bundle: SceneBundle,
    frame_idx: int,
    depth_range: tuple[float, float],
) -> tuple[float, int, np.ndarray, np.ndarray]:
    """Frustum fraction, projected pixel area, and member projections."""
    cam = bundle.camera
    frame = bundle.frames[frame_idx]
    pts_cam = frame.pose.inverse_transform(points)
    z = pts_cam[:, 2]
    d_min, d_max = depth_range
    front = (z > 0) & (z >= d_min) & (z <= d_max)
    uv = np.zeros((points.shape[0], 2))
    uv[front] = cam.project(pts_cam[front])
    u, v = uv[:, 0], uv[:, 1]
    member = front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    fraction = float(member.sum()) / points.shape[0]
    px = round_to_pixel(u[member])
    py = round_to_pixel(v[member])
    ok = (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
    area = int(np.unique(py[ok] * cam.width + px[ok]).size)
    return fraction, area, u[member], v[member]


def rank_views(
    prop: Proposal,
    bundle: SceneBundle,
    depth_range: tuple[float, float] = DEFAULT_DEPTH_RANGE,
) -> list[ViewScore]:
    """All camera views ordered by frustum fraction, best first.

    Fraction ties (within 1e-6, via quantization) break by projected area
    descending, then by lower frame id. Raises NoVisibleView when every
    fraction is zero.
    """
    points = bundle.cloud.positions[prop.point_indices].astype(np.float64)
    scored = []
    for idx, frame in enumerate(bundle.frames):
        fraction, area, _, _ = _view_stats(points, bundle, idx, depth_range)
        scored.append(ViewScore(frame.frame_id, fraction, area))
    if all(s.frustum_fraction == 0.0 for s in scored):
        raise NoVisibleView(f"proposal {prop.track_id}: outside every frustum")
    scored.sort(
        key=lambda s: (
            -round(s.frustum_fraction / _FRACTION_QUANTUM),
            -s.projected_area,
            s.frame_id,
        )
    )
    return scored


def emit_jobs(
    props: list[Proposal],
    bundle: SceneBundle,
    label_set: list[str] | None,
    task: str | None,
    top_k: int,
    depth_range: tuple[float, float] = DEFAULT_DEPTH_RANGE,
) -> list[ClassificationJob]:
    """Build one job per classifiable proposal from its top-K views.

    The annotation box is the axis-aligned bbox of the proposal's
    projected points in that view, dilated by 5 px and then clamped to
    the canvas. Proposals visible in no view are skipped.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    frame_index = {f.frame_id: i for i, f in enumerate(bundle.frames)}
    cam = bundle.camera
    jobs = []
    job_id = 0
    for prop in props:
        try:
            ranking = rank_views(prop, bundle, depth_range)
        except NoVisibleView:
            continue
        points = bundle.cloud.positions[prop.point_indices].astype(np.float64)
        views = []
        for score in ranking:
            if len(views) == top_k:
                break
            if score.frustum_fraction == 0.0:
                break
            idx = frame_index[score.frame_id]
            _, _, us, vs = _view_stats(points, bundle, idx, depth_range)
            box = (
                max(0.0, float(us.min()) - BOX_DILATION_PX),
                max(0.0, float(vs.min()) - BOX_DILATION_PX),
                min(float(cam.width), float(us.max()) + BOX_DILATION_PX),
                min(float(cam.height), float(vs.max()) + BOX_DILATION_PX),
            )
            views.append(JobView(image=bundle.frames[idx].rgb_path, box=box))
        jobs.append(
            ClassificationJob(
                job_id=job_id,
                proposal_id=prop.track_id,
                views=tuple(views),
                label_set=None if label_set is None else tuple(label_set),
                task=task,
            )
        )
        job_id += 1
    return jobs


def aggregate_answers(
    job: ClassificationJob, answer: JobAnswer
) -> tuple[str, float] | None:
    """Reduce a job's answer to (label, vote fraction), or None to drop.

    A single answer is adopted as-is; per-view answers are majority-voted
    with ties resolved by the highest-ranked view's vote. A resulting
    NONE label (or 'no match') drops the proposal.
    """
    if answer.per_view:
        votes = [_normalize_label(v) for v in answer.per_view]
    else:
        votes = [_normalize_label(answer.label)]
    tally: dict[str, int] = {}
    for vote in votes:
        tally[vote] = tally.get(vote, 0) + 1
    top = max(tally.values())
    leaders = {label for label, count in tally.items() if count == top}
    if len(leaders) == 1:
        winner = leaders.pop()
    else:
        winner = next(vote for vote in votes if vote in leaders)
    if winner == NONE_LABEL:
        return None
    return winner, tally[winner] / len(votes)


# --- wire protocol ---------------------------------------------------------


def write_jobs(jobs: list[ClassificationJob], path: Path | str) -> None:
    with open(path, "w") as f:
        for job in jobs:
            f.write(
                json.dumps(
                    {
                        "job_id": job.job_id,
                        "proposal_id": job.proposal_id,
                        "views": [
                            {"image": v.image, "box": list(v.box)}
                            for v in job.views
                        ],
                        "label_set": None
                        if job.label_set is None
                        else list(job.label_set),
                        "task": job.task,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_answers(path: Path | str) -> list[JobAnswer]:
    answers = []
    with open(path) as f:
        for line_no, line in enumerate(f):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"answers line {line_no}: {exc}") from exc
            if not isinstance(raw, dict) or "job_id" not in raw or "label" not in raw:
                raise ProtocolError(
                    f"answers line {line_no}: need job_id and label"
                )
            per_view = raw.get("per_view")
            if per_view is not None and (
                not isinstance(per_view, list)
                or not all(isinstance(v, str) for v in per_view)
            ):
                raise ProtocolError(f"answers line {line_no}: bad per_view")
            answers.append(
                JobAnswer(
                    job_id=raw["job_id"],
                    label=str(raw["label"]),
                    per_view=None if per_view is None else tuple(per_view),
                )
            )
    return answers


def validate_protocol(
    jobs: list[ClassificationJob], answers: list[JobAnswer]
) -> dict[int, JobAnswer]:
    """Check the every-job-answered-exactly-once contract; map by job id."""
    expected = {job.job_id for job in jobs}
    seen: dict[int, JobAnswer] = {}
    for ans in answers:
        if ans.job_id not in expected:
            raise ProtocolError(f"answer references unknown job_id {ans.job_id}")
        if ans.job_id in seen:
            raise ProtocolError(f"job_id {ans.job_id} answered more than once")
        seen[ans.job_id] = ans
    missing = expected - set(seen)
    if missing:
        raise ProtocolError(f"jobs never answered: {sorted(missing)}")
    return seen


# --- backends ---------------------------------------------------------------


class ClassifierBackend:
    """Answers every job exactly once."""

    def answer(self, jobs: list[ClassificationJob]) -> list[JobAnswer]:
        raise NotImplementedError


@dataclass
class OracleBackend(ClassifierBackend):
    """Reads synthetic ground truth: a proposal inheriting >= min_iou
    point-set IoU with some GT instance receives that instance's label."""

    bundle: SceneBundle
    proposals: dict[int, np.ndarray]  # proposal_id -> point indices
    min_iou: float = 0.5

    def answer(self, jobs: list[ClassificationJob]) -> list[JobAnswer]:
        gt = self.bundle.ground_truth or ()
        answers = []
        for job in jobs:
            indices = set(self.proposals[job.proposal_id].tolist())
            best_label, best_iou = NONE_LABEL, 0.0
            for inst in gt:
                other = set(inst.point_indices.tolist())
                union = len(indices | other)
                iou = len(indices & other) / union if union else 0.0
                if iou > best_iou:
                    best_label, best_iou = inst.label, iou
            label = best_label if best_iou >= self.min_iou else NONE_LABEL
            answers.append(JobAnswer(job_id=job.job_id, label=label))
        return answers


@dataclass
class DescriptorBackend(ClassifierBackend):
    """Cosine of the proposal's track descriptor against a label-embedding
    table; argmax wins when it clears the floor, otherwise NONE."""

    descriptors: dict[int, np.ndarray]  # proposal_id -> unit descriptor
    embeddings: dict[str, np.ndarray]  # label -> unit embedding
    floor: float = 0.25

    def answer(self, jobs: list[ClassificationJob]) -> list[JobAnswer]:
        answers = []
        for job in jobs:
            desc = self.descriptors.get(job.proposal_id)
            candidates = (
                list(job.label_set) if job.label_set else list(self.embeddings)
            )
            best_label, best_cos = NONE_LABEL, -np.inf
            if desc is not None:
                for label in candidates:
                    emb = self.embeddings.get(label)
                    if emb is None or emb.shape != desc.shape:
                        continue
                    cos = float(np.dot(desc, emb))
                    if cos > best_cos:
                        best_label, best_cos = label, cos
            label = best_label if best_cos >= self.floor else NONE_LABEL
            answers.append(JobAnswer(job_id=job.job_id, label=label))
        return answers


@dataclass
class ExternalBackend(ClassifierBackend):
    """Runs `command <jobs.jsonl> <answers.jsonl>` and reads the answers."""

    command: str
    workdir: Path

    def answer(self, jobs: list[ClassificationJob]) -> list[JobAnswer]:
        jobs_path = self.workdir / "jobs.jsonl"
        answers_path = self.workdir / "answers.jsonl"
        write_jobs(jobs, jobs_path)
        argv = shlex.split(self.command) + [str(jobs_path), str(answers_path)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise ProtocolError(
                f"classifier command failed ({proc.returncode}): {proc.stderr}"
            )
        if not answers_path.is_file():
            raise ProtocolError("classifier command wrote no answers file")
        return read_answers(answers_path)
