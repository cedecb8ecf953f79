"""End-to-end pipeline orchestration: bundle in, labeled instances out.

Stage order: subsample -> lift/denoise/descriptor -> track (frames in
temporal order) -> scene association / expansion / consistency /
geometry / merge -> view ranking + classification -> results. Each stage
counts what it dropped and why in a machine-readable report.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import (
    ClassificationJob,
    ClassifierBackend,
    DescriptorBackend,
    ExternalBackend,
    InstanceResult,
    JobAnswer,
    OracleBackend,
    aggregate_answers,
    emit_jobs,
    validate_protocol,
    write_jobs,
)
from .config import PipelineConfig
from .errors import (
    AllNoise,
    ConfigError,
    EmptyLift,
    EmptyProposal,
    NoFeatureSupport,
)
from .lifting import FrameInstance, lift_detection
from .refine import (
    Proposal,
    associate_to_scene,
    consistency_scores,
    expand,
    filter_consistency,
    geometry_refine,
    merge_proposals,
)
from .scene.types import SceneBundle
from .scene.io import subsample_frames
from .spatial import UniformGrid
from .tracker import Track, Tracker

STAGE_NAMES = ("lift", "track", "refine", "classify")
THREADS_ENV = "OT3D_THREADS"


def worker_count() -> int:
    """Worker cap from the OT3D_THREADS environment variable (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class StageReport:
    """Counts per stage plus per-error-class drop tallies."""

    frames_total: int = 0
    frames_used: int = 0
    detections_total: int = 0
    instances_lifted: int = 0
    tracks: int = 0
    proposals_refined: int = 0
    proposals_merged: int = 0
    jobs_emitted: int = 0
    instances_labeled: int = 0
    drops: dict[str, int] = field(default_factory=dict)

    def drop(self, reason: str) -> None:
        self.drops[reason] = self.drops.get(reason, 0) + 1

    def to_dict(self) -> dict:
        out = {
            "frames_total": self.frames_total,
            "frames_used": self.frames_used,
            "detections_total": self.detections_total,
            "instances_lifted": self.instances_lifted,
            "tracks": self.tracks,
            "proposals_refined": self.proposals_refined,
            "proposals_merged": self.proposals_merged,
            "jobs_emitted": self.jobs_emitted,
            "instances_labeled": self.instances_labeled,
            "drops": dict(sorted(self.drops.items())),
        }
        return out


@dataclass
class RunResult:
    instances: list[InstanceResult]
    report: StageReport
    tracks: list[Track]
    proposals: list[Proposal]
    jobs: list[ClassificationJob]
    answers: list[JobAnswer]


def _lift_frame(
    frame, cam, cfg: PipelineConfig
) -> tuple[list[FrameInstance], list[str]]:
    """Lift one frame's detections; drop reasons are returned, not shared,
    so frames can be lifted concurrently."""
    out = []
    drops = []
    for det in frame.detections:
        try:
            out.append(
                lift_detection(
                    frame,
                    det,
                    cam,
                    depth_range=cfg.depth_range,
                    eps=cfg.dbscan.eps,
                    min_pts=cfg.dbscan.min_pts,
                )
            )
        except EmptyLift:
            drops.append("EmptyLift")
        except AllNoise:
            drops.append("AllNoise")
        except NoFeatureSupport:
            drops.append("NoFeatureSupport")
    return out, drops


def run_pipeline(
    bundle: SceneBundle,
    cfg: PipelineConfig,
    backend: ClassifierBackend | None = None,
    workdir: Path | str | None = None,
    stop_after: str | None = None,
) -> RunResult:
    """Run the pipeline; `stop_after` halts after 'lift'/'track'/'refine'."""
    cfg.validate()
    if stop_after is not None and stop_after not in STAGE_NAMES:
        raise ConfigError(f"unknown stage {stop_after!r}; have {STAGE_NAMES}")
    report = StageReport(frames_total=len(bundle.frames))

    working = subsample_frames(bundle, cfg.stride)
    report.frames_used = len(working.frames)
    report.detections_total = sum(len(f.detections) for f in working.frames)

    # Lifting is pure per frame; OT3D_THREADS>1 parallelizes across frames.
    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            lifted = list(
                pool.map(
                    lambda f: _lift_frame(f, working.camera, cfg), working.frames
                )
            )
    else:
        lifted = [_lift_frame(f, working.camera, cfg) for f in working.frames]
    lifted_per_frame = [instances for instances, _ in lifted]
    for _, drops in lifted:
        for reason in drops:
            report.drop(reason)
    report.instances_lifted = sum(len(v) for v in lifted_per_frame)
    if stop_after == "lift":
        return RunResult([], report, [], [], [], [])

    tracker = Tracker(cfg.tracker)
    for instances in lifted_per_frame:
        tracker.step(instances)
    tracks = tracker.tracks
    report.tracks = len(tracks)
    if stop_after == "track":
        return RunResult([], report, tracks, [], [], [])

    grid = UniformGrid(working.cloud.positions, cfg.refine.grid_cell_size())
    refined: list[Proposal] = []
    for track in tracks:
        try:
            prop = associate_to_scene(track, working.cloud, cfg.refine.r_assoc, grid)
            prop = expand(prop, working.cloud, cfg.refine.tau_exp, grid)
            scores = consistency_scores(prop, working, track, cfg.refine)
            prop = filter_consistency(prop, scores, cfg.refine.tau_vis)
            prop = geometry_refine(prop, working.cloud, cfg.refine.gamma)
            refined.append(prop)
        except EmptyProposal:
            report.drop("EmptyProposal")
    report.proposals_refined = len(refined)
    proposals = merge_proposals(
        refined, cfg.refine.tau_merge, cfg.tracker.voxel_size, working.cloud
    )
    report.proposals_merged = len(proposals)
    if stop_after == "refine":
        return RunResult([], report, tracks, proposals, [], [])

    jobs = emit_jobs(
        proposals,
        working,
        cfg.classify.label_set,
        cfg.classify.task,
        cfg.classify.top_k,
        cfg.depth_range,
    )
    skipped = len(proposals) - len(jobs)
    for _ in range(skipped):
        report.drop("NoVisibleView")
    report.jobs_emitted = len(jobs)

    if backend is None:
        backend = make_backend(cfg, working, proposals, tracks, workdir)
    answers = backend.answer(jobs)
    by_id = validate_protocol(jobs, answers)

    max_objectness = max((p.objectness for p in proposals), default=1)
    prop_by_id = {p.track_id: p for p in proposals}
    instances = []
    for job in jobs:
        outcome = aggregate_answers(job, by_id[job.job_id])
        if outcome is None:
            report.drop("NoneLabel")
            continue
        label, votes = outcome
        prop = prop_by_id[job.proposal_id]
        confidence = 0.5 * (prop.objectness / max_objectness) + 0.5 * votes
        instances.append(
            InstanceResult(
                proposal_id=prop.track_id,
                label=label,
                confidence=confidence,
                point_indices=prop.point_indices,
            )
        )
    report.instances_labeled = len(instances)
    return RunResult(instances, report, tracks, proposals, jobs, answers)


def make_backend(
    cfg: PipelineConfig,
    bundle: SceneBundle,
    proposals: list[Proposal],
    tracks: list[Track],
    workdir: Path | str | None,
) -> ClassifierBackend:
    name = cfg.classify.backend
    if name == "oracle":
        return OracleBackend(
            bundle=bundle,
            proposals={p.track_id: p.point_indices for p in proposals},
        )
    if name == "descriptor":
        if cfg.classify.embeddings is None:
            raise ConfigError("descriptor backend requires classify.embeddings")
        raw = json.loads(Path(cfg.classify.embeddings).read_text())
        embeddings = {
            label: np.asarray(vec, dtype=np.float64) for label, vec in raw.items()
        }
        track_desc = {t.track_id: t.descriptor for t in tracks}
        return DescriptorBackend(
            descriptors={p.track_id: track_desc[p.track_id] for p in proposals},
            embeddings=embeddings,
            floor=cfg.classify.descriptor_floor,
        )
    if name.startswith("external:"):
        if workdir is None:
            raise ConfigError("external backend requires a working directory")
        return ExternalBackend(
            command=name.split(":", 1)[1], workdir=Path(workdir)
        )
    raise ConfigError(f"unknown backend {name!r}")


def write_outputs(result: RunResult, out_dir: Path | str) -> None:
    """Serialize results, stage report, and the wire-protocol transcript."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "instances": [
            {
                "id": int(inst.proposal_id),
                "label": inst.label,
                "confidence": float(inst.confidence),
                "point_indices": [int(v) for v in inst.point_indices],
            }
            for inst in sorted(result.instances, key=lambda r: r.proposal_id)
        ]
    }
    (out / "results.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True)
    )
    (out / "stage_report.json").write_text(
        json.dumps(result.report.to_dict(), indent=2, sort_keys=True)
    )
    if result.jobs:
        write_jobs(result.jobs, out / "jobs.jsonl")
        with open(out / "answers.jsonl", "w") as f:
            for ans in result.answers:
                f.write(
                    json.dumps(
                        {
                            "job_id": ans.job_id,
                            "label": ans.label,
                            "per_view": None
                            if ans.per_view is None
                            else list(ans.per_view),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


def write_proposals(proposals: list[Proposal], path: Path | str) -> None:
    payload = {
        "proposals": [
            {
                "track_id": int(p.track_id),
                "stage": p.stage,
                "objectness": int(p.objectness),
                "merged_from": [int(v) for v in p.merged_from],
                "point_indices": [int(v) for v in p.point_indices],
            }
            for p in proposals
        ]
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))
