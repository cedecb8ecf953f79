"""Instance-segmentation AP over point-index sets, top-1 label protocol.

Per class and IoU threshold, predictions are visited by confidence
descending and greedily matched to the unmatched ground-truth instance
with the highest IoU; a match counts as a true positive iff its IoU
reaches the threshold (the ground truth is only consumed then). AP is
the area under the all-point-interpolated precision-recall curve; the
headline AP averages thresholds 0.50..0.95 in 0.05 steps, with AP50 and
AP25 at their fixed thresholds. Class means cover classes with at least
one ground-truth instance; classes with predictions but no ground truth
are skipped entirely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import InstanceResult
from .errors import UnknownLabel

AP_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
AP50_THRESHOLD = 0.5
AP25_THRESHOLD = 0.25


def point_set_iou(a: np.ndarray | set, b: np.ndarray | set) -> float:
    """|A∩B| / |A∪B| over point-index sets; 0.0 when both are empty."""
    sa = set(np.asarray(list(a), dtype=np.int64).tolist()) if not isinstance(a, set) else a
    sb = set(np.asarray(list(b), dtype=np.int64).tolist()) if not isinstance(b, set) else b
    union = len(sa | sb)
    if union == 0:
        return 0.0
    return len(sa & sb) / union


@dataclass(frozen=True)
class MatchRecord:
    label: str
    proposal_id: int
    gt_index: int
    iou: float


@dataclass
class ClassAP:
    ap: float
    ap50: float
    ap25: float


@dataclass
class APReport:
    per_class: dict[str, ClassAP]
    mean_ap: float
    mean_ap50: float
    mean_ap25: float
    matches: list[MatchRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_class": {
                label: {"ap": c.ap, "ap50": c.ap50, "ap25": c.ap25}
                for label, c in sorted(self.per_class.items())
            },
            "mean_ap": self.mean_ap,
            "mean_ap50": self.mean_ap50,
            "mean_ap25": self.mean_ap25,
            "matches": [
                {
                    "label": m.label,
                    "proposal_id": m.proposal_id,
                    "gt_index": m.gt_index,
                    "iou": m.iou,
                }
                for m in self.matches
            ],
        }

    def write(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def evaluate(
    preds: list[InstanceResult],
    gt: list[tuple[str, np.ndarray]],
    closed_label_set: list[str] | None = None,
) -> APReport:
    """Score predictions against ground truth (label, point-index) pairs.

    With a closed label set declared, any prediction whose label is not in
    the set raises UnknownLabel; open queries skip this check.
    """
    if closed_label_set is not None:
        allowed = set(closed_label_set)
        for pred in preds:
            if pred.label not in allowed:
                raise UnknownLabel(
                    f"prediction label {pred.label!r} outside the declared set"
                )

    gt_labels = sorted({label for label, _ in gt})
    gt_by_class: dict[str, list[np.ndarray]] = {label: [] for label in gt_labels}
    for label, indices in gt:
        gt_by_class[label].append(np.asarray(indices, dtype=np.int64))
    preds_by_class: dict[str, list[InstanceResult]] = {l: [] for l in gt_labels}
    for pred in preds:
        if pred.label in preds_by_class:
            preds_by_class[pred.label].append(pred)

    per_class: dict[str, ClassAP] = {}
    match_log: list[MatchRecord] = []
    for label in gt_labels:
        cls_gt = gt_by_class[label]
        cls_preds = sorted(
            preds_by_class[label], key=lambda p: (-p.confidence, p.proposal_id)
        )
        iou = np.zeros((len(cls_preds), len(cls_gt)))
        for i, pred in enumerate(cls_preds):
            pred_set = set(np.asarray(pred.point_indices, dtype=np.int64).tolist())
            for j, gt_idx in enumerate(cls_gt):
                iou[i, j] = point_set_iou(pred_set, set(gt_idx.tolist()))
        ap_by_t = {
            t: _threshold_ap(iou, len(cls_gt), t)
            for t in set(AP_THRESHOLDS) | {AP25_THRESHOLD}
        }
        per_class[label] = ClassAP(
            ap=float(np.mean([ap_by_t[t] for t in AP_THRESHOLDS])),
            ap50=ap_by_t[AP50_THRESHOLD],
            ap25=ap_by_t[AP25_THRESHOLD],
        )
        for i, j, pair_iou in _greedy_matches(iou, AP50_THRESHOLD):
            match_log.append(
                MatchRecord(
                    label=label,
                    proposal_id=cls_preds[i].proposal_id,
                    gt_index=j,
                    iou=pair_iou,
                )
            )

    if per_class:
        mean_ap = float(np.mean([c.ap for c in per_class.values()]))
        mean_ap50 = float(np.mean([c.ap50 for c in per_class.values()]))
        mean_ap25 = float(np.mean([c.ap25 for c in per_class.values()]))
    else:
        mean_ap = mean_ap50 = mean_ap25 = 0.0
    return APReport(
        per_class=per_class,
        mean_ap=mean_ap,
        mean_ap50=mean_ap50,
        mean_ap25=mean_ap25,
        matches=match_log,
    )


def _greedy_matches(
    iou: np.ndarray, threshold: float
) -> list[tuple[int, int, float]]:
    """(pred, gt, iou) true-positive pairs under greedy matching."""
    n_pred, n_gt = iou.shape
    used = np.zeros(n_gt, dtype=bool)
    out = []
    for i in range(n_pred):
        best_j, best_iou = -1, 0.0
        for j in range(n_gt):
            if not used[j] and iou[i, j] > best_iou:
                best_j, best_iou = j, iou[i, j]
        if best_j >= 0 and best_iou >= threshold:
            used[best_j] = True
            out.append((i, best_j, float(best_iou)))
    return out


def _threshold_ap(iou: np.ndarray, n_gt: int, threshold: float) -> float:
    """All-point-interpolated AP at one IoU threshold."""
    n_pred = iou.shape[0]
    if n_gt == 0:
        return 0.0
    if n_pred == 0:
        return 0.0
    tp_pairs = {i for i, _, _ in _greedy_matches(iou, threshold)}
    tp = np.cumsum([1 if i in tp_pairs else 0 for i in range(n_pred)])
    fp = np.arange(1, n_pred + 1) - tp
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # Precision envelope from the right (all-point interpolation).
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, env):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def load_results(path: Path | str) -> list[InstanceResult]:
    """Read a results.json file ({"instances": [...]})."""
    raw = json.loads(Path(path).read_text())
    out = []
    for inst in raw["instances"]:
        out.append(
            InstanceResult(
                proposal_id=int(inst["id"]),
                label=str(inst["label"]),
                confidence=float(inst["confidence"]),
                point_indices=np.asarray(inst["point_indices"], dtype=np.int64),
            )
        )
    return out
