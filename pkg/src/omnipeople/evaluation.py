"""Scoring of predicted detections against reference boxes: IoU matching,
TP/FP/FN tallies, precision/recall, IoU-threshold sweeps, confidence-swept
PR curves with AP, and occupancy (people-count) reports."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from .model import BoundingBox, Detection


@dataclass(frozen=True)
class EvalCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("counts must be non-negative")

    def __add__(self, other: "EvalCounts") -> "EvalCounts":
        return EvalCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


class PRResult(NamedTuple):
    precision: float
    recall: float
    # Vacuous flags: the corresponding denominator was zero and the value
    # was defined as 1.0 (an empty room predicted empty is a success).
    precision_vacuous: bool = False
    recall_vacuous: bool = False


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float


@dataclass
class PRCurve:
    points: list[PRPoint]
    ap: float | None
    undefined: bool = False


@dataclass
class OccupancyReport:
    rows: list[tuple[str, int, int]]
    mae: float
    exact_match_rate: float
    minutes: list[tuple[int, float, float]] | None = None


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _as_detections(preds: Sequence) -> list[Detection]:
    """Bare reference-style boxes act as confidence-1.0 detections."""
    out = []
    for p in preds:
        if isinstance(p, Detection):
            out.append(p)
        else:
            out.append(Detection(box=p, confidence=1.0))
    return out


def match_frame(
    preds: Sequence, refs: Sequence[BoundingBox], iou_threshold: float
) -> tuple[EvalCounts, list[tuple[int, int]]]:
    """Greedy one-to-one matching of predictions to references.

    Predictions are visited in descending confidence (ties keep input
    order); each takes the highest-IoU not-yet-matched reference with
    IoU >= threshold.  Returns counts and the (pred_idx, ref_idx) pairs.
    """
    dets = _as_detections(preds)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    taken = [False] * len(refs)
    matches: list[tuple[int, int]] = []
    for i in order:
        best, best_iou = -1, 0.0
        for j, ref in enumerate(refs):
            if taken[j]:
                continue
            v = iou(dets[i].box, ref)
            if v >= iou_threshold and v > best_iou:
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
            matches.append((i, best))
    tp = len(matches)
    return EvalCounts(tp, len(dets) - tp, len(refs) - tp), matches


def precision_recall(counts: EvalCounts) -> PRResult:
    """P = tp/(tp+fp), R = tp/(tp+fn); zero denominators with tp = 0 are
    vacuously perfect (1.0, flagged)."""
    if counts.tp + counts.fp > 0:
        precision, pv = counts.tp / (counts.tp + counts.fp), False
    else:
        precision, pv = 1.0, True
    if counts.tp + counts.fn > 0:
        recall, rv = counts.tp / (counts.tp + counts.fn), False
    else:
        recall, rv = 1.0, True
    return PRResult(precision, recall, pv, rv)


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    counts: EvalCounts
    precision: float
    recall: float


def iou_sweep(
    preds_by_frame: Mapping[str, Sequence],
    refs_by_frame: Mapping[str, Sequence[BoundingBox]],
    thresholds: Iterable[float],
) -> list[SweepRow]:
    """Aggregate matching over all frames at each IoU threshold."""
    _check_frames(preds_by_frame, refs_by_frame)
    rows = []
    for t in thresholds:
        if not 0.0 < t <= 1.0:
            raise ValueError(f"IoU threshold must lie in (0, 1], got {t}")
        total = EvalCounts()
        for frame_id in sorted(refs_by_frame):
            counts, _ = match_frame(preds_by_frame[frame_id], refs_by_frame[frame_id], t)
            total = total + counts
        pr = precision_recall(total)
        rows.append(SweepRow(t, total, pr.precision, pr.recall))
    return rows


def _check_frames(preds_by_frame, refs_by_frame):
    missing_preds = sorted(set(refs_by_frame) - set(preds_by_frame))
    missing_refs = sorted(set(preds_by_frame) - set(refs_by_frame))
    if missing_preds or missing_refs:
        parts = []
        if missing_preds:
            parts.append(f"frames without predictions: {', '.join(missing_preds)}")
        if missing_refs:
            parts.append(f"frames without references: {', '.join(missing_refs)}")
        raise ValueError("; ".join(parts))


def pr_curve(
    preds_by_frame: Mapping[str, Sequence[Detection]],
    refs_by_frame: Mapping[str, Sequence[BoundingBox]],
    iou_threshold: float,
) -> PRCurve:
    """Precision/recall swept over the detection confidences.

    Predictions are accepted in descending confidence; one PR point is
    recorded per distinct confidence value (the accepted set includes every
    prediction at that confidence).  Because the matcher is greedy in
    confidence order, extending the accepted prefix never revises earlier
    matches, so the incremental sweep equals per-prefix recomputation.
    AP is the area under the curve with the monotone precision envelope.
    """
    _check_frames(preds_by_frame, refs_by_frame)
    n_refs = sum(len(refs_by_frame[f]) for f in refs_by_frame)
    flat: list[tuple[float, str, int]] = []
    for frame_id in sorted(preds_by_frame):
        for i, det in enumerate(preds_by_frame[frame_id]):
            flat.append((det.confidence, frame_id, i))
    flat.sort(key=lambda item: (-item[0], item[1], item[2]))

    if not flat and n_refs == 0:
        return PRCurve([], None, undefined=True)

    taken = {f: [False] * len(refs_by_frame[f]) for f in refs_by_frame}
    points: list[PRPoint] = []
    tp = 0
    for k, (conf, frame_id, i) in enumerate(flat):
        det = preds_by_frame[frame_id][i]
        refs = refs_by_frame[frame_id]
        best, best_iou = -1, 0.0
        for j, ref in enumerate(refs):
            if taken[frame_id][j]:
                continue
            v = iou(det.box, ref)
            if v >= iou_threshold and v > best_iou:
                best, best_iou = j, v
        if best >= 0:
            taken[frame_id][best] = True
            tp += 1
        last_of_threshold = k == len(flat) - 1 or flat[k + 1][0] != conf
        if last_of_threshold:
            accepted = k + 1
            precision = tp / accepted
            recall = tp / n_refs if n_refs else 1.0
            points.append(PRPoint(conf, precision, recall))

    if n_refs == 0:
        return PRCurve(points, None, undefined=True)
    return PRCurve(points, average_precision(points))


def average_precision(points: Sequence[PRPoint]) -> float:
    """All-point interpolation: sum of recall increments times the monotone
    precision envelope (highest precision at or beyond each recall)."""
    if not points:
        return 0.0
    envelope = [0.0] * len(points)
    running = 0.0
    for i in range(len(points) - 1, -1, -1):
        running = max(running, points[i].precision)
        envelope[i] = running
    ap = 0.0
    prev_recall = 0.0
    for pt, env in zip(points, envelope):
        ap += (pt.recall - prev_recall) * env
        prev_recall = pt.recall
    return ap


def occupancy_report(
    preds_by_frame: Mapping[str, Sequence],
    refs_by_frame: Mapping[str, Sequence],
    frames_per_bucket: int | None = None,
) -> OccupancyReport:
    """Per-frame people counts with MAE and exact-match rate; optionally a
    downsampled series taking the median count within each bucket of
    consecutive frames (e.g. one bucket per minute of footage)."""
    _check_frames(preds_by_frame, refs_by_frame)

    def count(value) -> int:
        return value if isinstance(value, int) else len(value)

    rows = [
        (frame_id, count(preds_by_frame[frame_id]), count(refs_by_frame[frame_id]))
        for frame_id in sorted(refs_by_frame)
    ]
    if rows:
        mae = sum(abs(p - r) for _, p, r in rows) / len(rows)
        exact = sum(1 for _, p, r in rows if p == r) / len(rows)
    else:
        mae, exact = 0.0, 1.0

    minutes = None
    if frames_per_bucket:
        minutes = []
        for b in range(0, len(rows), frames_per_bucket):
            chunk = rows[b : b + frames_per_bucket]
            minutes.append(
                (
                    b // frames_per_bucket,
                    float(statistics.median(p for _, p, _ in chunk)),
                    float(statistics.median(r for _, _, r in chunk)),
                )
            )
    return OccupancyReport(rows, mae, exact, minutes)
