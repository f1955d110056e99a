"""Tracking evaluation: center-distance matching, CLEAR counts, MT/ML,
recall sweep, MOTA/MOTP/MOTAR and their sweep averages AMOTA/AMOTP.

A prediction is a true positive when it falls within the valid region of
its ground truth (Euclidean BEV distance, 3 m by default); matching is
greedy in ascending distance and one-to-one.  The sweep evaluates evenly
spaced recall targets between the first recall above 0.1 and the highest
achieved recall; AMOTA/AMOTP average MOTAR and the mean TP distance over
those sweep points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class MatchConfig:
    match_distance: float = 3.0  # [m]
    n_recalls: int = 40

    def validate(self) -> None:
        if self.match_distance <= 0:
            raise ValueError(f"match_distance {self.match_distance} must be positive")
        if self.n_recalls < 2:
            raise ValueError(f"n_recalls {self.n_recalls} must be >= 2")


@dataclass(frozen=True)
class GroundTruthBox:
    scene: str
    frame_index: int
    instance_id: str
    center: tuple[float, float]
    class_name: str = "car"


@dataclass(frozen=True)
class PredBox:
    scene: str
    frame_index: int
    track_id: str
    center: tuple[float, float]
    score: float
    class_name: str = "car"


@dataclass(frozen=True)
class FrameCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    ids: int = 0
    frag: int = 0
    gt: int = 0


@dataclass(frozen=True)
class FrameMatch:
    scene: str
    frame_index: int
    # (gt instance, track id, distance) per matched pair
    pairs: tuple[tuple[str, str, float], ...]
    unmatched_gt: tuple[str, ...]
    unmatched_pred: tuple[str, ...]


def match_frame(
    gt_boxes: Sequence[GroundTruthBox],
    pred_boxes: Sequence[PredBox],
    cfg: MatchConfig,
) -> FrameMatch:
    """Greedy one-to-one matching in ascending center distance."""
    scene = gt_boxes[0].scene if gt_boxes else (pred_boxes[0].scene if pred_boxes else "")
    frame = gt_boxes[0].frame_index if gt_boxes else (
        pred_boxes[0].frame_index if pred_boxes else 0
    )
    candidates = []
    for gi, gt in enumerate(gt_boxes):
        gx, gy = gt.center
        for pi, pred in enumerate(pred_boxes):
            px, py = pred.center
            dist = math.hypot(gx - px, gy - py)
            if dist <= cfg.match_distance:
                candidates.append((dist, gi, pi))
    candidates.sort()
    used_gt: set[int] = set()
    used_pred: set[int] = set()
    pairs = []
    for dist, gi, pi in candidates:
        if gi in used_gt or pi in used_pred:
            continue
        used_gt.add(gi)
        used_pred.add(pi)
        pairs.append((gt_boxes[gi].instance_id, pred_boxes[pi].track_id, dist))
    return FrameMatch(
        scene=scene,
        frame_index=frame,
        pairs=tuple(pairs),
        unmatched_gt=tuple(
            g.instance_id for gi, g in enumerate(gt_boxes) if gi not in used_gt
        ),
        unmatched_pred=tuple(
            p.track_id for pi, p in enumerate(pred_boxes) if pi not in used_pred
        ),
    )


@dataclass(frozen=True)
class Accumulation:
    counts: FrameCounts
    mt: int
    ml: int
    distances: tuple[float, ...]


def accumulate(matches: Sequence[FrameMatch]) -> Accumulation:
    """CLEAR counts plus MT/ML/FRAG over an ordered sequence of matched frames.

    An ID switch is counted when a ground truth's matched track differs
    from its previously matched track; a fragmentation is a maximal
    unmatched gap strictly inside a ground truth's matched span.
    """
    ordered = sorted(matches, key=lambda m: (m.scene, m.frame_index))
    tp = fp = fn = ids = 0
    distances: list[float] = []
    # Per (scene, instance): frame-by-frame matched track or None.
    timeline: dict[tuple[str, str], list[str | None]] = {}
    last_id: dict[tuple[str, str], str] = {}
    for fm in ordered:
        tp += len(fm.pairs)
        fp += len(fm.unmatched_pred)
        fn += len(fm.unmatched_gt)
        for inst, track, dist in fm.pairs:
            key = (fm.scene, inst)
            distances.append(dist)
            if key in last_id and last_id[key] != track:
                ids += 1
            last_id[key] = track
            timeline.setdefault(key, []).append(track)
        for inst in fm.unmatched_gt:
            timeline.setdefault((fm.scene, inst), []).append(None)
    frag = mt = ml = 0
    for flags in timeline.values():
        matched = [f is not None for f in flags]
        n_matched = sum(matched)
        ratio = n_matched / len(matched)
        if ratio >= 0.8:
            mt += 1
        if ratio <= 0.2:
            ml += 1
        if n_matched:
            first = matched.index(True)
            last = len(matched) - 1 - matched[::-1].index(True)
            in_gap = False
            for flag in matched[first : last + 1]:
                if not flag and not in_gap:
                    frag += 1
                    in_gap = True
                elif flag:
                    in_gap = False
    gt_total = tp + fn
    counts = FrameCounts(tp=tp, fp=fp, fn=fn, ids=ids, frag=frag, gt=gt_total)
    return Accumulation(counts=counts, mt=mt, ml=ml, distances=tuple(distances))


def mota(counts: FrameCounts) -> float:
    """1 - (FN + FP + IDS) / GT, unclamped (clamping lives in MOTAR)."""
    if counts.gt == 0:
        return float("nan")
    return 1.0 - (counts.fn + counts.fp + counts.ids) / counts.gt


def motp(distances: Sequence[float], tp: int) -> float:
    """Mean TP-to-ground-truth distance; NaN when there are no TPs."""
    if tp == 0:
        return float("nan")
    return float(sum(distances) / tp)


def motar(counts: FrameCounts, recall: float, gt: int) -> float:
    """MOTA under a given recall, clamped to [0, 1]."""
    if recall <= 0 or gt == 0:
        return float("nan")
    err = counts.ids + counts.fp + counts.fn - (1.0 - recall) * gt
    return max(0.0, 1.0 - err / (recall * gt))


@dataclass(frozen=True)
class SweepPoint:
    target_recall: float
    recall: float  # achieved at the chosen threshold
    threshold: float
    counts: FrameCounts
    mt: int
    ml: int
    distances: tuple[float, ...]

    @property
    def motar(self) -> float:
        return motar(self.counts, self.recall, self.counts.gt)

    @property
    def mota(self) -> float:
        return mota(self.counts)

    @property
    def motp(self) -> float:
        return motp(self.distances, self.counts.tp)


@dataclass(frozen=True)
class RecallSweep:
    points: tuple[SweepPoint, ...]
    diagnostic: str = ""


def _group_by_frame(boxes, keys):
    grouped: dict[tuple[str, int], list] = {k: [] for k in keys}
    for b in boxes:
        grouped.setdefault((b.scene, b.frame_index), []).append(b)
    return grouped


def _accumulate_at_threshold(
    gt_by_frame: Mapping[tuple[str, int], list],
    pred_by_frame: Mapping[tuple[str, int], list],
    threshold: float,
    cfg: MatchConfig,
) -> Accumulation:
    frames = sorted(set(gt_by_frame) | set(pred_by_frame))
    matches = []
    for key in frames:
        preds = [p for p in pred_by_frame.get(key, []) if p.score >= threshold]
        matches.append(match_frame(gt_by_frame.get(key, []), preds, cfg))
    return accumulate(matches)


def recall_sweep(
    pred_boxes: Sequence[PredBox],
    gt_boxes: Sequence[GroundTruthBox],
    cfg: MatchConfig,
) -> RecallSweep:
    """Evenly spaced recall targets mapped back to tracking-score thresholds.

    Candidate thresholds are the observed tracking scores.  Each target
    recall maps to the threshold at which it is first achieved when
    lowering the threshold (the fewest low-score predictions needed);
    counts are recomputed at that threshold.
    """
    cfg.validate()
    gt_total = len(gt_boxes)
    if gt_total == 0:
        return RecallSweep(points=(), diagnostic="no ground truth boxes")
    gt_by_frame = _group_by_frame(gt_boxes, ())
    pred_by_frame = _group_by_frame(pred_boxes, ())
    thresholds = sorted({p.score for p in pred_boxes}, reverse=True)
    achieved: list[tuple[float, float, Accumulation]] = []
    for ts in thresholds:
        acc = _accumulate_at_threshold(gt_by_frame, pred_by_frame, ts, cfg)
        achieved.append((ts, acc.counts.tp / gt_total, acc))
    usable = [(ts, r, acc) for ts, r, acc in achieved if r > 0.1]
    if not usable:
        best_recall = max((r for _, r, _ in achieved), default=0.0)
        return RecallSweep(
            points=(),
            diagnostic=(
                "no tracking-score threshold achieves recall above 0.1 "
                f"(best achieved recall {best_recall:.3f})"
            ),
        )
    r_lo = min(r for _, r, _ in usable)
    r_hi = max(r for _, r, _ in usable)
    targets = np.linspace(r_lo, r_hi, cfg.n_recalls)
    points = []
    for target in targets:
        # Smallest achieved recall that still reaches the target; ties on
        # recall resolve to the largest (most selective) threshold.
        options = [(r, -ts, ts, acc) for ts, r, acc in achieved if r >= target - 1e-12]
        r, _, ts, acc = min(options)
        points.append(
            SweepPoint(
                target_recall=float(target),
                recall=r,
                threshold=ts,
                counts=acc.counts,
                mt=acc.mt,
                ml=acc.ml,
                distances=acc.distances,
            )
        )
    return RecallSweep(points=tuple(points))


def amota(sweep: RecallSweep) -> float:
    """Average MOTAR over the evaluated recalls (NaN for an empty sweep)."""
    if not sweep.points:
        return float("nan")
    return float(sum(p.motar for p in sweep.points) / len(sweep.points))


def amotp(sweep: RecallSweep) -> float:
    """Average mean-TP-distance over the evaluated recalls."""
    if not sweep.points:
        return float("nan")
    terms = []
    for p in sweep.points:
        terms.append(0.0 if p.counts.tp == 0 else sum(p.distances) / p.counts.tp)
    return float(sum(terms) / len(terms))


@dataclass(frozen=True)
class ClassReport:
    class_name: str
    amota: float
    amotp: float
    recall: float
    mota: float
    motp: float
    mt: int
    ml: int
    tp: int
    fp: int
    fn: int
    ids: int
    frag: int
    gt: int
    diagnostic: str = ""


def evaluate_class(
    pred_boxes: Sequence[PredBox],
    gt_boxes: Sequence[GroundTruthBox],
    cfg: MatchConfig,
    class_name: str = "car",
) -> ClassReport:
    """Sweep-based class report; secondary metrics are taken at the sweep
    point with the highest MOTA."""
    sweep = recall_sweep(pred_boxes, gt_boxes, cfg)
    if not sweep.points:
        return ClassReport(
            class_name=class_name,
            amota=float("nan"),
            amotp=float("nan"),
            recall=0.0,
            mota=float("nan"),
            motp=float("nan"),
            mt=0,
            ml=0,
            tp=0,
            fp=0,
            fn=len(gt_boxes),
            ids=0,
            frag=0,
            gt=len(gt_boxes),
            diagnostic=sweep.diagnostic,
        )
    best = max(
        sweep.points, key=lambda p: (p.mota if not math.isnan(p.mota) else -math.inf)
    )
    return ClassReport(
        class_name=class_name,
        amota=amota(sweep),
        amotp=amotp(sweep),
        recall=best.recall,
        mota=best.mota,
        motp=best.motp,
        mt=best.mt,
        ml=best.ml,
        tp=best.counts.tp,
        fp=best.counts.fp,
        fn=best.counts.fn,
        ids=best.counts.ids,
        frag=best.counts.frag,
        gt=best.counts.gt,
    )


REPORT_COLUMNS = ("AMOTA", "AMOTP", "MT", "ML", "TP", "FP", "FN", "IDS", "FRAG")


def format_report_table(reports: Sequence[ClassReport]) -> str:
    """Plain-text table, one row per class plus a mean row."""
    header = ["Class"] + list(REPORT_COLUMNS)
    rows = []
    for r in reports:
        rows.append(
            [
                r.class_name,
                f"{r.amota:.3f}",
                f"{r.amotp:.3f}",
                str(r.mt),
                str(r.ml),
                str(r.tp),
                str(r.fp),
                str(r.fn),
                str(r.ids),
                str(r.frag),
            ]
        )
    if reports:
        valid = [r.amota for r in reports if not math.isnan(r.amota)]
        valid_p = [r.amotp for r in reports if not math.isnan(r.amotp)]
        rows.append(
            [
                "mean",
                f"{np.mean(valid):.3f}" if valid else "nan",
                f"{np.mean(valid_p):.3f}" if valid_p else "nan",
                str(sum(r.mt for r in reports)),
                str(sum(r.ml for r in reports)),
                str(sum(r.tp for r in reports)),
                str(sum(r.fp for r in reports)),
                str(sum(r.fn for r in reports)),
                str(sum(r.ids for r in reports)),
                str(sum(r.frag for r in reports)),
            ]
        )
    widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
