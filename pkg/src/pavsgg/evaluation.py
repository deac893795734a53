"""Inference-time ranking and Recall@K scoring against the hidden oracle.

Candidates are ranked by detection confidences times the predicate score,
optionally damped by the learned pair affinity. Recall matches ranked
triplets to ground truth greedily in rank order, consuming each ground
truth at most once; per-frame recalls are averaged (frames without
ground truth are excluded).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matching import (
    MatchPartition,
    RamConfig,
    match_middle_frame,
    pair_matches_gt,
    pseudo_label_metrics,
)
from .model import RelationModel
from .scene import ClipRecord, Detection, Frame, GroundTruthTriplet, iou

WITH_CONSTRAINT = "with_constraint"
NO_CONSTRAINT = "no_constraint"
PROTOCOLS = (WITH_CONSTRAINT, NO_CONSTRAINT)


@dataclass
class EvalConfig:
    ks: tuple[int, ...] = (10, 20, 50)
    iou_threshold: float = 0.5
    pa_scoring: bool = True
    histogram_bins: int = 20

    def validate(self):
        if not self.ks or any(k < 1 for k in self.ks):
            raise ValueError("ks must be positive")
        if not (0.0 < self.iou_threshold < 1.0):
            raise ValueError("iou_threshold must be in (0, 1)")
        if self.histogram_bins < 1:
            raise ValueError("histogram_bins must be >= 1")


@dataclass(frozen=True)
class RankedTriplet:
    subject_id: int
    object_id: int
    predicate: int
    score: float


def composite_score(
    conf_subject: float,
    conf_object: float,
    predicate_score: float,
    affinity: float,
    pa_enabled: bool,
) -> float:
    score = conf_subject * conf_object * predicate_score
    if pa_enabled:
        score *= affinity
    return score


def rank_frame(
    pairs: list[tuple[int, int]],
    predicate_values: np.ndarray,
    affinity_values: np.ndarray,
    detections: dict[int, Detection],
    protocol: str,
    pa_enabled: bool,
) -> list[RankedTriplet]:
    """Total deterministic ordering of candidate triplets for one frame.

    With-constraint keeps only the best predicate per pair (ties to the
    lowest predicate id); no-constraint keeps every (pair, predicate).
    Score ties order by (subject, object, predicate) ascending.
    """
    candidates = []
    for row, (s, o) in enumerate(pairs):
        conf_s = detections[s].confidence
        conf_o = detections[o].confidence
        row_scores = predicate_values[row]
        if protocol == WITH_CONSTRAINT:
            predicate_ids = [int(np.argmax(row_scores))]
        elif protocol == NO_CONSTRAINT:
            predicate_ids = list(range(len(row_scores)))
        else:
            raise ValueError(f"unknown protocol: {protocol}")
        for p in predicate_ids:
            score = composite_score(
                conf_s, conf_o, float(row_scores[p]), float(affinity_values[row]), pa_enabled
            )
            candidates.append(RankedTriplet(s, o, p, score))
    candidates.sort(key=lambda c: (-c.score, c.subject_id, c.object_id, c.predicate))
    return candidates


def recall_at_k(
    ranked: list[RankedTriplet],
    detections: dict[int, Detection],
    ground_truth: list[GroundTruthTriplet],
    k: int,
    iou_threshold: float = 0.5,
) -> float | None:
    """Hit fraction of ground-truth triplets within the top-k ranking.

    Each ranked triplet consumes at most one matching ground truth,
    processed greedily in rank order. Returns None when the frame has no
    ground truth (excluded from averages).
    """
    if not ground_truth:
        return None
    consumed = [False] * len(ground_truth)
    hits = 0
    for cand in ranked[:k]:
        subject = detections[cand.subject_id]
        obj = detections[cand.object_id]
        for gi, gt in enumerate(ground_truth):
            if consumed[gi]:
                continue
            if (
                gt.subject_class == subject.class_id
                and gt.object_class == obj.class_id
                and gt.predicate == cand.predicate
                and iou(subject.box, gt.subject_box) >= iou_threshold
                and iou(obj.box, gt.object_box) >= iou_threshold
            ):
                consumed[gi] = True
                hits += 1
                break
    return hits / len(ground_truth)


def frame_pair_positivity(
    frame: Frame, pairs: list[tuple[int, int]], iou_threshold: float = 0.5
) -> list[bool]:
    """Oracle interactivity of each candidate pair (IoU > threshold match)."""
    detections = frame.detection_map()
    flags = []
    for s, o in pairs:
        ds, do = detections[s], detections[o]
        flags.append(
            any(pair_matches_gt(ds, do, gt, iou_threshold) for gt in frame.oracle_gt or [])
        )
    return flags


@dataclass
class EvalReport:
    recalls: dict[str, dict[int, float]]
    pseudo_labels: dict | None
    histogram: list[dict]
    ni_ratio_per_video: dict[str, float]
    subset_recalls: dict[str, dict[str, dict[int, float]]]
    frames_scored: int

    def to_dict(self) -> dict:
        return {
            "recalls": {p: {str(k): v for k, v in ks.items()} for p, ks in self.recalls.items()},
            "pseudo_labels": self.pseudo_labels,
            "histogram": self.histogram,
            "ni_ratio_per_video": self.ni_ratio_per_video,
            "subset_recalls": {
                name: {p: {str(k): v for k, v in ks.items()} for p, ks in sub.items()}
                for name, sub in self.subset_recalls.items()
            },
            "frames_scored": self.frames_scored,
        }


def _mean_recalls(per_frame: dict[str, dict[int, list[float]]]) -> dict[str, dict[int, float]]:
    return {
        protocol: {k: (float(np.mean(vals)) if vals else 0.0) for k, vals in by_k.items()}
        for protocol, by_k in per_frame.items()
    }


def evaluate(
    records: list[ClipRecord],
    model: RelationModel,
    eval_cfg: EvalConfig,
    ram_cfg: RamConfig | None = None,
    partitions: dict[str, MatchPartition] | None = None,
) -> EvalReport:
    """Full evaluation pass: recalls, affinity histograms, subset analysis.

    Pseudo-label precision/recall is aggregated over middle frames when a
    matcher config (or precomputed partitions) is supplied and the data
    carries oracle ground truth.
    """
    if not records:
        raise ValueError("empty evaluation split")
    eval_cfg.validate()
    records = sorted(records, key=lambda r: r.clip.clip_id)

    per_frame: dict[str, dict[int, list[float]]] = {
        p: {k: [] for k in eval_cfg.ks} for p in PROTOCOLS
    }
    per_video_frames: dict[str, dict[str, dict[int, list[float]]]] = {}
    bins = eval_cfg.histogram_bins
    pos_counts = np.zeros(bins, dtype=np.int64)
    neg_counts = np.zeros(bins, dtype=np.int64)
    ni_ratio: dict[str, float] = {}
    frames_scored = 0

    match_sum = tp_sum = gt_sum = 0
    have_pseudo = False

    for record in records:
        clip = record.clip
        forward = model.forward(clip)
        video_rec = {p: {k: [] for k in eval_cfg.ks} for p in PROTOCOLS}
        pair_total = 0
        pair_positive = 0
        for index, frame in enumerate(clip.frames):
            out = forward.frames[index]
            if not out.pairs:
                continue
            detections = frame.detection_map()
            predicate_values = out.predicate_scores.data
            affinity_values = out.affinity.data
            positivity = frame_pair_positivity(frame, out.pairs, eval_cfg.iou_threshold)
            pair_total += len(out.pairs)
            pair_positive += sum(positivity)
            for row, positive in enumerate(positivity):
                b = min(int(affinity_values[row] * bins), bins - 1)
                if positive:
                    pos_counts[b] += 1
                else:
                    neg_counts[b] += 1
            for protocol in PROTOCOLS:
                ranked = rank_frame(
                    out.pairs, predicate_values, affinity_values, detections,
                    protocol, eval_cfg.pa_scoring,
                )
                for k in eval_cfg.ks:
                    r = recall_at_k(
                        ranked, detections, frame.oracle_gt or [], k, eval_cfg.iou_threshold
                    )
                    if r is not None:
                        per_frame[protocol][k].append(r)
                        video_rec[protocol][k].append(r)
            if frame.oracle_gt:
                frames_scored += 1
        ni_ratio[clip.clip_id] = 1.0 - (pair_positive / pair_total) if pair_total else 0.0
        per_video_frames[clip.clip_id] = video_rec

        if ram_cfg is not None or partitions is not None:
            if partitions is not None:
                partition = partitions[clip.clip_id]
            else:
                partition = match_middle_frame(
                    clip, record.attention, ram_cfg, model.cfg.subject_class
                )
            mid = clip.middle_frame
            if mid.oracle_gt is not None:
                metrics = pseudo_label_metrics(partition, mid)
                match_sum += metrics.match_count
                tp_sum += metrics.true_positives
                gt_sum += len(mid.oracle_gt)
                have_pseudo = True

    pseudo = None
    if have_pseudo:
        precision = tp_sum / match_sum if match_sum else 0.0
        recall = tp_sum / gt_sum if gt_sum else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        pseudo = {
            "match_count": match_sum,
            "true_positives": tp_sum,
            "precision": precision,
            "recall": recall,
            "f1": f1,
        }

    histogram = [
        {
            "bin_lo": i / bins,
            "bin_hi": (i + 1) / bins,
            "pos_count": int(pos_counts[i]),
            "neg_count": int(neg_counts[i]),
        }
        for i in range(bins)
    ]

    # Quartile subsets by per-video non-interactive pair ratio.
    ordered = sorted(ni_ratio, key=lambda cid: (-ni_ratio[cid], cid))
    quart = max(1, len(ordered) // 4)
    subsets = {"high_ni": ordered[:quart], "low_ni": ordered[-quart:]}
    subset_recalls = {}
    for name, clip_ids in subsets.items():
        agg = {p: {k: [] for k in eval_cfg.ks} for p in PROTOCOLS}
        for cid in clip_ids:
            for p in PROTOCOLS:
                for k in eval_cfg.ks:
                    agg[p][k].extend(per_video_frames[cid][p][k])
        subset_recalls[name] = _mean_recalls(agg)

    return EvalReport(
        recalls=_mean_recalls(per_frame),
        pseudo_labels=pseudo,
        histogram=histogram,
        ni_ratio_per_video=ni_ratio,
        subset_recalls=subset_recalls,
        frames_scored=frames_scored,
    )


def write_metrics_csv(report: EvalReport, path) -> None:
    lines = ["protocol,k,recall"]
    for protocol in PROTOCOLS:
        for k in sorted(report.recalls[protocol]):
            lines.append(f"{protocol},{k},{report.recalls[protocol][k]!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_histograms_csv(report: EvalReport, path) -> None:
    lines = ["bin_lo,bin_hi,pos_count,neg_count"]
    for row in report.histogram:
        lines.append(f"{row['bin_lo']!r},{row['bin_hi']!r},{row['pos_count']},{row['neg_count']}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
