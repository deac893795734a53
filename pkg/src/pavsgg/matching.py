"""Grounded pseudo-label matching: reliability gating, grounding scores,
and the matched/unmatched pair partition that drives all supervision.

Matching turns class-level annotations into per-detection labels. When
enabled and the attention map carries mass, candidates are scored by
how much attention mass their box captures (concentration times a
sigmoid of mass density); otherwise matching falls back to assigning
every class-matched detection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import (
    AttentionMap,
    BoundingBox,
    Detection,
    Frame,
    GroundTruthTriplet,
    PERSON_CLASS,
    VideoClip,
    box_cell_mask,
    iou,
)


class ZeroAttentionMass(ValueError):
    """Attention map with zero total mass cannot be normalized."""


class EmptyBoxProjection(ValueError):
    """Box covers no grid cells, so per-cell density is undefined."""


@dataclass
class RamConfig:
    reliability_threshold: float = 0.3
    grounding_threshold: float = 0.2
    enabled: bool = True

    def validate(self):
        if not (0.0 <= self.reliability_threshold <= 1.0):
            raise ValueError(f"reliability_threshold out of [0, 1]: {self.reliability_threshold}")
        if not (0.0 <= self.grounding_threshold < 1.0):
            raise ValueError(f"grounding_threshold out of [0, 1): {self.grounding_threshold}")


@dataclass
class ReliabilityResult:
    """Spatial-concentration reliability of one attention map."""

    spatial_dispersion: float
    score: float
    centroid: tuple[float, float]
    total_mass: float


def reliability(a: AttentionMap) -> ReliabilityResult:
    """Score in (0, 1] from centroid-relative dispersion; 0 for empty maps.

    Coordinates are cell indices, so the score is invariant to uniform
    rescaling of the map and to translations that stay on the grid.
    """
    total = a.total_mass()
    if total <= 0.0:
        return ReliabilityResult(0.0, 0.0, (0.0, 0.0), 0.0)
    w = a.values / total
    xs = np.arange(a.width, dtype=np.float64)
    ys = np.arange(a.height, dtype=np.float64)
    mu_x = float((w.sum(axis=0) * xs).sum())
    mu_y = float((w.sum(axis=1) * ys).sum())
    sq = (xs[None, :] - mu_x) ** 2 + (ys[:, None] - mu_y) ** 2
    dispersion = math.sqrt(float((w * sq).sum()))
    score = math.exp(-dispersion / math.sqrt(a.height**2 + a.width**2))
    return ReliabilityResult(dispersion, score, (mu_x, mu_y), total)


def concentration(a: AttentionMap, box: BoundingBox) -> float:
    """Fraction of total attention mass inside the box's cells."""
    total = a.total_mass()
    if total <= 0.0:
        raise ZeroAttentionMass("attention map has zero total mass")
    mask = box_cell_mask(box, a.height, a.width)
    return float(a.values[mask].sum()) / total


def density(a: AttentionMap, box: BoundingBox) -> float:
    """In-box attention mass per covered grid cell."""
    mask = box_cell_mask(box, a.height, a.width)
    cells = int(mask.sum())
    if cells == 0:
        raise EmptyBoxProjection(f"box covers no cells: {box}")
    return float(a.values[mask].sum()) / cells


def grounding_score(a: AttentionMap, box: BoundingBox) -> float:
    c = concentration(a, box)
    rho = density(a, box)
    return c * (1.0 / (1.0 + math.exp(-rho)))


@dataclass
class CandidateScore:
    detection_id: int
    concentration: float
    density: float
    score: float


@dataclass
class GroundingResult:
    candidates: list[CandidateScore]
    best: int | None


def score_candidates(a: AttentionMap, candidates: list[Detection], threshold: float) -> GroundingResult:
    """Grounding score per candidate; best is the argmax above threshold.

    Ties break toward the lowest detection id; a box covering no cells
    scores 0 (it captures no mass).
    """
    scored = []
    for det in sorted(candidates, key=lambda d: d.id):
        mask = box_cell_mask(det.box, a.height, a.width)
        cells = int(mask.sum())
        if cells == 0:
            scored.append(CandidateScore(det.id, 0.0, 0.0, 0.0))
            continue
        c = concentration(a, det.box)
        rho = density(a, det.box)
        scored.append(CandidateScore(det.id, c, rho, c * (1.0 / (1.0 + math.exp(-rho)))))
    best = None
    best_score = -1.0
    for cand in scored:
        if cand.score > best_score:
            best, best_score = cand.detection_id, cand.score
    if best_score <= threshold:
        best = None
    return GroundingResult(candidates=scored, best=best)


GROUNDED = "grounded"
CLASS_FALLBACK = "class_fallback"
DISCARDED = "discarded"


@dataclass(frozen=True)
class MatchDecision:
    """Outcome of matching one annotation entity to detections."""

    kind: str
    detection_id: int | None = None
    candidate_ids: tuple[int, ...] = ()

    @staticmethod
    def grounded(detection_id: int) -> "MatchDecision":
        return MatchDecision(GROUNDED, detection_id=detection_id)

    @staticmethod
    def fallback(ids) -> "MatchDecision":
        return MatchDecision(CLASS_FALLBACK, candidate_ids=tuple(sorted(ids)))

    @staticmethod
    def discarded() -> "MatchDecision":
        return MatchDecision(DISCARDED)

    def resolved_ids(self) -> tuple[int, ...]:
        if self.kind == GROUNDED:
            return (self.detection_id,)
        if self.kind == CLASS_FALLBACK:
            return self.candidate_ids
        return ()


def match_entity(
    entity_class: int,
    detections: list[Detection],
    a: AttentionMap | None,
    cfg: RamConfig,
) -> MatchDecision:
    """Resolve one entity class to detections.

    No class-matched detection discards the annotation outright. With
    matching enabled and a usable map, a reliability score above the
    threshold triggers grounded selection; a grounded pass whose best
    score never clears the grounding threshold discards the entity.
    Everything else falls back to class-level matching.
    """
    candidates = sorted((d for d in detections if d.class_id == entity_class), key=lambda d: d.id)
    if not candidates:
        return MatchDecision.discarded()
    if cfg.enabled and a is not None and a.total_mass() > 0.0:
        rel = reliability(a)
        if rel.score >= cfg.reliability_threshold:
            result = score_candidates(a, candidates, cfg.grounding_threshold)
            if result.best is not None:
                return MatchDecision.grounded(result.best)
            return MatchDecision.discarded()
    return MatchDecision.fallback(d.id for d in candidates)


def enumerate_pairs(detections: list[Detection], subject_class: int | None = PERSON_CLASS):
    """Ordered candidate (subject, object) detection-id pairs for a frame.

    Subjects are restricted to ``subject_class`` when given (index 0 is
    the person class by convention); pass None to allow all subjects.
    """
    ordered = sorted(detections, key=lambda d: d.id)
    subjects = ordered if subject_class is None else [d for d in ordered if d.class_id == subject_class]
    pairs = []
    for s in subjects:
        for o in ordered:
            if o.id != s.id:
                pairs.append((s.id, o.id))
    return pairs


@dataclass(frozen=True)
class PositivePair:
    subject_id: int
    object_id: int
    predicates: tuple[int, ...]


@dataclass
class MatchPartition:
    """Disjoint positive/negative cover of a frame's candidate pairs."""

    frame_index: int
    positives: list[PositivePair]
    negatives: list[tuple[int, int]]

    def pair_count(self) -> int:
        return len(self.positives) + len(self.negatives)

    def positive_pairs(self) -> list[tuple[int, int]]:
        return [(p.subject_id, p.object_id) for p in self.positives]


def build_partition(
    frame: Frame,
    decisions,
    subject_class: int | None = PERSON_CLASS,
) -> MatchPartition:
    """Combine per-annotation entity decisions into the P+/P- partition.

    The two entity decisions are independent: a grounded side contributes
    its single detection, a fallback side all class candidates, and any
    discarded side removes the annotation entirely. Positive pairs carry
    the union of predicates across annotations resolving to them.
    """
    pairs = enumerate_pairs(frame.detections, subject_class)
    pair_set = set(pairs)
    predicates: dict[tuple[int, int], set[int]] = {}
    for annotation, subject_decision, object_decision in decisions:
        if subject_decision.kind == DISCARDED or object_decision.kind == DISCARDED:
            continue
        for s in subject_decision.resolved_ids():
            for o in object_decision.resolved_ids():
                if s == o or (s, o) not in pair_set:
                    continue
                predicates.setdefault((s, o), set()).add(annotation.predicate)
    positives = [
        PositivePair(s, o, tuple(sorted(predicates[(s, o)])))
        for (s, o) in pairs
        if (s, o) in predicates
    ]
    negatives = [(s, o) for (s, o) in pairs if (s, o) not in predicates]
    return MatchPartition(frame_index=frame.t, positives=positives, negatives=negatives)


def match_middle_frame(
    clip: VideoClip,
    attention: dict[tuple[int, int, str], AttentionMap],
    cfg: RamConfig,
    subject_class: int | None = PERSON_CLASS,
) -> MatchPartition:
    """Run entity matching for every middle-frame annotation of a clip."""
    mid = clip.middle_index
    frame = clip.frames[mid]
    decisions = []
    for ann_idx, ann in enumerate(clip.annotations):
        a_subject = attention.get((mid, ann_idx, "subject"))
        a_object = attention.get((mid, ann_idx, "object"))
        decisions.append(
            (
                ann,
                match_entity(ann.subject_class, frame.detections, a_subject, cfg),
                match_entity(ann.object_class, frame.detections, a_object, cfg),
            )
        )
    return build_partition(frame, decisions, subject_class)


@dataclass
class PseudoLabelMetrics:
    match_count: int
    true_positives: int
    precision: float
    recall: float
    f1: float

    @staticmethod
    def from_counts(match_count: int, true_positives: int, gt_count: int) -> "PseudoLabelMetrics":
        precision = true_positives / match_count if match_count > 0 else 0.0
        recall = true_positives / gt_count if gt_count > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return PseudoLabelMetrics(match_count, true_positives, precision, recall, f1)


def pair_matches_gt(
    subject: Detection,
    obj: Detection,
    gt: GroundTruthTriplet,
    iou_threshold: float = 0.5,
) -> bool:
    return (
        subject.class_id == gt.subject_class
        and obj.class_id == gt.object_class
        and iou(subject.box, gt.subject_box) > iou_threshold
        and iou(obj.box, gt.object_box) > iou_threshold
    )


def pseudo_label_metrics(partition: MatchPartition, frame: Frame) -> PseudoLabelMetrics:
    """Precision/recall of the positive set against the frame's oracle."""
    if frame.oracle_gt is None:
        raise ValueError("pseudo-label metrics need oracle ground truth")
    detections = frame.detection_map()
    tp = 0
    for pos in partition.positives:
        s = detections[pos.subject_id]
        o = detections[pos.object_id]
        if any(pair_matches_gt(s, o, gt) for gt in frame.oracle_gt):
            tp += 1
    return PseudoLabelMetrics.from_counts(len(partition.positives), tp, len(frame.oracle_gt))
