"""Two-step training driver: middle-frame pseudo-label training, IoU label
propagation to neighboring frames, and distance-aware distillation.

Training is bit-deterministic under a fixed seed: clip order, parameter
init, and ranking-loss subsampling all derive from the config seeds, and
each optimization step runs on a fresh tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import ParamStore, Tape, Tensor
from .matching import MatchPartition, PositivePair, enumerate_pairs
from .model import ClipForward, ModelConfig, RelationModel
from .scene import ClipRecord, PERSON_CLASS, VideoClip, iou


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def cosine_lr(base: float, step: int, total_steps: int) -> float:
    """Cosine anneal from base to 0 across total_steps."""
    if total_steps <= 0:
        return base
    step = min(step, total_steps)
    return base * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def adamw_step(store: ParamStore, cfg: TrainConfig, lr: float) -> None:
    """Decoupled-weight-decay adaptive moment update over all parameters."""
    store.step += 1
    t = store.step
    for name, p in store.items():
        g = p.grad
        m = store.moment1[name]
        v = store.moment2[name]
        m[...] = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v[...] = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p.data)


# ---------------------------------------------------------------------------
# Label propagation


@dataclass
class PropagatedFrame:
    t: int
    delta_t: int
    partition: MatchPartition


def _find_propagated(detections, reference, iou_threshold: float) -> int | None:
    """Same-class detection with best IoU >= threshold; ties pick lowest id."""
    best_id = None
    best_iou = 0.0
    for det in sorted(detections, key=lambda d: d.id):
        if det.class_id != reference.class_id:
            continue
        overlap = iou(det.box, reference.box)
        if overlap >= iou_threshold and overlap > best_iou:
            best_id, best_iou = det.id, overlap
    return best_id


def propagate_labels(
    clip: VideoClip,
    middle_partition: MatchPartition,
    subject_class: int | None = PERSON_CLASS,
    iou_threshold: float = 0.5,
) -> list[PropagatedFrame]:
    """Copy middle-frame positives to frames whose detections track them."""
    mid = clip.middle_index
    mid_dets = clip.middle_frame.detection_map()
    out = []
    for index, frame in enumerate(clip.frames):
        if index == mid:
            out.append(PropagatedFrame(frame.t, 0, middle_partition))
            continue
        carried: dict[tuple[int, int], set[int]] = {}
        for pos in middle_partition.positives:
            s_new = _find_propagated(frame.detections, mid_dets[pos.subject_id], iou_threshold)
            o_new = _find_propagated(frame.detections, mid_dets[pos.object_id], iou_threshold)
            if s_new is None or o_new is None or s_new == o_new:
                continue
            carried.setdefault((s_new, o_new), set()).update(pos.predicates)
        pairs = enumerate_pairs(frame.detections, subject_class)
        positives = [
            PositivePair(s, o, tuple(sorted(carried[(s, o)])))
            for (s, o) in pairs
            if (s, o) in carried
        ]
        negatives = [(s, o) for (s, o) in pairs if (s, o) not in carried]
        out.append(
            PropagatedFrame(
                frame.t,
                abs(index - mid),
                MatchPartition(frame_index=frame.t, positives=positives, negatives=negatives),
            )
        )
    return out


# ---------------------------------------------------------------------------
# Per-clip supervision and loss assembly


@dataclass
class FrameSupervision:
    """Row-level labels for one frame of a forward pass.

    ``affinity_targets`` is None for hard (first-step) training and a
    per-row soft target vector under distillation.
    """

    t: int
    positive_rows: list[int]
    negative_rows: list[int]
    relation_targets: np.ndarray
    affinity_targets: np.ndarray | None = None


def _partition_rows(pairs, partition: MatchPartition):
    row_of = {pair: i for i, pair in enumerate(pairs)}
    pos_rows, pos_predicates = [], []
    for pos in partition.positives:
        key = (pos.subject_id, pos.object_id)
        if key in row_of:
            pos_rows.append(row_of[key])
            pos_predicates.append(pos.predicates)
    neg_rows = [row_of[p] for p in partition.negatives if p in row_of]
    return pos_rows, neg_rows, pos_predicates


def step1_supervision(
    forward: ClipForward, clip: VideoClip, partition: MatchPartition, num_predicates: int
) -> dict[int, FrameSupervision]:
    """Hard labels on the annotated middle frame only."""
    mid_t = clip.frames[clip.middle_index].t
    out = forward.frames[clip.middle_index]
    if not out.pairs:
        return {}
    pos_rows, neg_rows, pos_predicates = _partition_rows(out.pairs, partition)
    return {
        mid_t: FrameSupervision(
            t=mid_t,
            positive_rows=pos_rows,
            negative_rows=neg_rows,
            relation_targets=L.hard_targets(pos_predicates, num_predicates),
        )
    }


def step2_supervision(
    forward: ClipForward,
    clip: VideoClip,
    propagated: list[PropagatedFrame],
    teacher_affinity: dict[int, np.ndarray],
    teacher_predicates: dict[int, np.ndarray],
    num_predicates: int,
    alpha: float,
) -> dict[int, FrameSupervision]:
    """Distance-decayed blend of propagated labels with teacher predictions."""
    out: dict[int, FrameSupervision] = {}
    by_index = {clip.frames[i].t: i for i in range(len(clip.frames))}
    for prop in propagated:
        frame_out = forward.frames[by_index[prop.t]]
        if not frame_out.pairs:
            continue
        pos_rows, neg_rows, pos_predicates = _partition_rows(frame_out.pairs, prop.partition)
        w = L.blend_weight(prop.delta_t, alpha)
        t_pa = teacher_affinity[prop.t]
        pos_set = set(pos_rows)
        soft = np.empty(len(frame_out.pairs))
        for row in range(len(frame_out.pairs)):
            y_prop = 1.0 if row in pos_set else 0.0
            soft[row] = w * y_prop + (1.0 - w) * t_pa[row]
        hard = L.hard_targets(pos_predicates, num_predicates)
        teacher_rows = teacher_predicates[prop.t][pos_rows] if pos_rows else hard
        relation_targets = w * hard + (1.0 - w) * teacher_rows
        out[prop.t] = FrameSupervision(
            t=prop.t,
            positive_rows=pos_rows,
            negative_rows=neg_rows,
            relation_targets=relation_targets,
            affinity_targets=soft,
        )
    return out


def clip_loss(
    forward: ClipForward,
    supervision: dict[int, FrameSupervision],
    loss_cfg: L.LossConfig,
    rng,
    ranking_mode: str,
) -> tuple[Tensor, L.LossBreakdown] | None:
    """Assemble L_rel + lambda_pa * L_pa + lambda_pam * L_pam for one clip."""
    frame_by_t = {f.t: f for f in forward.frames}
    labeled = [supervision[t] for t in sorted(supervision)]
    labeled = [s for s in labeled if frame_by_t[s.t].pairs]
    if not labeled:
        return None

    # Pool rows across labeled frames so per-clip losses see one P+/P-.
    affinity_parts, predicate_parts = [], []
    pos_all, neg_all, rel_target_rows = [], [], []
    soft_all: list[float] = []
    offset = 0
    use_soft = any(s.affinity_targets is not None for s in labeled)
    for sup in labeled:
        out = frame_by_t[sup.t]
        affinity_parts.append(out.affinity)
        predicate_parts.append(out.predicate_scores)
        pos_all.extend(offset + r for r in sup.positive_rows)
        neg_all.extend(offset + r for r in sup.negative_rows)
        if len(sup.positive_rows) > 0:
            rel_target_rows.append(sup.relation_targets)
        if use_soft:
            targets = sup.affinity_targets
            if targets is None:
                targets = np.array(
                    [1.0 if r in set(sup.positive_rows) else 0.0 for r in range(len(out.pairs))]
                )
            soft_all.extend(targets.tolist())
        offset += len(out.pairs)

    affinity_all = affinity_parts[0] if len(affinity_parts) == 1 else ad.concat(affinity_parts, axis=0)
    predicates_all = (
        predicate_parts[0] if len(predicate_parts) == 1 else ad.concat(predicate_parts, axis=0)
    )

    rel_targets = np.concatenate(rel_target_rows, axis=0) if rel_target_rows else np.zeros((0, 1))
    loss_rel = L.relation_loss(predicates_all, pos_all, rel_targets)

    if loss_cfg.lambda_pa > 0:
        if use_soft:
            loss_pa = L.affinity_loss_soft_balanced(
                affinity_all, np.asarray(soft_all), pos_all, neg_all
            )
        elif loss_cfg.pa_bce_mode == "standard":
            loss_pa = L.affinity_loss_standard(affinity_all, pos_all, neg_all)
        else:
            loss_pa = L.affinity_loss_balanced(affinity_all, pos_all, neg_all)
    else:
        loss_pa = Tensor(np.zeros(()))

    if loss_cfg.lambda_pam > 0:
        seq_losses = []
        for seq in forward.sequences:
            pos_rows, neg_rows = [], []
            targets_seq = np.full(len(seq.members), np.nan)
            for idx, (t, row) in enumerate(seq.members):
                sup = supervision.get(t)
                if sup is None:
                    continue
                if row in sup.positive_rows:
                    pos_rows.append(idx)
                elif row in sup.negative_rows:
                    neg_rows.append(idx)
                if sup.affinity_targets is not None:
                    targets_seq[idx] = sup.affinity_targets[row]
            if ranking_mode == L.ADAPTIVE:
                if np.isnan(targets_seq).any():
                    continue
                term = L.margin_ranking_loss(
                    seq.gram, [], [], loss_cfg.margin, L.ADAPTIVE, targets_seq,
                    loss_cfg.triplet_sample_cap, rng,
                )
            else:
                if len(pos_rows) < 2 or len(neg_rows) == 0:
                    continue
                term = L.margin_ranking_loss(
                    seq.gram, pos_rows, neg_rows, loss_cfg.margin, ranking_mode, None,
                    loss_cfg.triplet_sample_cap, rng,
                )
            seq_losses.append(term)
        if seq_losses:
            total_seq = seq_losses[0]
            for term in seq_losses[1:]:
                total_seq = ad.add(total_seq, term)
            loss_pam = ad.scalar_mul(total_seq, 1.0 / len(seq_losses))
        else:
            loss_pam = Tensor(np.zeros(()))
    else:
        loss_pam = Tensor(np.zeros(()))

    total = L.total_loss(loss_rel, loss_pa, loss_pam, loss_cfg)
    breakdown = L.LossBreakdown(
        relation=float(loss_rel.data),
        affinity=float(loss_pa.data),
        ranking=float(loss_pam.data),
        total=float(total.data),
    )
    return total, breakdown


# ---------------------------------------------------------------------------
# Training drivers


@dataclass
class TrainResult:
    model: RelationModel
    log_rows: list[dict]


def _teacher_outputs(teacher: RelationModel, clip: VideoClip):
    forward = teacher.forward(clip)
    affinity = {}
    predicates = {}
    for out in forward.frames:
        if out.pairs:
            affinity[out.t] = out.affinity.data.copy()
            predicates[out.t] = out.predicate_scores.data.copy()
        else:
            affinity[out.t] = np.zeros(0)
            predicates[out.t] = np.zeros((0, teacher.cfg.num_predicates))
    return affinity, predicates


def _run_epochs(
    model: RelationModel,
    records: list[ClipRecord],
    supervision_fn,
    loss_cfg: L.LossConfig,
    train_cfg: TrainConfig,
    ranking_mode: str,
) -> list[dict]:
    total_steps = train_cfg.epochs * len(records)
    log_rows = []
    for epoch in range(train_cfg.epochs):
        order = np.random.default_rng([train_cfg.seed, epoch, 0xE90C]).permutation(len(records))
        sums = np.zeros(4)
        seen = 0
        lr = cosine_lr(train_cfg.learning_rate, model.params.step, total_steps)
        for clip_pos in order:
            record = records[int(clip_pos)]
            rng = np.random.default_rng([train_cfg.seed, epoch, int(clip_pos), 0x7A1])
            with Tape():
                forward = model.forward(record.clip)
                supervision = supervision_fn(record, forward)
                result = clip_loss(forward, supervision, loss_cfg, rng, ranking_mode)
                if result is None:
                    continue
                total, breakdown = result
                model.params.zero_grad()
                ad.backward(total)
            lr = cosine_lr(train_cfg.learning_rate, model.params.step, total_steps)
            adamw_step(model.params, train_cfg, lr)
            sums += (breakdown.relation, breakdown.affinity, breakdown.ranking, breakdown.total)
            seen += 1
        means = sums / max(seen, 1)
        log_rows.append(
            {
                "epoch": epoch,
                "loss_rel": float(means[0]),
                "loss_pa": float(means[1]),
                "loss_pam": float(means[2]),
                "total": float(means[3]),
                "lr": float(lr),
            }
        )
    return log_rows


def train_step1(
    records: list[ClipRecord],
    partitions: dict[str, MatchPartition],
    model_cfg: ModelConfig,
    loss_cfg: L.LossConfig,
    train_cfg: TrainConfig,
) -> TrainResult:
    """Teacher training on annotated middle frames with hard labels."""
    if not records:
        raise ValueError("empty dataset")
    loss_cfg.validate()
    train_cfg.validate()
    model = RelationModel(model_cfg)
    ranking_mode = loss_cfg.margin_mode if loss_cfg.margin_mode != L.ADAPTIVE else L.HARD

    def supervision_fn(record, forward):
        return step1_supervision(
            forward, record.clip, partitions[record.clip.clip_id], model_cfg.num_predicates
        )

    rows = _run_epochs(model, records, supervision_fn, loss_cfg, train_cfg, ranking_mode)
    return TrainResult(model=model, log_rows=rows)


def train_step2(
    records: list[ClipRecord],
    partitions: dict[str, MatchPartition],
    teacher: RelationModel,
    model_cfg: ModelConfig,
    loss_cfg: L.LossConfig,
    train_cfg: TrainConfig,
) -> TrainResult:
    """Student training on all frames: propagated labels blended with the
    teacher's predictions, decaying with temporal distance."""
    if not records:
        raise ValueError("empty dataset")
    loss_cfg.validate()
    train_cfg.validate()
    model = RelationModel(model_cfg)

    propagated = {
        r.clip.clip_id: propagate_labels(
            r.clip, partitions[r.clip.clip_id], model_cfg.subject_class
        )
        for r in records
    }
    teacher_cache = {r.clip.clip_id: _teacher_outputs(teacher, r.clip) for r in records}

    def supervision_fn(record, forward):
        t_pa, t_pc = teacher_cache[record.clip.clip_id]
        return step2_supervision(
            forward,
            record.clip,
            propagated[record.clip.clip_id],
            t_pa,
            t_pc,
            model_cfg.num_predicates,
            loss_cfg.alpha,
        )

    ranking_mode = L.ADAPTIVE if loss_cfg.margin_mode == L.ADAPTIVE else loss_cfg.margin_mode
    rows = _run_epochs(model, records, supervision_fn, loss_cfg, train_cfg, ranking_mode)
    return TrainResult(model=model, log_rows=rows)


def write_train_log(rows: list[dict], path) -> None:
    lines = ["epoch,loss_rel,loss_pa,loss_pam,total,lr"]
    for row in rows:
        lines.append(
            f"{row['epoch']},{row['loss_rel']!r},{row['loss_pa']!r},"
            f"{row['loss_pam']!r},{row['total']!r},{row['lr']!r}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
