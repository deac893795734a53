"""Training objectives: affinity BCE (balanced and plain), margin ranking
on the affinity Gram, multi-label relation BCE, and distillation targets.

All losses take tensors from the network plus plain index lists, return
scalar tensors, and are zero on their documented degenerate inputs.
Probabilities are clamped to [eps, 1-eps] before any log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROB_EPS = 1e-7

HARD = "hard"
SOFT = "soft"
ADAPTIVE = "adaptive"


@dataclass
class LossConfig:
    lambda_pa: float = 1.0
    lambda_pam: float = 0.1
    margin: float = 1.0
    margin_mode: str = HARD
    alpha: float = 3.0
    pa_bce_mode: str = "balanced"
    triplet_sample_cap: int = 512

    def validate(self):
        if self.lambda_pa < 0 or self.lambda_pam < 0:
            raise ValueError("loss weights must be >= 0")
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.margin_mode not in (HARD, SOFT, ADAPTIVE):
            raise ValueError(f"unknown margin_mode: {self.margin_mode}")
        if self.pa_bce_mode not in ("balanced", "standard"):
            raise ValueError(f"unknown pa_bce_mode: {self.pa_bce_mode}")
        if self.triplet_sample_cap < 1:
            raise ValueError("triplet_sample_cap must be >= 1")


def _zero() -> Tensor:
    return Tensor(np.zeros(()))


def _log_prob(values: Tensor) -> Tensor:
    return ad.log(ad.clip(values, PROB_EPS, 1.0 - PROB_EPS))


def _log_one_minus(values: Tensor) -> Tensor:
    return ad.log(ad.clip(ad.scalar_mul(values, -1.0) + 1.0, PROB_EPS, 1.0 - PROB_EPS))


def affinity_loss_balanced(affinity: Tensor, positive_idx, negative_idx) -> Tensor:
    """Class-balanced BCE: positives and negatives averaged separately.

    An empty side drops out and the surviving side takes full weight, so
    degenerate frames keep a stable gradient scale.
    """
    terms = []
    if len(positive_idx) > 0:
        terms.append(ad.reduce_mean(_log_prob(ad.take(affinity, list(positive_idx)))))
    if len(negative_idx) > 0:
        terms.append(ad.reduce_mean(_log_one_minus(ad.take(affinity, list(negative_idx)))))
    if not terms:
        return _zero()
    if len(terms) == 1:
        return ad.scalar_mul(terms[0], -1.0)
    return ad.scalar_mul(ad.add(terms[0], terms[1]), -0.5)


def affinity_loss_standard(affinity: Tensor, positive_idx, negative_idx) -> Tensor:
    """Plain BCE averaged over the union (majority class dominates)."""
    if len(positive_idx) + len(negative_idx) == 0:
        return _zero()
    parts = []
    if len(positive_idx) > 0:
        parts.append(_log_prob(ad.take(affinity, list(positive_idx))))
    if len(negative_idx) > 0:
        parts.append(_log_one_minus(ad.take(affinity, list(negative_idx))))
    stacked = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
    return ad.scalar_mul(ad.reduce_mean(stacked), -1.0)


def affinity_loss_soft_balanced(
    affinity: Tensor, targets: np.ndarray, positive_idx, negative_idx
) -> Tensor:
    """Balanced BCE against soft targets; sides fixed by the propagated label."""

    def side(idx):
        rows = ad.take(affinity, list(idx))
        t = Tensor(np.asarray([targets[i] for i in idx], dtype=np.float64))
        bce = ad.add(ad.mul(t, _log_prob(rows)),
                     ad.mul(ad.scalar_mul(t, -1.0) + 1.0, _log_one_minus(rows)))
        return ad.reduce_mean(bce)

    terms = []
    if len(positive_idx) > 0:
        terms.append(side(positive_idx))
    if len(negative_idx) > 0:
        terms.append(side(negative_idx))
    if not terms:
        return _zero()
    if len(terms) == 1:
        return ad.scalar_mul(terms[0], -1.0)
    return ad.scalar_mul(ad.add(terms[0], terms[1]), -0.5)


def relation_loss(predicate_scores: Tensor, positive_idx, targets: np.ndarray) -> Tensor:
    """Multi-label BCE over positive rows, averaged over (pair, predicate).

    ``targets`` has one row per entry of ``positive_idx``; hard 0/1 rows
    in the first training step, interpolated rows under distillation.
    """
    if len(positive_idx) == 0:
        return _zero()
    rows = ad.take(predicate_scores, list(positive_idx))
    t = Tensor(np.asarray(targets, dtype=np.float64))
    if t.shape != rows.shape:
        raise ad.ShapeError(f"relation targets {t.shape} do not match scores {rows.shape}")
    bce = ad.add(ad.mul(t, _log_prob(rows)),
                 ad.mul(ad.scalar_mul(t, -1.0) + 1.0, _log_one_minus(rows)))
    return ad.scalar_mul(ad.reduce_mean(bce), -1.0)


def hard_targets(predicates_per_row, num_predicates: int) -> np.ndarray:
    t = np.zeros((len(predicates_per_row), num_predicates))
    for i, preds in enumerate(predicates_per_row):
        for p in preds:
            t[i, p] = 1.0
    return t


def enumerate_triplets(num_positive: int, num_negative: int, cap: int, rng) -> list[tuple[int, int, int]]:
    """(anchor, positive, negative) index triplets, uniformly subsampled
    past the cap. Indices are positions within the given sets."""
    total = num_positive * (num_positive - 1) * num_negative
    if total == 0:
        return []
    if total <= cap:
        flat = range(total)
    else:
        flat = sorted(rng.choice(total, size=cap, replace=False).tolist())
    out = []
    per_anchor = (num_positive - 1) * num_negative
    for f in flat:
        a = f // per_anchor
        rem = f % per_anchor
        b = rem // num_negative
        if b >= a:
            b += 1
        n = rem % num_negative
        out.append((a, b, n))
    return out


def margin_ranking_loss(
    gram: Tensor,
    positive_rows,
    negative_rows,
    margin: float,
    mode: str = HARD,
    targets: np.ndarray | None = None,
    sample_cap: int = 512,
    rng=None,
) -> Tensor:
    """Ranking loss on one attention sequence's affinity Gram.

    Every anchor/positive pair of distinct positive rows should out-score
    the anchor paired with any negative row. Hard mode hinges at a fixed
    margin, soft mode uses log(1 + exp(gap)), adaptive mode scales the
    margin by how confident the soft targets of both comparison rows are.
    Contributes zero with fewer than two positives or no negatives.
    """
    if mode == ADAPTIVE:
        if targets is None:
            raise ValueError("adaptive margin needs per-row soft targets")
        positive_rows = [i for i in range(len(targets)) if targets[i] > 0.5]
        negative_rows = [i for i in range(len(targets)) if targets[i] <= 0.5]
    positive_rows = list(positive_rows)
    negative_rows = list(negative_rows)
    if len(positive_rows) < 2 or len(negative_rows) == 0:
        return _zero()
    if rng is None:
        rng = np.random.default_rng(0)
    triplets = enumerate_triplets(len(positive_rows), len(negative_rows), sample_cap, rng)
    m = gram.shape[0]
    flat = ad.reshape(gram, (m * m,))
    pos_entries = []
    neg_entries = []
    margins = []
    for a, b, n in triplets:
        anchor = positive_rows[a]
        pos_entries.append(anchor * m + positive_rows[b])
        neg_entries.append(anchor * m + negative_rows[n])
        if mode == ADAPTIVE:
            y_pos = targets[positive_rows[b]]
            y_neg = targets[negative_rows[n]]
            margins.append(margin * (y_pos - 0.5) * 2.0 * (0.5 - y_neg) * 2.0)
        else:
            margins.append(margin)
    gap = ad.sub(ad.take(flat, neg_entries), ad.take(flat, pos_entries))
    if mode == SOFT:
        per_triplet = ad.softplus(gap)
    else:
        per_triplet = ad.relu(ad.add(gap, Tensor(np.asarray(margins))))
    return ad.reduce_mean(per_triplet)


def soft_affinity_target(y_prop: float, teacher_affinity: float, delta_t: int, alpha: float) -> float:
    """Distance-decayed blend of the propagated label and the teacher score."""
    w = 1.0 / (1.0 + delta_t) ** alpha
    return w * y_prop + (1.0 - w) * teacher_affinity


def blend_weight(delta_t: int, alpha: float) -> float:
    return 1.0 / (1.0 + delta_t) ** alpha


@dataclass
class LossBreakdown:
    relation: float
    affinity: float
    ranking: float
    total: float


def total_loss(relation: Tensor, affinity: Tensor, ranking: Tensor, cfg: LossConfig) -> Tensor:
    return ad.add(
        relation,
        ad.add(ad.scalar_mul(affinity, cfg.lambda_pa), ad.scalar_mul(ranking, cfg.lambda_pam)),
    )
