"""Relation prediction network with dual pair embeddings.

Each candidate pair carries a relation embedding (drives predicate
classification) and an affinity embedding (drives the interaction
score). Both are refined by alternating per-frame and sliding-window
attention blocks; the affinity Gram matrix can gate the attention
logits so low-affinity pairs stop polluting context.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .matching import enumerate_pairs
from .scene import Detection, Frame, VideoClip, PERSON_CLASS


@dataclass
class ModelConfig:
    feature_dim: int = 32
    class_embed_dim: int = 8
    affinity_dim: int = 16
    num_layers: int = 2
    num_predicates: int = 6
    num_object_classes: int = 8
    temporal_window: int = 2
    pam_enabled: bool = True
    subject_class: int | None = PERSON_CLASS
    seed: int = 0

    @property
    def relation_dim(self) -> int:
        # subject + object + union features, then two class embeddings
        return 3 * self.feature_dim + 2 * self.class_embed_dim

    def validate(self):
        for name in ("feature_dim", "class_embed_dim", "affinity_dim", "num_layers",
                     "num_predicates", "num_object_classes", "temporal_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "class_embed_dim": self.class_embed_dim,
            "affinity_dim": self.affinity_dim,
            "num_layers": self.num_layers,
            "num_predicates": self.num_predicates,
            "num_object_classes": self.num_object_classes,
            "temporal_window": self.temporal_window,
            "pam_enabled": self.pam_enabled,
            "subject_class": self.subject_class,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(doc: dict) -> "ModelConfig":
        allowed = set(ModelConfig().to_dict())
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return ModelConfig(**doc)


def pair_representation_row(
    subject: Detection, obj: Detection, union_feature: np.ndarray, class_embeddings: np.ndarray
) -> np.ndarray:
    """Initial relation embedding for one ordered pair (numpy reference)."""
    if subject.feature.shape != obj.feature.shape or union_feature.shape != subject.feature.shape:
        raise ad.ShapeError(
            f"feature shapes differ: {subject.feature.shape}, {obj.feature.shape}, {union_feature.shape}"
        )
    return np.concatenate(
        [
            subject.feature,
            obj.feature,
            union_feature,
            class_embeddings[subject.class_id],
            class_embeddings[obj.class_id],
        ]
    )


def union_feature(subject: Detection, obj: Detection) -> np.ndarray:
    # Desk-scale stand-in for a pooled union-box feature.
    return np.maximum(subject.feature, obj.feature)


@dataclass
class FrameOutput:
    t: int
    pairs: list[tuple[int, int]]
    predicate_scores: Tensor | None
    affinity: Tensor | None
    affinity_gram: Tensor | None


@dataclass
class SequenceOutput:
    """Final-block attention sequence: row identities plus its affinity Gram."""

    members: list[tuple[int, int]]  # (frame t, row index within that frame)
    gram: Tensor


@dataclass
class ClipForward:
    frames: list[FrameOutput]
    sequences: list[SequenceOutput]


class RelationModel:
    """Parameterized network; forward is pure given the parameter values."""

    def __init__(self, cfg: ModelConfig, params: ParamStore | None = None):
        cfg.validate()
        self.cfg = cfg
        if params is None:
            self.params = ParamStore()
            self._init_params()
        else:
            self.params = params
            self._check_params()

    # -- parameters ---------------------------------------------------------

    def _param_shapes(self) -> dict[str, tuple[int, ...]]:
        d_r, d_p = self.cfg.relation_dim, self.cfg.affinity_dim
        shapes: dict[str, tuple[int, ...]] = {
            "class_embed": (self.cfg.num_object_classes, self.cfg.class_embed_dim),
            "init_w1": (d_r, d_p),
            "init_b1": (d_p,),
            "init_w2": (d_p, d_p),
            "init_b2": (d_p,),
        }
        for layer in range(self.cfg.num_layers):
            for kind in ("sp", "tm"):
                p = f"{kind}{layer}_"
                shapes[p + "q_w"] = (d_r, d_r)
                shapes[p + "k_w"] = (d_r, d_r)
                shapes[p + "v_w"] = (d_r, d_r)
                shapes[p + "ffn_w1"] = (d_r, 2 * d_r)
                shapes[p + "ffn_b1"] = (2 * d_r,)
                shapes[p + "ffn_w2"] = (2 * d_r, d_r)
                shapes[p + "ffn_b2"] = (d_r,)
                shapes[p + "upd_w1"] = (d_r, d_p)
                shapes[p + "upd_b1"] = (d_p,)
                shapes[p + "upd_w2"] = (d_p, d_p)
                shapes[p + "upd_b2"] = (d_p,)
        shapes["pc_w"] = (d_r, self.cfg.num_predicates)
        shapes["pc_b"] = (self.cfg.num_predicates,)
        shapes["pa_w1"] = (d_p, d_p)
        shapes["pa_b1"] = (d_p,)
        shapes["pa_w2"] = (d_p, 1)
        shapes["pa_b2"] = (1,)
        return shapes

    def _init_params(self):
        rng = np.random.default_rng(self.cfg.seed)
        # Heads start at zero so untrained scores sit exactly at 0.5.
        zero_init = {"pc_w", "pc_b", "pa_w2", "pa_b2"}
        for name, shape in self._param_shapes().items():
            if name in zero_init or "_b" in name:
                values = np.zeros(shape)
            else:
                fan_in = shape[0]
                values = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
            self.params.create(name, values)

    def _check_params(self):
        for name, shape in self._param_shapes().items():
            if name not in self.params:
                raise ValueError(f"checkpoint missing parameter {name}")
            have = self.params[name].data.shape
            if have != shape:
                raise ValueError(f"parameter {name} has shape {have}, config expects {shape}")

    def with_gating(self, pam_enabled: bool) -> "RelationModel":
        """Same weights, gating toggled (inference-time ablation)."""
        return RelationModel(replace(self.cfg, pam_enabled=pam_enabled), params=self.params)

    # -- building blocks ----------------------------------------------------

    def _linear(self, x: Tensor, w: str, b: str) -> Tensor:
        n = x.shape[0]
        return ad.add(ad.matmul(x, self.params[w]), ad.tile_rows(self.params[b], n))

    def affinity_init(self, relation_rows: Tensor) -> Tensor:
        """Project initial relation embeddings to affinity embeddings."""
        h = self._linear(relation_rows, "init_w1", "init_b1")
        h = ad.relu(ad.layer_norm(h, axis=-1))
        return self._linear(h, "init_w2", "init_b2")

    def attention_block(self, prefix: str, relation: Tensor, affinity: Tensor):
        """One gated single-head attention block.

        Returns updated relation rows, updated affinity rows, the input
        affinity Gram, and the post-softmax attention matrix.
        """
        n = relation.shape[0]
        gram = ad.matmul(affinity, ad.transpose(affinity))
        q = ad.matmul(relation, self.params[prefix + "q_w"])
        k = ad.matmul(relation, self.params[prefix + "k_w"])
        v = ad.matmul(relation, self.params[prefix + "v_w"])
        logits = ad.scalar_mul(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(self.cfg.relation_dim))
        if self.cfg.pam_enabled:
            logits = ad.mul(logits, ad.sigmoid(gram))
        weights = ad.softmax(logits, axis=-1)
        attn = ad.matmul(weights, v)

        h = ad.add(relation, attn)
        f = self._linear(ad.relu(self._linear(h, prefix + "ffn_w1", prefix + "ffn_b1")),
                         prefix + "ffn_w2", prefix + "ffn_b2")
        relation_out = ad.layer_norm(ad.add(relation, f), axis=-1)

        u = ad.relu(self._linear(attn, prefix + "upd_w1", prefix + "upd_b1"))
        affinity_out = ad.add(affinity, self._linear(u, prefix + "upd_w2", prefix + "upd_b2"))
        return relation_out, affinity_out, gram, weights

    def initial_embeddings(self, frame: Frame, pairs: list[tuple[int, int]]) -> tuple[Tensor, Tensor]:
        detections = frame.detection_map()
        subj = np.stack([detections[s].feature for s, _ in pairs])
        obj = np.stack([detections[o].feature for _, o in pairs])
        union = np.maximum(subj, obj)
        s_classes = [detections[s].class_id for s, _ in pairs]
        o_classes = [detections[o].class_id for _, o in pairs]
        emb = self.params["class_embed"]
        relation0 = ad.concat(
            [Tensor(subj), Tensor(obj), Tensor(union), ad.take(emb, s_classes), ad.take(emb, o_classes)],
            axis=1,
        )
        return relation0, self.affinity_init(relation0)

    def _windows(self, num_frames: int) -> list[list[int]]:
        w = self.cfg.temporal_window
        if num_frames <= w:
            return [list(range(num_frames))]
        return [list(range(i, i + w)) for i in range(num_frames - w + 1)]

    # -- full forward -------------------------------------------------------

    def forward(self, clip: VideoClip, pairs_per_frame=None) -> ClipForward:
        cfg = self.cfg
        if pairs_per_frame is None:
            pairs_per_frame = [
                enumerate_pairs(f.detections, cfg.subject_class) for f in clip.frames
            ]
        states: list[list | None] = []
        for frame, pairs in zip(clip.frames, pairs_per_frame):
            if not pairs:
                states.append(None)
                continue
            relation0, affinity0 = self.initial_embeddings(frame, pairs)
            states.append([pairs, relation0, affinity0])

        sequences: list[SequenceOutput] = []
        for layer in range(cfg.num_layers):
            for st in states:
                if st is None:
                    continue
                st[1], st[2], _, _ = self.attention_block(f"sp{layer}_", st[1], st[2])

            updates: dict[int, list[tuple[Tensor, Tensor]]] = {}
            layer_sequences: list[SequenceOutput] = []
            for window in self._windows(len(states)):
                occupied = [fi for fi in window if states[fi] is not None]
                if not occupied:
                    continue
                relation = ad.concat([states[fi][1] for fi in occupied], axis=0) \
                    if len(occupied) > 1 else states[occupied[0]][1]
                affinity = ad.concat([states[fi][2] for fi in occupied], axis=0) \
                    if len(occupied) > 1 else states[occupied[0]][2]
                relation2, affinity2, gram, _ = self.attention_block(f"tm{layer}_", relation, affinity)
                if layer == cfg.num_layers - 1:
                    members = []
                    for fi in occupied:
                        members.extend((clip.frames[fi].t, j) for j in range(len(states[fi][0])))
                    layer_sequences.append(SequenceOutput(members=members, gram=gram))
                offset = 0
                for fi in occupied:
                    n = len(states[fi][0])
                    updates.setdefault(fi, []).append(
                        (
                            ad.slice_axis(relation2, 0, offset, offset + n),
                            ad.slice_axis(affinity2, 0, offset, offset + n),
                        )
                    )
                    offset += n
            for fi, st in enumerate(states):
                if st is None or fi not in updates:
                    continue
                parts = updates[fi]
                if len(parts) == 1:
                    st[1], st[2] = parts[0]
                else:
                    # A frame inside several sliding windows averages its updates.
                    scale = 1.0 / len(parts)
                    r_sum = parts[0][0]
                    p_sum = parts[0][1]
                    for r_part, p_part in parts[1:]:
                        r_sum = ad.add(r_sum, r_part)
                        p_sum = ad.add(p_sum, p_part)
                    st[1] = ad.scalar_mul(r_sum, scale)
                    st[2] = ad.scalar_mul(p_sum, scale)
            if layer == cfg.num_layers - 1:
                sequences = layer_sequences

        frames_out = []
        for frame, st in zip(clip.frames, states):
            if st is None:
                frames_out.append(FrameOutput(frame.t, [], None, None, None))
                continue
            pairs, relation, affinity = st
            predicate_scores = ad.sigmoid(self._linear(relation, "pc_w", "pc_b"))
            pa_hidden = ad.relu(self._linear(affinity, "pa_w1", "pa_b1"))
            pa_logit = self._linear(pa_hidden, "pa_w2", "pa_b2")
            pa = ad.sigmoid(ad.reshape(pa_logit, (len(pairs),)))
            gram = ad.matmul(affinity, ad.transpose(affinity))
            frames_out.append(FrameOutput(frame.t, pairs, predicate_scores, pa, gram))
        return ClipForward(frames=frames_out, sequences=sequences)
