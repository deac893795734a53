"""Synthetic world: IoU geometry, generator contracts, attention synthesis,
and dataset file round-trips."""

import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pavsgg.matching import enumerate_pairs, pair_matches_gt, reliability
from pavsgg.scene import (
    ATTN_GRID,
    BoundingBox,
    Frame,
    GenConfig,
    UnlocalizedTriplet,
    attention_from_dict,
    attention_to_dict,
    box_cell_mask,
    box_cells,
    clip_from_dict,
    clip_to_dict,
    dump_json,
    generate_clip,
    generate_dataset,
    iou,
    synthesize_attention,
)


def rasterized_iou(a: BoundingBox, b: BoundingBox, step=0.005) -> float:
    """Independent oracle: count sample points inside each box."""
    x_lo = min(a.x1, b.x1)
    x_hi = max(a.x2, b.x2)
    y_lo = min(a.y1, b.y1)
    y_hi = max(a.y2, b.y2)
    xs = np.arange(x_lo + step / 2, x_hi, step)
    ys = np.arange(y_lo + step / 2, y_hi, step)
    gx, gy = np.meshgrid(xs, ys)
    in_a = (gx >= a.x1) & (gx <= a.x2) & (gy >= a.y1) & (gy <= a.y2)
    in_b = (gx >= b.x1) & (gx <= b.x2) & (gy >= b.y1) & (gy <= b.y2)
    inter = np.count_nonzero(in_a & in_b)
    union = np.count_nonzero(in_a | in_b)
    return inter / union


boxes = st.builds(
    lambda x1, y1, w, h: BoundingBox(x1, y1, x1 + w, y1 + h),
    st.floats(0, 400),
    st.floats(0, 400),
    st.floats(1, 100),
    st.floats(1, 100),
)


class TestIou:
    def test_identical_boxes(self):
        b = BoundingBox(10, 20, 50, 90)
        assert iou(b, b) == 1.0

    def test_disjoint_boxes(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 30, 30)) == 0.0

    def test_hand_geometry_with_raster_oracle(self):
        a = BoundingBox(0, 0, 2, 2)
        b = BoundingBox(1, 0, 3, 2)
        assert iou(a, b) == pytest.approx(2 / 6, abs=1e-12)
        assert iou(a, b) == pytest.approx(rasterized_iou(a, b), abs=2e-3)

    def test_touching_edges_are_disjoint(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(10, 0, 20, 10)) == 0.0

    @settings(max_examples=150, deadline=None)
    @given(boxes, boxes)
    def test_symmetric_and_bounded(self, a, b):
        ab = iou(a, b)
        assert ab == iou(b, a)
        assert 0.0 <= ab <= 1.0 + 1e-12

    @settings(max_examples=100, deadline=None)
    @given(boxes)
    def test_self_iou_is_one(self, b):
        assert iou(b, b) == 1.0

    def test_invalid_box_rejected(self):
        with pytest.raises(ValueError):
            BoundingBox(5, 0, 5, 10)
        with pytest.raises(ValueError):
            BoundingBox(-1, 0, 5, 10)


class TestBoxCellProjection:
    def test_full_grid_box_covers_everything(self):
        box = BoundingBox(0, 0, 512, 512)
        assert len(box_cells(box, 8, 8)) == 64

    def test_sliver_between_cell_centers_covers_nothing(self):
        # 8x8 grid over 512px: centers at 32, 96, ...; (33..60) misses all
        box = BoundingBox(33, 33, 60, 60)
        assert box_cells(box, 8, 8) == []

    def test_mask_matches_cell_list(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            x1, y1 = rng.uniform(0, 400, size=2)
            box = BoundingBox(x1, y1, x1 + rng.uniform(5, 110), y1 + rng.uniform(5, 110))
            mask = box_cell_mask(box, 16, 16)
            cells = box_cells(box, 16, 16)
            assert int(mask.sum()) == len(cells)
            for i, j in cells:
                assert mask[i, j]


class TestGenerator:
    def test_same_config_and_seed_is_field_identical(self):
        cfg = GenConfig(seed=4)
        a = generate_clip(cfg, 3)
        b = generate_clip(cfg, 3)
        assert dump_json(clip_to_dict(a)) == dump_json(clip_to_dict(b))

    def test_different_clip_seeds_differ(self):
        cfg = GenConfig(seed=4)
        assert dump_json(clip_to_dict(generate_clip(cfg, 0))) != dump_json(
            clip_to_dict(generate_clip(cfg, 1))
        )

    def test_no_distractors_everyone_is_interactive(self):
        cfg = GenConfig(
            triplets_per_clip=1, distractors_per_frame=0, duplicate_instance_prob=0.0, seed=1
        )
        clip = generate_clip(cfg, 0)
        frame = clip.middle_frame
        assert len(frame.detections) == 2  # person + the single object
        dets = frame.detection_map()
        gt = frame.oracle_gt[0]
        assert pair_matches_gt(dets[0], dets[1], gt)

    def test_high_noninteractive_pair_regime(self):
        cfg = GenConfig(triplets_per_clip=2, distractors_per_frame=16, frames_per_clip=5, seed=0)
        for clip_seed in range(4):
            clip = generate_clip(cfg, clip_seed)
            for frame in clip.frames:
                pairs = enumerate_pairs(frame.detections, 0)
                dets = frame.detection_map()
                interactive = sum(
                    any(pair_matches_gt(dets[s], dets[o], gt) for gt in frame.oracle_gt)
                    for s, o in pairs
                )
                assert 1.0 - interactive / len(pairs) > 0.9

    def test_annotations_have_instances_in_middle_frame(self):
        cfg = GenConfig(seed=9)
        for clip_seed in range(5):
            clip = generate_clip(cfg, clip_seed)
            mid = clip.middle_frame
            classes_gt = {(g.subject_class, g.predicate, g.object_class) for g in mid.oracle_gt}
            for ann in clip.annotations:
                assert (ann.subject_class, ann.predicate, ann.object_class) in classes_gt

    def test_confidence_and_feature_invariants(self):
        cfg = GenConfig(seed=2)
        clip = generate_clip(cfg, 7)
        for frame in clip.frames:
            for det in frame.detections:
                assert 0.0 < det.confidence <= 1.0
                assert det.feature.shape == (cfg.feature_dim,)

    def test_noiseless_features_encode_class_and_interaction(self):
        cfg = GenConfig(seed=2, feature_noise_std=0.0)
        clip = generate_clip(cfg, 7)
        frame = clip.middle_frame
        for det in frame.detections:
            onehot = det.feature[: cfg.num_object_classes]
            assert onehot[det.class_id] == 1.0
            assert onehot.sum() == 1.0
            assert det.feature[cfg.num_object_classes] in (0.0, 1.0)
        # the person participates in every relation, so its flag is set
        assert frame.detections[0].feature[cfg.num_object_classes] == 1.0
        # one interactive object per annotation carries the flag too
        flagged = sum(d.feature[cfg.num_object_classes] for d in frame.detections)
        assert flagged == 1 + len(clip.annotations)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            GenConfig(clips=0).validate()
        with pytest.raises(ValueError):
            GenConfig(feature_dim=4, num_object_classes=8).validate()
        with pytest.raises(ValueError):
            GenConfig(attention_quality=1.5).validate()


class TestAttentionSynthesis:
    def _scene(self, seed=3):
        cfg = GenConfig(seed=seed, duplicate_instance_prob=1.0)
        clip = generate_clip(cfg, 0)
        return clip.middle_frame, clip.annotations[0]

    def test_quality_one_argmax_inside_target_box(self):
        frame, ann = self._scene()
        a = synthesize_attention(frame, ann, "object", quality=1.0, seed=1)
        i, j = np.unravel_index(np.argmax(a.values), a.values.shape)
        gt = next(
            g
            for g in frame.oracle_gt
            if (g.subject_class, g.predicate, g.object_class)
            == (ann.subject_class, ann.predicate, ann.object_class)
        )
        assert (int(i), int(j)) in box_cells(gt.object_box, ATTN_GRID, ATTN_GRID)

    def test_quality_zero_is_uniform(self):
        frame, ann = self._scene()
        a = synthesize_attention(frame, ann, "object", quality=0.0, seed=1)
        np.testing.assert_allclose(a.values, 1.0 / (ATTN_GRID**2), atol=1e-6)

    def test_midway_quality_less_reliable_than_sharp(self):
        frame, ann = self._scene()
        sharp = synthesize_attention(frame, ann, "object", quality=1.0, seed=1)
        fuzzy = synthesize_attention(frame, ann, "object", quality=0.5, seed=1)
        assert reliability(fuzzy).score < reliability(sharp).score

    def test_absent_entity_gives_near_uniform(self):
        frame, _ = self._scene()
        ghost = UnlocalizedTriplet(0, 0, 99)
        frame = Frame(t=frame.t, detections=frame.detections, oracle_gt=[])
        a = synthesize_attention(frame, ghost, "object", quality=1.0, seed=2)
        assert a.values.max() / a.values.min() < 1.01

    def test_nonnegative_with_positive_mass(self):
        rng = np.random.default_rng(0)
        for clip_seed in range(5):
            cfg = GenConfig(seed=int(rng.integers(100)))
            clip = generate_clip(cfg, clip_seed)
            for side in ("subject", "object"):
                a = synthesize_attention(
                    clip.middle_frame, clip.annotations[0], side,
                    quality=float(rng.uniform()), seed=int(rng.integers(1000)),
                )
                assert np.all(a.values >= 0.0)
                assert a.values.max() > 0.0

    def test_deterministic_per_seed(self):
        frame, ann = self._scene()
        a = synthesize_attention(frame, ann, "subject", quality=0.4, seed=9)
        b = synthesize_attention(frame, ann, "subject", quality=0.4, seed=9)
        assert np.array_equal(a.values, b.values)


class TestDatasetFiles:
    def test_clip_json_roundtrip_is_stable(self):
        clip = generate_clip(GenConfig(seed=6), 2)
        text1 = dump_json(clip_to_dict(clip))
        text2 = dump_json(clip_to_dict(clip_from_dict(json.loads(text1))))
        assert text1 == text2

    def test_attention_json_roundtrip(self):
        cfg = GenConfig(seed=6, clips=1)
        _, attn = generate_dataset(cfg)[0]
        amap = next(iter(attn.values()))
        text1 = dump_json(attention_to_dict(amap))
        text2 = dump_json(attention_to_dict(attention_from_dict(json.loads(text1))))
        assert text1 == text2

    def test_float_precision_roundtrips_exactly(self):
        clip = generate_clip(GenConfig(seed=8), 0)
        doc = clip_to_dict(clip)
        back = clip_from_dict(json.loads(dump_json(doc)))
        for f1, f2 in zip(clip.frames, back.frames):
            for d1, d2 in zip(f1.detections, f2.detections):
                assert d1.box == d2.box
                assert d1.confidence == d2.confidence
                assert np.array_equal(d1.feature, d2.feature)

    def test_sidecars_cover_middle_frame_annotations(self):
        cfg = GenConfig(seed=1, clips=2)
        produced = generate_dataset(cfg)
        for clip, attn in produced:
            keys = set(attn)
            mid = clip.middle_index
            expected = {
                (mid, ai, side)
                for ai in range(len(clip.annotations))
                for side in ("subject", "object")
            }
            assert keys == expected
