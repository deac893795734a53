"""Clip/detection domain types, a seeded synthetic oracle, and dataset files.

The synthetic world is fixed at 512x512 virtual pixels with a 32x32
attention grid. Every generated clip carries hidden ground truth
(``oracle_gt`` on each frame) so downstream metrics can be scored
against a known answer. A grid cell belongs to a box iff the cell
center lies inside the box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IMAGE_SIZE = 512.0
ATTN_GRID = 32


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in xyxy pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(c) and c >= 0.0 for c in coords):
            raise ValueError(f"box coordinates must be finite and >= 0: {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box: {coords}")

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 when the boxes are disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area() + b.area() - inter)


@dataclass
class Detection:
    """One object proposal: box, predicted class, confidence, feature vector."""

    id: int
    box: BoundingBox
    class_id: int
    confidence: float
    feature: np.ndarray

    def __post_init__(self):
        if not (0.0 < self.confidence <= 1.0):
            raise ValueError(f"confidence must be in (0, 1]: {self.confidence}")
        self.feature = np.asarray(self.feature, dtype=np.float64)


@dataclass(frozen=True)
class UnlocalizedTriplet:
    """Class-level (subject, predicate, object) annotation without boxes."""

    subject_class: int
    predicate: int
    object_class: int


@dataclass(frozen=True)
class GroundTruthTriplet:
    """Hidden oracle instance of a relation in one frame."""

    subject_box: BoundingBox
    subject_class: int
    predicate: int
    object_box: BoundingBox
    object_class: int


@dataclass
class Frame:
    t: int
    detections: list[Detection]
    oracle_gt: list[GroundTruthTriplet] | None = None

    def __post_init__(self):
        ids = [d.id for d in self.detections]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate detection ids in frame {self.t}")

    def detection_map(self) -> dict[int, Detection]:
        return {d.id: d for d in self.detections}


@dataclass
class VideoClip:
    clip_id: str
    frames: list[Frame]
    middle_index: int
    annotations: list[UnlocalizedTriplet]

    def __post_init__(self):
        if not (0 <= self.middle_index < len(self.frames)):
            raise ValueError(f"middle_index {self.middle_index} out of range")

    @property
    def middle_frame(self) -> Frame:
        return self.frames[self.middle_index]


@dataclass
class AttentionMap:
    """Nonnegative H x W grid standing in for VL cross-attention."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"attention map must be 2-d, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0.0):
            raise ValueError("attention values must be finite and >= 0")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def total_mass(self) -> float:
        return float(self.values.sum())


def box_cells(box: BoundingBox, height: int, width: int) -> list[tuple[int, int]]:
    """Grid cells whose centers fall inside the box (may be empty)."""
    cell_w = IMAGE_SIZE / width
    cell_h = IMAGE_SIZE / height
    cells = []
    for i in range(height):
        cy = (i + 0.5) * cell_h
        if not (box.y1 <= cy <= box.y2):
            continue
        for j in range(width):
            cx = (j + 0.5) * cell_w
            if box.x1 <= cx <= box.x2:
                cells.append((i, j))
    return cells


def box_cell_mask(box: BoundingBox, height: int, width: int) -> np.ndarray:
    cell_w = IMAGE_SIZE / width
    cell_h = IMAGE_SIZE / height
    cx = (np.arange(width) + 0.5) * cell_w
    cy = (np.arange(height) + 0.5) * cell_h
    in_x = (cx >= box.x1) & (cx <= box.x2)
    in_y = (cy >= box.y1) & (cy <= box.y2)
    return np.outer(in_y, in_x)


# ---------------------------------------------------------------------------
# Synthetic generation


@dataclass
class GenConfig:
    """Knobs for the synthetic clip generator (the evaluation oracle)."""

    clips: int = 12
    frames_per_clip: int = 5
    triplets_per_clip: int = 2
    distractors_per_frame: int = 16
    num_object_classes: int = 8
    num_predicates: int = 6
    feature_dim: int = 32
    box_jitter_std: float = 2.0
    interactive_confidence: tuple[float, float] = (0.55, 0.8)
    distractor_confidence: tuple[float, float] = (0.7, 0.95)
    feature_noise_std: float = 0.25
    attention_quality: float = 0.9
    attention_peak_sharpness: float = 3.0
    attention_leak_prob: float = 0.3
    duplicate_instance_prob: float = 0.5
    seed: int = 0

    def validate(self):
        if self.clips < 1 or self.frames_per_clip < 1 or self.triplets_per_clip < 1:
            raise ValueError("clips, frames_per_clip and triplets_per_clip must be >= 1")
        if self.distractors_per_frame < 0:
            raise ValueError("distractors_per_frame must be >= 0")
        if self.num_object_classes < 2:
            raise ValueError("need at least a person class and one object class")
        if self.num_predicates < 1:
            raise ValueError("num_predicates must be >= 1")
        if self.feature_dim < self.num_object_classes + 1:
            raise ValueError("feature_dim must fit one-hot classes plus the interaction flag")
        for p in (
            self.attention_quality,
            self.attention_leak_prob,
            self.duplicate_instance_prob,
        ):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"probability out of [0, 1]: {p}")
        for lo, hi in (self.interactive_confidence, self.distractor_confidence):
            if not (0.0 < lo <= hi <= 1.0):
                raise ValueError("confidence ranges must satisfy 0 < lo <= hi <= 1")


PERSON_CLASS = 0


def predicate_table(cfg: GenConfig) -> np.ndarray:
    """Corpus-wide object-class -> predicate mapping (learnable signal)."""
    rng = np.random.default_rng([cfg.seed, 0x9E37])
    return rng.integers(0, cfg.num_predicates, size=cfg.num_object_classes)


@dataclass
class _Instance:
    class_id: int
    size: tuple[float, float]
    center: tuple[float, float]
    velocity: tuple[float, float]
    interactive: bool

    def box_at(self, dt: int) -> BoundingBox:
        w, h = self.size
        cx = self.center[0] + self.velocity[0] * dt
        cy = self.center[1] + self.velocity[1] * dt
        cx = min(max(cx, w / 2 + 1.0), IMAGE_SIZE - w / 2 - 1.0)
        cy = min(max(cy, h / 2 + 1.0), IMAGE_SIZE - h / 2 - 1.0)
        return BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _jittered_box(box: BoundingBox, rng, std: float) -> BoundingBox:
    if std <= 0.0:
        return box
    dx1, dy1, dx2, dy2 = rng.normal(0.0, std, size=4)
    x1 = min(max(box.x1 + dx1, 0.0), IMAGE_SIZE - 9.0)
    y1 = min(max(box.y1 + dy1, 0.0), IMAGE_SIZE - 9.0)
    x2 = min(max(box.x2 + dx2, x1 + 8.0), IMAGE_SIZE)
    y2 = min(max(box.y2 + dy2, y1 + 8.0), IMAGE_SIZE)
    return BoundingBox(x1, y1, x2, y2)


def _feature(cfg: GenConfig, class_id: int, interactive: bool, rng) -> np.ndarray:
    f = np.zeros(cfg.feature_dim)
    f[class_id] = 1.0
    f[cfg.num_object_classes] = 1.0 if interactive else 0.0
    return f + rng.normal(0.0, cfg.feature_noise_std, size=cfg.feature_dim)


def generate_clip(cfg: GenConfig, clip_seed: int) -> VideoClip:
    """Deterministic synthetic clip: interactive triplets plus distractors.

    One person instance participates in ``triplets_per_clip`` relations
    whose objects are non-person classes; with ``duplicate_instance_prob``
    an extra same-class non-interactive instance appears near an
    interactive object (the classic matching-ambiguity case). Distractor
    classes are drawn from the full vocabulary, person included.
    """
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, clip_seed, 0x51CE])
    preds = predicate_table(cfg)
    middle = cfg.frames_per_clip // 2

    def spawn(class_id, lo, hi, interactive) -> _Instance:
        w = rng.uniform(lo, hi)
        h = rng.uniform(lo, hi)
        cx = rng.uniform(0.2 * IMAGE_SIZE, 0.8 * IMAGE_SIZE)
        cy = rng.uniform(0.2 * IMAGE_SIZE, 0.8 * IMAGE_SIZE)
        vx, vy = rng.normal(0.0, 1.2, size=2)
        return _Instance(class_id, (w, h), (cx, cy), (vx, vy), interactive)

    person = spawn(PERSON_CLASS, 120.0, 180.0, True)
    objects = []
    for _ in range(cfg.triplets_per_clip):
        class_id = int(rng.integers(1, cfg.num_object_classes))
        objects.append(spawn(class_id, 64.0, 128.0, True))

    duplicates = []
    for obj in objects:
        if rng.random() < cfg.duplicate_instance_prob:
            twin = spawn(obj.class_id, obj.size[0] * 0.9, obj.size[0] * 1.1, False)
            angle = rng.uniform(0.0, 2.0 * np.pi)
            shift = 1.4 * max(obj.size)
            twin.center = (
                obj.center[0] + shift * np.cos(angle),
                obj.center[1] + shift * np.sin(angle),
            )
            twin.velocity = (obj.velocity[0] + rng.normal(0, 0.3), obj.velocity[1] + rng.normal(0, 0.3))
            duplicates.append(twin)

    distractors = [
        spawn(int(rng.integers(0, cfg.num_object_classes)), 50.0, 150.0, False)
        for _ in range(cfg.distractors_per_frame)
    ]

    instances = [person] + objects + duplicates + distractors
    annotations = [
        UnlocalizedTriplet(PERSON_CLASS, int(preds[obj.class_id]), obj.class_id) for obj in objects
    ]

    frames = []
    for t in range(cfg.frames_per_clip):
        dt = t - middle
        detections = []
        for idx, inst in enumerate(instances):
            lo, hi = cfg.interactive_confidence if inst.interactive else cfg.distractor_confidence
            detections.append(
                Detection(
                    id=idx,
                    box=_jittered_box(inst.box_at(dt), rng, cfg.box_jitter_std),
                    class_id=inst.class_id,
                    confidence=float(rng.uniform(lo, hi)),
                    feature=_feature(cfg, inst.class_id, inst.interactive, rng),
                )
            )
        gt = [
            GroundTruthTriplet(
                subject_box=person.box_at(dt),
                subject_class=PERSON_CLASS,
                predicate=int(preds[obj.class_id]),
                object_box=obj.box_at(dt),
                object_class=obj.class_id,
            )
            for obj in objects
        ]
        frames.append(Frame(t=t, detections=detections, oracle_gt=gt))

    return VideoClip(
        clip_id=f"clip{clip_seed:05d}",
        frames=frames,
        middle_index=middle,
        annotations=annotations,
    )


def _gaussian_bump(height, width, box: BoundingBox, sharpness: float) -> np.ndarray:
    cell_w = IMAGE_SIZE / width
    cell_h = IMAGE_SIZE / height
    cx, cy = box.center()
    cx_cells = cx / cell_w - 0.5
    cy_cells = cy / cell_h - 0.5
    sigma = max(0.8, min(box.x2 - box.x1, box.y2 - box.y1) / cell_w / max(sharpness, 1e-6))
    xs = np.arange(width)
    ys = np.arange(height)
    gx = np.exp(-0.5 * ((xs - cx_cells) / sigma) ** 2)
    gy = np.exp(-0.5 * ((ys - cy_cells) / sigma) ** 2)
    bump = np.outer(gy, gx)
    return bump / bump.sum()


def synthesize_attention(
    frame: Frame,
    triplet: UnlocalizedTriplet,
    entity_side: str,
    quality: float,
    seed: int,
    grid: int = ATTN_GRID,
    peak_sharpness: float = 3.0,
    leak_prob: float = 0.3,
) -> AttentionMap:
    """Stand-in for a grounding model's cross-attention over one query.

    At quality 1 the map is a sharp bump on the relation-consistent
    instance; as quality drops, mass leaks onto same-class bystanders and
    a uniform floor, reaching exactly uniform at quality 0. A query whose
    entity class is absent from the frame yields a near-uniform map.
    """
    if entity_side not in ("subject", "object"):
        raise ValueError(f"entity_side must be 'subject' or 'object': {entity_side}")
    if not (0.0 <= quality <= 1.0):
        raise ValueError(f"quality must be in [0, 1]: {quality}")
    rng = np.random.default_rng([seed, 0xA77E])
    entity_class = triplet.subject_class if entity_side == "subject" else triplet.object_class

    target_box = None
    for gt in frame.oracle_gt or []:
        if (
            gt.subject_class == triplet.subject_class
            and gt.predicate == triplet.predicate
            and gt.object_class == triplet.object_class
        ):
            target_box = gt.subject_box if entity_side == "subject" else gt.object_box
            break

    uniform = np.full((grid, grid), 1.0 / (grid * grid))
    if target_box is None:
        # VL failure mode: the described entity is not visible.
        noise = 1.0 + 1e-3 * rng.random((grid, grid))
        values = uniform * noise
        return AttentionMap(values / values.sum())

    bump = _gaussian_bump(grid, grid, target_box, peak_sharpness)
    q = float(quality)
    values = q * bump + (1.0 - q) ** 2 * uniform

    leak_weight = q * (1.0 - q)
    if leak_weight > 0.0:
        bystanders = [
            d
            for d in frame.detections
            if d.class_id == entity_class and iou(d.box, target_box) < 0.5
        ]
        leaked = [d for d in bystanders if rng.random() < leak_prob]
        if leaked:
            for det in leaked:
                values = values + (leak_weight / len(leaked)) * _gaussian_bump(
                    grid, grid, det.box, peak_sharpness
                )
    return AttentionMap(values / values.sum())


# ---------------------------------------------------------------------------
# Dataset files: one JSON document per clip plus attention sidecars.


def _box_list(box: BoundingBox) -> list[float]:
    return [box.x1, box.y1, box.x2, box.y2]


def clip_to_dict(clip: VideoClip) -> dict:
    return {
        "clip_id": clip.clip_id,
        "middle_index": clip.middle_index,
        "annotations": [[a.subject_class, a.predicate, a.object_class] for a in clip.annotations],
        "frames": [
            {
                "t": f.t,
                "detections": [
                    {
                        "id": d.id,
                        "box": _box_list(d.box),
                        "class_id": d.class_id,
                        "confidence": d.confidence,
                        "feature": [float(v) for v in d.feature],
                    }
                    for d in f.detections
                ],
                **(
                    {
                        "oracle_gt": [
                            {
                                "s_box": _box_list(g.subject_box),
                                "s_class": g.subject_class,
                                "predicate": g.predicate,
                                "o_box": _box_list(g.object_box),
                                "o_class": g.object_class,
                            }
                            for g in f.oracle_gt
                        ]
                    }
                    if f.oracle_gt is not None
                    else {}
                ),
            }
            for f in clip.frames
        ],
    }


def clip_from_dict(doc: dict) -> VideoClip:
    frames = []
    for fd in doc["frames"]:
        detections = [
            Detection(
                id=int(dd["id"]),
                box=BoundingBox(*[float(v) for v in dd["box"]]),
                class_id=int(dd["class_id"]),
                confidence=float(dd["confidence"]),
                feature=np.array(dd["feature"], dtype=np.float64),
            )
            for dd in fd["detections"]
        ]
        gt = None
        if "oracle_gt" in fd:
            gt = [
                GroundTruthTriplet(
                    subject_box=BoundingBox(*[float(v) for v in gd["s_box"]]),
                    subject_class=int(gd["s_class"]),
                    predicate=int(gd["predicate"]),
                    object_box=BoundingBox(*[float(v) for v in gd["o_box"]]),
                    object_class=int(gd["o_class"]),
                )
                for gd in fd["oracle_gt"]
            ]
        frames.append(Frame(t=int(fd["t"]), detections=detections, oracle_gt=gt))
    return VideoClip(
        clip_id=str(doc["clip_id"]),
        frames=frames,
        middle_index=int(doc["middle_index"]),
        annotations=[UnlocalizedTriplet(int(a[0]), int(a[1]), int(a[2])) for a in doc["annotations"]],
    )


def dump_json(doc: dict) -> str:
    # repr-based float formatting round-trips exactly; keys stay in insertion order.
    return json.dumps(doc, indent=1) + "\n"


def attention_to_dict(a: AttentionMap) -> dict:
    return {"h": a.height, "w": a.width, "values": [float(v) for v in a.values.reshape(-1)]}


def attention_from_dict(doc: dict) -> AttentionMap:
    h, w = int(doc["h"]), int(doc["w"])
    return AttentionMap(np.array(doc["values"], dtype=np.float64).reshape(h, w))


def clip_filename(clip_id: str) -> str:
    return f"{clip_id}.json"


def attention_filename(clip_id: str, t: int, annotation_index: int, entity_side: str) -> str:
    side = {"subject": "s", "object": "o"}[entity_side]
    return f"{clip_id}_t{t:03d}_a{annotation_index:02d}_{side}.json"


def write_dataset(clips_with_attention, out_dir) -> int:
    """Write clip documents and attention sidecars; returns file count."""
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    (out / "attn").mkdir(parents=True, exist_ok=True)
    count = 0
    for clip, attn in clips_with_attention:
        (out / "clips" / clip_filename(clip.clip_id)).write_text(
            dump_json(clip_to_dict(clip)), encoding="utf-8"
        )
        count += 1
        for (t, ann_idx, side), amap in attn.items():
            path = out / "attn" / attention_filename(clip.clip_id, t, ann_idx, side)
            path.write_text(dump_json(attention_to_dict(amap)), encoding="utf-8")
            count += 1
    return count


@dataclass
class ClipRecord:
    """A clip plus its attention sidecars keyed by (t, annotation, side)."""

    clip: VideoClip
    attention: dict[tuple[int, int, str], AttentionMap] = field(default_factory=dict)


def load_dataset(data_dir) -> list[ClipRecord]:
    root = Path(data_dir)
    clip_dir = root / "clips"
    if not clip_dir.is_dir():
        raise FileNotFoundError(f"no clips/ directory under {root}")
    records = []
    for path in sorted(clip_dir.glob("*.json")):
        clip = clip_from_dict(json.loads(path.read_text(encoding="utf-8")))
        record = ClipRecord(clip=clip)
        for t in range(len(clip.frames)):
            for ann_idx in range(len(clip.annotations)):
                for side in ("subject", "object"):
                    apath = root / "attn" / attention_filename(clip.clip_id, t, ann_idx, side)
                    if apath.exists():
                        record.attention[(t, ann_idx, side)] = attention_from_dict(
                            json.loads(apath.read_text(encoding="utf-8"))
                        )
        records.append(record)
    return records


def generate_dataset(cfg: GenConfig, first_clip_seed: int = 0):
    """Generate clips and their middle-frame attention sidecars."""
    cfg.validate()
    out = []
    for k in range(cfg.clips):
        clip_seed = first_clip_seed + k
        clip = generate_clip(cfg, clip_seed)
        attn = {}
        mid = clip.middle_index
        for ann_idx, ann in enumerate(clip.annotations):
            for side in ("subject", "object"):
                attn[(mid, ann_idx, side)] = synthesize_attention(
                    clip.frames[mid],
                    ann,
                    side,
                    cfg.attention_quality,
                    seed=int(np.random.default_rng([cfg.seed, clip_seed, ann_idx, 0 if side == "subject" else 1]).integers(2**31)),
                    peak_sharpness=cfg.attention_peak_sharpness,
                    leak_prob=cfg.attention_leak_prob,
                )
        out.append((clip, attn))
    return out
