"""Seeded synthetic detection generator.

Produces a detection file for any groundtruth dataset so users can
exercise the full evaluation path, and their own file tooling, without
a trained detector. With the default zero-noise spec the output is an
oracle detector: every groundtruth box reproduced exactly at score 1
with exactly its positive attributes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotations import Dataset, ImageRecord
from .errors import ValidationError


@dataclass(frozen=True)
class SyntheticNoiseSpec:
    """Noise model for simulated detections; the seed fixes everything.

    box_jitter shifts each true detection's center and rescales its
    sides by uniform offsets of at most that fraction of the box size.
    Attribute scores land above 0.75 for groundtruth positives and are
    omitted for negatives; flips (probability attr_flip_prob per
    attribute) push positives low and sampled negatives high.
    Distractor detections are drawn per image from a Poisson with the
    given rate, capped so an image never exceeds max_detections.
    """

    box_jitter: float = 0.0
    tp_score_min: float = 1.0
    tp_score_max: float = 1.0
    distractor_rate: float = 0.0
    distractor_score_min: float = 0.0
    distractor_score_max: float = 1.0
    attr_flip_prob: float = 0.0
    max_detections: int = 300
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0 <= self.box_jitter < 0.5):
            raise ValidationError(f"box_jitter must be in [0, 0.5), got {self.box_jitter}")
        for lo, hi, name in (
            (self.tp_score_min, self.tp_score_max, "tp_score"),
            (self.distractor_score_min, self.distractor_score_max, "distractor_score"),
        ):
            if not (0 <= lo <= hi <= 1):
                raise ValidationError(f"need 0 <= {name}_min <= {name}_max <= 1")
        if not (0 <= self.attr_flip_prob <= 1):
            raise ValidationError(f"attr_flip_prob must be in [0, 1], got {self.attr_flip_prob}")
        if self.distractor_rate < 0:
            raise ValidationError(f"distractor_rate must be >= 0, got {self.distractor_rate}")
        if self.max_detections < 1:
            raise ValidationError(f"max_detections must be >= 1, got {self.max_detections}")


def _uniform(rng: np.random.Generator, lo: float, hi: float, size=None):
    if lo == hi:
        return np.full(size, lo) if size is not None else lo
    return rng.uniform(lo, hi, size)


def _round6(x: float) -> float:
    return round(float(x), 6)


def _jitter_box(rng: np.random.Generator, box, jitter: float) -> list[float]:
    x_min, y_min, x_max, y_max = box
    if jitter == 0.0:
        return [float(x_min), float(y_min), float(x_max), float(y_max)]
    w = x_max - x_min
    h = y_max - y_min
    cx = (x_min + x_max) / 2 + rng.uniform(-jitter, jitter) * w
    cy = (y_min + y_max) / 2 + rng.uniform(-jitter, jitter) * h
    nw = w * (1 + rng.uniform(-jitter, jitter))
    nh = h * (1 + rng.uniform(-jitter, jitter))
    coords = [round(v, 2) for v in (cx - nw / 2, cy - nh / 2, cx + nw / 2, cy + nh / 2)]
    if coords[2] <= coords[0] or coords[3] <= coords[1]:
        # rounding collapsed a sub-centipixel box; keep full precision
        coords = [float(cx - nw / 2), float(cy - nh / 2), float(cx + nw / 2), float(cy + nh / 2)]
    return coords


def _attribute_scores(rng: np.random.Generator, positives: list[int],
                      num_attributes: int, flip_prob: float) -> list[list[float]]:
    scores: dict[int, float] = {}
    for aid in positives:
        if flip_prob and rng.random() < flip_prob:
            scores[aid] = _round6(rng.uniform(0.0, 0.25))
        else:
            scores[aid] = _round6(_uniform(rng, 0.75, 1.0))
    if flip_prob:
        n_negative = num_attributes - len(positives)
        n_flipped = rng.binomial(n_negative, flip_prob) if n_negative > 0 else 0
        if n_flipped:
            negative_pool = np.setdiff1d(
                np.arange(num_attributes), np.array(positives, dtype=np.int64),
            )
            for aid in rng.choice(negative_pool, size=n_flipped, replace=False):
                scores[int(aid)] = _round6(rng.uniform(0.55, 1.0))
    return [[aid, scores[aid]] for aid in sorted(scores)]


def _distractors(rng: np.random.Generator, record: ImageRecord, count: int,
                 num_categories: int, num_attributes: int,
                 spec: SyntheticNoiseSpec) -> list[dict]:
    out = []
    w_max = max(int(record.width), 2)
    h_max = max(int(record.height), 2)
    for _ in range(count):
        w = int(rng.integers(1, w_max))
        h = int(rng.integers(1, h_max))
        x = int(rng.integers(0, w_max - w + 1))
        y = int(rng.integers(0, h_max - h + 1))
        n_attrs = min(int(rng.poisson(2.0)), num_attributes)
        attr_ids = sorted(int(a) for a in rng.choice(num_attributes, size=n_attrs, replace=False)) if n_attrs else []
        out.append({
            "box": [float(x), float(y), float(x + w), float(y + h)],
            "category_id": int(rng.integers(0, num_categories)),
            "category_score": _round6(_uniform(
                rng, spec.distractor_score_min, spec.distractor_score_max)),
            "attribute_scores": [[aid, _round6(rng.random())] for aid in attr_ids],
        })
    return out


def simulate_detections(dataset: Dataset, spec: SyntheticNoiseSpec,
                        out_path: str | Path) -> dict:
    """Write one detection line per groundtruth image; returns a summary."""
    rng = np.random.default_rng(spec.seed)
    num_attributes = len(dataset.attributes)
    num_categories = len(dataset.categories)
    total_true = 0
    total_distractors = 0
    with open(out_path, "w", encoding="utf-8") as f:
        for record in dataset.images:
            detections = []
            for obj in record.objects:
                detections.append({
                    "box": _jitter_box(rng, obj.box.as_tuple(), spec.box_jitter),
                    "category_id": obj.category_id,
                    "category_score": _round6(_uniform(
                        rng, spec.tp_score_min, spec.tp_score_max)),
                    "attribute_scores": _attribute_scores(
                        rng, sorted(obj.attributes), num_attributes, spec.attr_flip_prob),
                })
            budget = spec.max_detections - len(detections)
            if budget < 0:
                raise ValidationError(
                    f"image {record.image_id!r} has {len(detections)} objects, "
                    f"over the {spec.max_detections} detection cap"
                )
            n_distractors = 0
            if spec.distractor_rate > 0 and budget > 0:
                n_distractors = min(int(rng.poisson(spec.distractor_rate)), budget)
                detections.extend(_distractors(
                    rng, record, n_distractors, num_categories, num_attributes, spec))
            total_true += len(record.objects)
            total_distractors += n_distractors
            f.write(json.dumps(
                {"image_id": record.image_id, "detections": detections},
                separators=(",", ":"),
            ) + "\n")
    return {
        "images": len(dataset.images),
        "true_detections": total_true,
        "distractors": total_distractors,
        "seed": spec.seed,
    }
