"""Detection postprocessing: score filtering, top-k and attribute merging."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ValidationError
from .geometry import Box

MERGE_MODES = ("and", "or", "majority")

# Which area divides the overlap when testing membership in the merge
# pool; "candidate" absorbs small boxes lying inside the top detection.
IOA_DENOMINATORS = ("candidate", "reference", "smaller")


@dataclass(frozen=True)
class Detection:
    """One detector output: box, category, score and sparse attribute scores."""

    box: Box
    category_id: int
    category_score: float
    attribute_scores: dict[int, float]


class DetectionSet:
    """All detections of one image, stored columnar for bulk operations.

    Attribute scores use a CSR-style layout (indptr/ids/scores) since
    most of the vocabulary scores zero for any single detection.
    """

    __slots__ = ("image_id", "num_attributes", "boxes", "category_ids",
                 "scores", "attr_indptr", "attr_ids", "attr_scores")

    def __init__(self, image_id: str, num_attributes: int, boxes: np.ndarray,
                 category_ids: np.ndarray, scores: np.ndarray,
                 attr_indptr: np.ndarray, attr_ids: np.ndarray,
                 attr_scores: np.ndarray):
        self.image_id = image_id
        self.num_attributes = num_attributes
        self.boxes = boxes
        self.category_ids = category_ids
        self.scores = scores
        self.attr_indptr = attr_indptr
        self.attr_ids = attr_ids
        self.attr_scores = attr_scores

    @classmethod
    def from_detections(cls, image_id: str, detections: Sequence[Detection],
                        num_attributes: int) -> DetectionSet:
        n = len(detections)
        boxes = np.zeros((n, 4), dtype=np.float64)
        category_ids = np.zeros(n, dtype=np.int64)
        scores = np.zeros(n, dtype=np.float64)
        indptr = np.zeros(n + 1, dtype=np.int64)
        ids: list[int] = []
        vals: list[float] = []
        for i, d in enumerate(detections):
            boxes[i] = d.box.as_tuple()
            category_ids[i] = d.category_id
            scores[i] = d.category_score
            for aid in sorted(d.attribute_scores):
                ids.append(aid)
                vals.append(d.attribute_scores[aid])
            indptr[i + 1] = len(ids)
        ds = cls(image_id, num_attributes, boxes, category_ids, scores, indptr,
                 np.array(ids, dtype=np.int64), np.array(vals, dtype=np.float64))
        ds.validate()
        return ds

    def validate(self) -> None:
        if len(self) and not np.all(
            (self.boxes[:, 2] > self.boxes[:, 0]) & (self.boxes[:, 3] > self.boxes[:, 1])
        ):
            raise ValidationError(f"image {self.image_id!r}: degenerate detection box")
        if len(self) and (self.scores.min() < 0 or self.scores.max() > 1):
            raise ValidationError(
                f"image {self.image_id!r}: category scores must lie in [0, 1]"
            )
        if len(self.attr_ids) and (
            self.attr_ids.min() < 0 or self.attr_ids.max() >= self.num_attributes
        ):
            raise ValidationError(
                f"image {self.image_id!r}: attribute id outside vocabulary "
                f"of size {self.num_attributes}"
            )
        if len(self.attr_scores) and (
            self.attr_scores.min() < 0 or self.attr_scores.max() > 1
        ):
            raise ValidationError(
                f"image {self.image_id!r}: attribute scores must lie in [0, 1]"
            )
        if len(self.attr_ids):
            # one score per attribute per detection
            rows = np.repeat(np.arange(len(self), dtype=np.int64),
                             np.diff(self.attr_indptr))
            keys = rows * self.num_attributes + self.attr_ids
            if len(np.unique(keys)) != len(keys):
                raise ValidationError(
                    f"image {self.image_id!r}: duplicate attribute id within a detection"
                )

    def __len__(self) -> int:
        return len(self.scores)

    def __getitem__(self, i: int) -> Detection:
        lo, hi = self.attr_indptr[i], self.attr_indptr[i + 1]
        return Detection(
            box=Box(*self.boxes[i]),
            category_id=int(self.category_ids[i]),
            category_score=float(self.scores[i]),
            attribute_scores={
                int(a): float(s)
                for a, s in zip(self.attr_ids[lo:hi], self.attr_scores[lo:hi])
            },
        )

    @property
    def detections(self) -> list[Detection]:
        return [self[i] for i in range(len(self))]

    def subset(self, indices: np.ndarray) -> DetectionSet:
        """New set containing the given rows, in the given order."""
        indices = np.asarray(indices, dtype=np.int64)
        starts = self.attr_indptr[indices]
        ends = self.attr_indptr[indices + 1]
        lengths = ends - starts
        indptr = np.zeros(len(indices) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        take = np.concatenate(
            [np.arange(s, e) for s, e in zip(starts, ends)]
        ) if len(indices) else np.zeros(0, dtype=np.int64)
        return DetectionSet(
            self.image_id, self.num_attributes,
            self.boxes[indices], self.category_ids[indices], self.scores[indices],
            indptr, self.attr_ids[take], self.attr_scores[take],
        )

    def binarized_attributes(self, i: int, threshold: float) -> np.ndarray:
        """Attribute ids of detection i scoring strictly above the threshold."""
        lo, hi = self.attr_indptr[i], self.attr_indptr[i + 1]
        segment_ids = self.attr_ids[lo:hi]
        return segment_ids[self.attr_scores[lo:hi] > threshold]


def filter_by_score(dset: DetectionSet, threshold: float = 0.5) -> DetectionSet:
    """Keep detections scoring strictly above the threshold, order preserved."""
    return dset.subset(np.flatnonzero(dset.scores > threshold))


def top_k(dset: DetectionSet, k: int = 5) -> DetectionSet:
    """The k highest-scoring detections (ties favor earlier indices).

    The selected detections keep their original relative order, so the
    operation is idempotent.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if len(dset) <= k:
        return dset
    order = np.argsort(-dset.scores, kind="stable")[:k]
    return dset.subset(np.sort(order))


def merge_attributes(
    dset: DetectionSet,
    ioa_threshold: float = 0.7,
    attr_score_threshold: float = 0.5,
    mode: str = "and",
    ioa_denominator: str = "candidate",
) -> tuple[np.ndarray, bool]:
    """Collapse an image's detections into one binary attribute vector.

    Detections whose IoA over the top-scoring detection exceeds the
    threshold are binarized at ``attr_score_threshold`` and combined
    elementwise ("and" by default; "or" and "majority" exist for
    experiments). The top detection always participates. Returns the
    vector and an empty-input flag; an image with no detections
    predicts no attributes.
    """
    if mode not in MERGE_MODES:
        raise ValidationError(f"unknown merge mode {mode!r}; expected one of {MERGE_MODES}")
    if ioa_denominator not in IOA_DENOMINATORS:
        raise ValidationError(
            f"unknown IoA denominator {ioa_denominator!r}; "
            f"expected one of {IOA_DENOMINATORS}"
        )
    vector = np.zeros(dset.num_attributes, dtype=bool)
    if len(dset) == 0:
        return vector, True

    best = int(np.argmax(dset.scores))  # argmax keeps the earliest index on ties
    overlap = _merge_overlap(dset.boxes, best, ioa_denominator)
    members = np.flatnonzero(overlap > ioa_threshold)
    if best not in members:
        members = np.concatenate(([best], members))

    votes = np.zeros(dset.num_attributes, dtype=np.int64)
    for i in members:
        votes[dset.binarized_attributes(int(i), attr_score_threshold)] += 1
    if mode == "and":
        vector = votes == len(members)
    elif mode == "or":
        vector = votes > 0
    else:
        vector = votes * 2 > len(members)
    return vector, False


def _merge_overlap(boxes: np.ndarray, best: int, denominator: str) -> np.ndarray:
    """Overlap ratio of every box against the top box, per the convention."""
    best_box = boxes[best]
    iw = np.minimum(boxes[:, 2], best_box[2]) - np.maximum(boxes[:, 0], best_box[0])
    ih = np.minimum(boxes[:, 3], best_box[3]) - np.maximum(boxes[:, 1], best_box[1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    if denominator == "candidate":
        den = areas
    elif denominator == "reference":
        den = np.full_like(areas, areas[best])
    else:
        den = np.minimum(areas, areas[best])
    return inter / den


# ---------------------------------------------------------------------------
# Detection file format (JSONL, one image per line, sparse attribute scores)


def detection_set_to_json(dset: DetectionSet) -> dict:
    dets = []
    for i in range(len(dset)):
        lo, hi = dset.attr_indptr[i], dset.attr_indptr[i + 1]
        dets.append({
            "box": [float(v) for v in dset.boxes[i]],
            "category_id": int(dset.category_ids[i]),
            "category_score": float(dset.scores[i]),
            "attribute_scores": [
                [int(a), float(s)]
                for a, s in zip(dset.attr_ids[lo:hi], dset.attr_scores[lo:hi])
            ],
        })
    return {"image_id": dset.image_id, "detections": dets}


def parse_detection_line(
    line: str,
    num_attributes: int,
    *,
    num_categories: int | None = None,
    max_detections: int = 300,
    path: str = "<detections>",
    lineno: int = 0,
) -> DetectionSet:
    """Parse one detection JSONL line into a validated DetectionSet."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc.msg}", path=path, line=lineno)
    try:
        image_id = str(obj["image_id"])
        raw = obj["detections"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"bad detection record: {exc}", path=path, line=lineno)
    if len(raw) > max_detections:
        raise ValidationError(
            f"image {image_id!r} has {len(raw)} detections, cap is {max_detections}",
            path=path, line=lineno,
        )
    n = len(raw)
    boxes = np.zeros((n, 4), dtype=np.float64)
    category_ids = np.zeros(n, dtype=np.int64)
    scores = np.zeros(n, dtype=np.float64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    ids: list[int] = []
    vals: list[float] = []
    try:
        for i, d in enumerate(raw):
            boxes[i] = d["box"]
            category_ids[i] = d["category_id"]
            scores[i] = d["category_score"]
            for aid, score in d.get("attribute_scores", ()):
                ids.append(aid)
                vals.append(score)
            indptr[i + 1] = len(ids)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ValidationError(f"bad detection entry: {exc}", path=path, line=lineno)
    dset = DetectionSet(image_id, num_attributes, boxes, category_ids, scores,
                        indptr, np.array(ids, dtype=np.int64),
                        np.array(vals, dtype=np.float64))
    try:
        dset.validate()
        if num_categories is not None and n and (
            category_ids.min() < 0 or category_ids.max() >= num_categories
        ):
            raise ValidationError(
                f"image {image_id!r}: category id outside vocabulary "
                f"of size {num_categories}"
            )
    except ValidationError as exc:
        raise ValidationError(str(exc), path=path, line=lineno)
    return dset


def read_detection_file(
    path: str | Path,
    num_attributes: int,
    *,
    num_categories: int | None = None,
    max_detections: int = 300,
) -> Iterator[DetectionSet]:
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            yield parse_detection_line(
                line, num_attributes, num_categories=num_categories,
                max_detections=max_detections, path=str(path), lineno=lineno,
            )


def write_detection_file(path: str | Path, sets) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for dset in sets:
            f.write(json.dumps(detection_set_to_json(dset), separators=(",", ":")) + "\n")
