"""Detection and attribute metrics: greedy matching, AP, CorLoc, precision/recall.

Average precision uses all-points interpolation. Because recall rises by
exactly 1/num_gt at every true positive, AP is computed as the sum of
interpolated precisions at the true-positive ranks divided by num_gt;
this keeps a perfect ranking at exactly 1.0 instead of accumulating
float error across recall steps.

Ratios with zero denominator are reported as None (undefined), never 0,
so consumers can tell "no support" from "failed".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .annotations import AttributeVocabulary, GroundTruthObject
from .errors import ValidationError
from .geometry import boxes_to_array, pairwise_iou
from .postprocess import DetectionSet


@dataclass(frozen=True)
class MatchOutcome:
    """Per-detection TP/FP flags and per-groundtruth coverage for one image.

    Detection arrays follow the input detection order; every detection
    is exactly one of TP/FP and each groundtruth is matched at most once.
    """

    det_scores: np.ndarray
    det_is_tp: np.ndarray
    det_category_ids: np.ndarray
    gt_detected: np.ndarray
    gt_category_ids: np.ndarray

    @classmethod
    def empty(cls, gt_category_ids: Sequence[int] = ()) -> MatchOutcome:
        return cls(
            det_scores=np.zeros(0, dtype=np.float64),
            det_is_tp=np.zeros(0, dtype=bool),
            det_category_ids=np.zeros(0, dtype=np.int64),
            gt_detected=np.zeros(len(gt_category_ids), dtype=bool),
            gt_category_ids=np.asarray(gt_category_ids, dtype=np.int64),
        )


def match_arrays(
    det_boxes: np.ndarray,
    det_scores: np.ndarray,
    det_category_ids: np.ndarray,
    gt_boxes: np.ndarray,
    gt_category_ids: np.ndarray,
    *,
    iou_threshold: float = 0.5,
    class_aware: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Array core of the greedy matcher: (per-detection TP, per-gt matched)."""
    n_det = len(det_scores)
    n_gt = len(gt_category_ids)
    is_tp = np.zeros(n_det, dtype=bool)
    gt_taken = np.zeros(n_gt, dtype=bool)
    if n_det == 0 or n_gt == 0:
        return is_tp, gt_taken

    overlaps = pairwise_iou(det_boxes, gt_boxes)
    order = np.argsort(-det_scores, kind="stable")
    for i in order:
        candidate = overlaps[i].copy()
        if class_aware:
            candidate[gt_category_ids != det_category_ids[i]] = -1.0
        candidate[gt_taken] = -1.0
        j = int(np.argmax(candidate))  # ties resolve to the lowest gt index
        if candidate[j] >= iou_threshold:
            is_tp[i] = True
            gt_taken[j] = True
    return is_tp, gt_taken


def match_detections(
    detections: DetectionSet,
    gts: Sequence[GroundTruthObject],
    iou_threshold: float = 0.5,
    class_aware: bool = True,
) -> MatchOutcome:
    """Greedy score-ordered matching of detections to groundtruth.

    Detections are visited in descending score (earlier index wins
    ties) and claim the unmatched groundtruth with the largest IoU at
    or above the threshold, restricted to the same category when
    class_aware. Later hits on an already-claimed groundtruth are FP.
    """
    gt_cats = np.array([g.category_id for g in gts], dtype=np.int64)
    is_tp, gt_taken = match_arrays(
        detections.boxes, detections.scores, detections.category_ids,
        boxes_to_array([g.box for g in gts]), gt_cats,
        iou_threshold=iou_threshold, class_aware=class_aware,
    )
    return MatchOutcome(
        det_scores=detections.scores.copy(),
        det_is_tp=is_tp,
        det_category_ids=detections.category_ids.copy(),
        gt_detected=gt_taken,
        gt_category_ids=gt_cats,
    )


def average_precision(scores, is_tp, num_gt: int) -> float | None:
    """All-points interpolated AP for one ranked label list.

    Returns None when num_gt is 0 (undefined, excluded from averages).
    Labels are sorted internally by descending score with a stable
    tie-break on input order; recall beyond the last detection
    contributes nothing.
    """
    if num_gt < 0:
        raise ValidationError(f"num_gt must be >= 0, got {num_gt}")
    if num_gt == 0:
        return None
    scores = np.asarray(scores, dtype=np.float64)
    is_tp = np.asarray(is_tp, dtype=bool)
    if scores.shape != is_tp.shape:
        raise ValidationError("scores and is_tp must have equal length")
    if len(scores) == 0:
        return 0.0

    order = np.argsort(-scores, kind="stable")
    tp_sorted = is_tp[order]
    cum_tp = np.cumsum(tp_sorted)
    precision = cum_tp / np.arange(1, len(scores) + 1)
    # monotone non-increasing from the right
    interpolated = np.maximum.accumulate(precision[::-1])[::-1]
    return float(interpolated[tp_sorted].sum() / num_gt)


def per_class_ap(outcomes: Iterable[MatchOutcome]) -> dict[int, float]:
    """AP per category over pooled images; zero-groundtruth classes are absent."""
    scores: dict[int, list[np.ndarray]] = {}
    flags: dict[int, list[np.ndarray]] = {}
    num_gt: dict[int, int] = {}
    for out in outcomes:
        for cat in np.unique(out.det_category_ids):
            mask = out.det_category_ids == cat
            scores.setdefault(int(cat), []).append(out.det_scores[mask])
            flags.setdefault(int(cat), []).append(out.det_is_tp[mask])
        for cat in out.gt_category_ids:
            num_gt[int(cat)] = num_gt.get(int(cat), 0) + 1

    result: dict[int, float] = {}
    for cat in sorted(num_gt):
        s = np.concatenate(scores[cat]) if cat in scores else np.zeros(0)
        f = np.concatenate(flags[cat]) if cat in flags else np.zeros(0, dtype=bool)
        ap = average_precision(s, f, num_gt[cat])
        assert ap is not None
        result[cat] = ap
    return result


def class_gt_counts(outcomes: Iterable[MatchOutcome]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for out in outcomes:
        for cat in out.gt_category_ids:
            counts[int(cat)] = counts.get(int(cat), 0) + 1
    return counts


def weighted_map(outcomes: Sequence[MatchOutcome], average: str = "pooled") -> float | None:
    """Single AP over all classes.

    "pooled" concatenates every (score, TP) label regardless of class
    and scores the pool against the total groundtruth count (a
    micro-average). "support" instead weights per-class APs by their
    groundtruth counts.
    """
    if average == "pooled":
        scores = [out.det_scores for out in outcomes]
        flags = [out.det_is_tp for out in outcomes]
        total_gt = sum(len(out.gt_category_ids) for out in outcomes)
        return average_precision(
            np.concatenate(scores) if scores else np.zeros(0),
            np.concatenate(flags) if flags else np.zeros(0, dtype=bool),
            total_gt,
        )
    if average == "support":
        aps = per_class_ap(outcomes)
        counts = class_gt_counts(outcomes)
        total = sum(counts[c] for c in aps)
        if total == 0:
            return None
        return sum(aps[c] * counts[c] for c in aps) / total
    raise ValidationError(f"unknown mAP average {average!r}; expected pooled or support")


# ---------------------------------------------------------------------------
# CorLoc


@dataclass(frozen=True)
class CorLocResult:
    per_class: dict[int, float]
    weighted_mean: float | None
    detected_by_class: dict[int, int]
    total_by_class: dict[int, int]


def corloc_flags_arrays(
    det_boxes: np.ndarray,
    det_scores: np.ndarray,
    det_category_ids: np.ndarray,
    gt_boxes: np.ndarray,
    gt_category_ids: np.ndarray,
    *,
    iou_threshold: float = 0.5,
    class_aware: bool = True,
    unique_match: bool = False,
) -> np.ndarray:
    """Array core of per-groundtruth coverage for one image."""
    if unique_match:
        _, flags = match_arrays(
            det_boxes, det_scores, det_category_ids, gt_boxes, gt_category_ids,
            iou_threshold=iou_threshold, class_aware=class_aware,
        )
        return flags
    n_gt = len(gt_category_ids)
    if n_gt == 0 or len(det_scores) == 0:
        return np.zeros(n_gt, dtype=bool)
    hit = pairwise_iou(gt_boxes, det_boxes) >= iou_threshold
    if class_aware:
        hit &= gt_category_ids[:, None] == det_category_ids[None, :]
    return hit.any(axis=1)


def corloc_detected_flags(
    top_detections: DetectionSet,
    gts: Sequence[GroundTruthObject],
    iou_threshold: float = 0.5,
    class_aware: bool = True,
    unique_match: bool = False,
) -> np.ndarray:
    """Per-groundtruth coverage flags for one image's top-k detections.

    By default one detection may witness several groundtruth instances
    (coverage counting); unique_match switches to the greedy one-to-one
    assignment used for AP.
    """
    return corloc_flags_arrays(
        top_detections.boxes, top_detections.scores, top_detections.category_ids,
        boxes_to_array([g.box for g in gts]),
        np.array([g.category_id for g in gts], dtype=np.int64),
        iou_threshold=iou_threshold, class_aware=class_aware,
        unique_match=unique_match,
    )


def corloc_aggregate(
    per_image: Iterable[tuple[np.ndarray, np.ndarray]],
) -> CorLocResult:
    """Pool (gt_category_ids, detected_flags) pairs into CorLoc ratios."""
    detected: dict[int, int] = {}
    total: dict[int, int] = {}
    for gt_cats, flags in per_image:
        for cat, hit in zip(gt_cats, flags):
            cat = int(cat)
            total[cat] = total.get(cat, 0) + 1
            if hit:
                detected[cat] = detected.get(cat, 0) + 1
    per_class = {
        cat: detected.get(cat, 0) / total[cat] for cat in sorted(total)
    }
    all_total = sum(total.values())
    all_detected = sum(detected.values())
    weighted = all_detected / all_total if all_total else None
    return CorLocResult(per_class, weighted, detected, total)


def corloc(
    detection_sets: Sequence[DetectionSet],
    gts_per_image: Sequence[Sequence[GroundTruthObject]],
    iou_threshold: float = 0.5,
    class_aware: bool = True,
    unique_match: bool = False,
) -> CorLocResult:
    """CorLoc over aligned (top-k detections, groundtruth) image pairs."""
    if len(detection_sets) != len(gts_per_image):
        raise ValidationError("detection sets and groundtruth lists must align")
    per_image = []
    for dset, gts in zip(detection_sets, gts_per_image):
        flags = corloc_detected_flags(
            dset, gts, iou_threshold=iou_threshold,
            class_aware=class_aware, unique_match=unique_match,
        )
        cats = np.array([g.category_id for g in gts], dtype=np.int64)
        per_image.append((cats, flags))
    return corloc_aggregate(per_image)


# ---------------------------------------------------------------------------
# Attribute precision / recall


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass
class AttributePR:
    """Per-attribute, per-type and overall precision/recall with supports."""

    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    vocabulary: AttributeVocabulary
    num_images: int = 0

    def precision(self, attribute_id: int) -> float | None:
        return _ratio(int(self.tp[attribute_id]),
                      int(self.tp[attribute_id] + self.fp[attribute_id]))

    def recall(self, attribute_id: int) -> float | None:
        return _ratio(int(self.tp[attribute_id]),
                      int(self.tp[attribute_id] + self.fn[attribute_id]))

    def support(self, attribute_id: int) -> int:
        """Number of images whose groundtruth carries the attribute."""
        return int(self.tp[attribute_id] + self.fn[attribute_id])

    def per_attribute(self) -> dict[int, tuple[float | None, float | None]]:
        return {
            e.attribute_id: (self.precision(e.attribute_id), self.recall(e.attribute_id))
            for e in self.vocabulary.entries
        }

    def _type_ids(self) -> dict[str, list[int]]:
        groups: dict[str, list[int]] = {t: [] for t in self.vocabulary.types}
        for e in self.vocabulary.entries:
            groups[e.attr_type].append(e.attribute_id)
        return groups

    def per_type(self, average: str = "micro") -> dict[str, tuple[float | None, float | None]]:
        """Type-level precision/recall: pooled counts (micro) or mean of
        defined per-attribute ratios (macro)."""
        if average not in ("micro", "macro"):
            raise ValidationError(f"unknown type average {average!r}")
        out: dict[str, tuple[float | None, float | None]] = {}
        for attr_type, ids in self._type_ids().items():
            if not ids:
                continue
            if average == "micro":
                tp = int(self.tp[ids].sum())
                fp = int(self.fp[ids].sum())
                fn = int(self.fn[ids].sum())
                out[attr_type] = (_ratio(tp, tp + fp), _ratio(tp, tp + fn))
            else:
                ps = [p for p in (self.precision(i) for i in ids) if p is not None]
                rs = [r for r in (self.recall(i) for i in ids) if r is not None]
                out[attr_type] = (
                    sum(ps) / len(ps) if ps else None,
                    sum(rs) / len(rs) if rs else None,
                )
        return out

    def overall(self) -> tuple[float | None, float | None]:
        """Micro precision/recall pooled over the whole vocabulary."""
        tp = int(self.tp.sum())
        fp = int(self.fp.sum())
        fn = int(self.fn.sum())
        return (_ratio(tp, tp + fp), _ratio(tp, tp + fn))


def _as_bool_vector(value, n: int) -> np.ndarray:
    arr = np.asarray(value) if isinstance(value, np.ndarray) else None
    if arr is not None and arr.dtype == bool:
        if arr.shape != (n,):
            raise ValidationError(
                f"attribute vector has length {arr.shape}, vocabulary has {n}"
            )
        return arr
    out = np.zeros(n, dtype=bool)
    idx = arr.astype(np.int64) if arr is not None else np.asarray(sorted(value), dtype=np.int64)
    if len(idx):
        if idx.min() < 0 or idx.max() >= n:
            raise ValidationError(f"attribute id outside vocabulary of size {n}")
        out[idx] = True
    return out


def attribute_pr(
    predictions: Iterable,
    groundtruths: Iterable,
    vocabulary: AttributeVocabulary,
) -> AttributePR:
    """Image-level attribute counts from aligned prediction/groundtruth pairs.

    Each element is either a boolean vector over the vocabulary or a
    collection of positive attribute ids. Images with no detections
    belong here too, as all-negative predictions.
    """
    n = len(vocabulary)
    tp = np.zeros(n, dtype=np.int64)
    fp = np.zeros(n, dtype=np.int64)
    fn = np.zeros(n, dtype=np.int64)
    num_images = 0
    preds = iter(predictions)
    gts = iter(groundtruths)
    while True:
        pred = next(preds, _SENTINEL)
        gt = next(gts, _SENTINEL)
        if pred is _SENTINEL and gt is _SENTINEL:
            break
        if pred is _SENTINEL or gt is _SENTINEL:
            raise ValidationError("predictions and groundtruths must align one per image")
        p = _as_bool_vector(pred, n)
        g = _as_bool_vector(gt, n)
        tp += p & g
        fp += p & ~g
        fn += ~p & g
        num_images += 1
    return AttributePR(tp=tp, fp=fp, fn=fn, vocabulary=vocabulary, num_images=num_images)


_SENTINEL = object()
