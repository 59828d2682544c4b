"""Anchor generation, three-way proposal labeling and person-box pruning."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .geometry import Box, boxes_to_array, pairwise_iou


class ProposalLabel(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    IGNORED = "ignored"


@dataclass(frozen=True)
class Proposal:
    """A candidate box; ``source`` is its anchor-grid index or an external id."""

    box: Box
    source: int


@dataclass(frozen=True)
class AssignmentConfig:
    """IoU thresholds for the three-way label assignment.

    ``best_match_positive`` additionally promotes, for every groundtruth
    box, the proposals attaining its maximum overlap (ties included),
    so each groundtruth has a positive even below ``positive_iou``.
    """

    positive_iou: float = 0.7
    negative_iou: float = 0.3
    best_match_positive: bool = True

    def __post_init__(self) -> None:
        if not (0 <= self.negative_iou <= self.positive_iou <= 1):
            raise ValidationError(
                f"need 0 <= negative_iou <= positive_iou <= 1, "
                f"got {self.negative_iou}, {self.positive_iou}"
            )


@dataclass(frozen=True)
class PruningConfig:
    """Person-box overlap threshold; ``threshold=None`` disables pruning."""

    threshold: float | None

    def __post_init__(self) -> None:
        if self.threshold is not None and not (0 < self.threshold <= 1):
            raise ValidationError(
                f"pruning threshold must be in (0, 1], got {self.threshold}"
            )

    @property
    def enabled(self) -> bool:
        return self.threshold is not None


def generate_anchor_grid(
    image_width: float,
    image_height: float,
    stride: float,
    scales: Sequence[float],
    ratios: Sequence[float],
) -> list[Proposal]:
    """Dense anchor grid: one box per (cell, scale, ratio).

    Cells cover the image at the given stride (ceil division), anchors
    are centered on cell centers and are area-preserving per ratio:
    width = scale/sqrt(ratio), height = scale*sqrt(ratio). Anchors are
    not clipped to the image.
    """
    if stride <= 0:
        raise ValidationError(f"stride must be positive, got {stride}")
    if not scales or not ratios:
        raise ValidationError("scales and ratios must be non-empty")
    if any(s <= 0 for s in scales) or any(r <= 0 for r in ratios):
        raise ValidationError("scales and ratios must be positive")

    cols = math.ceil(image_width / stride)
    rows = math.ceil(image_height / stride)
    shapes = [
        (scale / math.sqrt(ratio), scale * math.sqrt(ratio))
        for scale in scales
        for ratio in ratios
    ]
    anchors: list[Proposal] = []
    index = 0
    for row in range(rows):
        cy = (row + 0.5) * stride
        for col in range(cols):
            cx = (col + 0.5) * stride
            for w, h in shapes:
                anchors.append(Proposal(
                    Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2), index,
                ))
                index += 1
    return anchors


def assign_labels(
    proposals: Sequence[Proposal],
    gt_boxes: Sequence[Box],
    config: AssignmentConfig = AssignmentConfig(),
) -> list[ProposalLabel]:
    """Label each proposal Positive/Negative/Ignored against the groundtruth.

    With no groundtruth every proposal is Negative. Best-match promotion
    requires a strictly positive overlap, so a groundtruth box that
    touches nothing promotes nothing.
    """
    n = len(proposals)
    if n == 0:
        return []
    if not gt_boxes:
        return [ProposalLabel.NEGATIVE] * n

    overlaps = pairwise_iou(
        boxes_to_array([p.box for p in proposals]), boxes_to_array(gt_boxes)
    )
    max_iou = overlaps.max(axis=1)
    positive = max_iou >= config.positive_iou
    if config.best_match_positive:
        gt_best = overlaps.max(axis=0)
        best_mask = (overlaps == gt_best[None, :]) & (gt_best[None, :] > 0)
        positive |= best_mask.any(axis=1)
    negative = (~positive) & (max_iou < config.negative_iou)

    labels = []
    for i in range(n):
        if positive[i]:
            labels.append(ProposalLabel.POSITIVE)
        elif negative[i]:
            labels.append(ProposalLabel.NEGATIVE)
        else:
            labels.append(ProposalLabel.IGNORED)
    return labels


def prune(
    labels: Sequence[ProposalLabel],
    proposals: Sequence[Proposal],
    person_boxes: Sequence[Box],
    config: PruningConfig,
) -> tuple[list[ProposalLabel], int]:
    """Flip Negative labels to Ignored where a proposal sits on a person.

    The only transition is Negative -> Ignored, triggered when the
    proposal's best IoU against the person boxes reaches the threshold.
    Disabled config or no person boxes leaves the labels untouched.
    """
    if len(labels) != len(proposals):
        raise ValidationError(
            f"{len(labels)} labels for {len(proposals)} proposals"
        )
    out = list(labels)
    if not config.enabled or not person_boxes or not proposals:
        return out, 0

    negative_idx = [i for i, lab in enumerate(labels) if lab is ProposalLabel.NEGATIVE]
    if not negative_idx:
        return out, 0
    overlaps = pairwise_iou(
        boxes_to_array([proposals[i].box for i in negative_idx]),
        boxes_to_array(person_boxes),
    )
    hit = overlaps.max(axis=1) >= config.threshold
    pruned = 0
    for i, flipped in zip(negative_idx, hit):
        if flipped:
            out[i] = ProposalLabel.IGNORED
            pruned += 1
    return out, pruned


def label_histogram(labels: Sequence[ProposalLabel]) -> dict[str, int]:
    counts = {"positive": 0, "negative": 0, "ignored": 0}
    for lab in labels:
        counts[lab.value] += 1
    return counts
