"""Axis-aligned box arithmetic: overlap ratios and shape statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in pixel coordinates.

    Coordinates are continuous reals; width and height must be strictly
    positive. Degenerate boxes are rejected at construction so overlap
    ratios never divide by zero.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError(
                f"degenerate box: ({self.x_min}, {self.y_min}, "
                f"{self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def translate(self, dx: float, dy: float) -> Box:
        return Box(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def scale(self, factor: float) -> Box:
        if factor <= 0:
            raise ValueError(f"scale factor must be positive, got {factor}")
        return Box(
            self.x_min * factor, self.y_min * factor,
            self.x_max * factor, self.y_max * factor,
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def intersection_area(a: Box, b: Box) -> float:
    """Overlap area of two boxes; 0 when disjoint."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: Box, b: Box) -> float:
    """Intersection over union, symmetric, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def ioa(candidate: Box, reference: Box) -> float:
    """Intersection over the candidate's own area.

    Asymmetric: equals 1 when the candidate lies entirely inside the
    reference. The denominator is always the first argument's area.
    """
    return intersection_area(candidate, reference) / candidate.area


def aspect_ratio(b: Box) -> float:
    """height / width."""
    return b.height / b.width


def area_fraction(b: Box, image_width: float, image_height: float) -> float:
    """Fraction of the image covered by the box, in (0, 1].

    Raises ValueError for boxes extending outside the image, which
    signals a corrupt annotation rather than a geometric edge case.
    """
    if image_width <= 0 or image_height <= 0:
        raise ValueError(
            f"image dimensions must be positive, got {image_width}x{image_height}"
        )
    if b.x_min < 0 or b.y_min < 0 or b.x_max > image_width or b.y_max > image_height:
        raise ValueError(
            f"box {b.as_tuple()} extends outside the "
            f"{image_width}x{image_height} image"
        )
    return b.area / (image_width * image_height)


def boxes_to_array(boxes) -> np.ndarray:
    """Stack boxes into an (n, 4) float64 array of (x_min, y_min, x_max, y_max)."""
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix of shape (len(a), len(b)) for two (n, 4) box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=inter > 0)
    return out


def pairwise_ioa(candidates: np.ndarray, references: np.ndarray) -> np.ndarray:
    """IoA matrix: intersection over each candidate's area, shape (n_cand, n_ref)."""
    c = np.asarray(candidates, dtype=np.float64).reshape(-1, 4)
    r = np.asarray(references, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(c[:, None, 2], r[None, :, 2]) - np.maximum(c[:, None, 0], r[None, :, 0])
    ih = np.minimum(c[:, None, 3], r[None, :, 3]) - np.maximum(c[:, None, 1], r[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_c = (c[:, 2] - c[:, 0]) * (c[:, 3] - c[:, 1])
    return inter / area_c[:, None]
