"""End-to-end evaluation: detection file + groundtruth -> report.

Images are processed independently (optionally across worker
processes) and reduced in dataset order, so the report bytes do not
depend on the parallelism degree or worker scheduling.
"""

from __future__ import annotations

import logging
import multiprocessing
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .annotations import Dataset, image_attribute_ids
from .errors import ValidationError
from .geometry import boxes_to_array
from .metrics import (
    AttributePR,
    MatchOutcome,
    attribute_pr,
    corloc_aggregate,
    corloc_flags_arrays,
    match_arrays,
    per_class_ap,
    weighted_map,
)
from .postprocess import (
    IOA_DENOMINATORS,
    MERGE_MODES,
    filter_by_score,
    merge_attributes,
    parse_detection_line,
    top_k,
)
from .report import EvaluationReport, ReportRow

logger = logging.getLogger(__name__)

_CHUNK_LINES = 64


@dataclass(frozen=True)
class ProtocolConfig:
    """Evaluation protocol constants; defaults follow the standard recipe."""

    score_threshold: float = 0.5
    iou_threshold: float = 0.5
    top_k: int = 5
    ioa_threshold: float = 0.7
    attr_threshold: float = 0.5
    class_aware: bool = True
    merge_mode: str = "and"
    ioa_denominator: str = "candidate"
    corloc_unique_match: bool = False
    map_average: str = "pooled"
    type_average: str = "micro"
    max_detections: int = 300

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValidationError(f"top_k must be >= 1, got {self.top_k}")
        if not (0 <= self.iou_threshold <= 1):
            raise ValidationError(f"iou_threshold must be in [0, 1], got {self.iou_threshold}")
        if self.merge_mode not in MERGE_MODES:
            raise ValidationError(f"unknown merge mode {self.merge_mode!r}")
        if self.ioa_denominator not in IOA_DENOMINATORS:
            raise ValidationError(f"unknown IoA denominator {self.ioa_denominator!r}")
        if self.map_average not in ("pooled", "support"):
            raise ValidationError(f"unknown map average {self.map_average!r}")
        if self.type_average not in ("micro", "macro"):
            raise ValidationError(f"unknown type average {self.type_average!r}")
        if self.max_detections < 1:
            raise ValidationError(f"max_detections must be >= 1, got {self.max_detections}")


@dataclass
class ImageResult:
    """Reduced per-image evidence feeding the final metric aggregation."""

    image_id: str
    det_scores: np.ndarray
    det_is_tp: np.ndarray
    det_category_ids: np.ndarray
    gt_detected: np.ndarray
    corloc_flags: np.ndarray
    pred_attribute_ids: np.ndarray

    @classmethod
    def empty(cls, image_id: str, num_gt: int) -> "ImageResult":
        return cls(
            image_id=image_id,
            det_scores=np.zeros(0, dtype=np.float64),
            det_is_tp=np.zeros(0, dtype=bool),
            det_category_ids=np.zeros(0, dtype=np.int64),
            gt_detected=np.zeros(num_gt, dtype=bool),
            corloc_flags=np.zeros(num_gt, dtype=bool),
            pred_attribute_ids=np.zeros(0, dtype=np.int64),
        )


# Worker-process state installed by the pool initializer (inherited
# directly when running inline with jobs=1).
_worker_gt: dict[str, tuple[np.ndarray, np.ndarray]] = {}
_worker_cfg: ProtocolConfig | None = None
_worker_num_attrs = 0
_worker_num_cats = 0
_worker_strict = True
_worker_path = "<detections>"


def _init_worker(gt_index, cfg, num_attrs, num_cats, strict, path) -> None:
    global _worker_gt, _worker_cfg, _worker_num_attrs, _worker_num_cats
    global _worker_strict, _worker_path
    _worker_gt = gt_index
    _worker_cfg = cfg
    _worker_num_attrs = num_attrs
    _worker_num_cats = num_cats
    _worker_strict = strict
    _worker_path = path


def _process_image(dset, gt_boxes, gt_cats, cfg: ProtocolConfig) -> ImageResult:
    filtered = filter_by_score(dset, cfg.score_threshold)
    is_tp, gt_detected = match_arrays(
        filtered.boxes, filtered.scores, filtered.category_ids,
        gt_boxes, gt_cats,
        iou_threshold=cfg.iou_threshold, class_aware=cfg.class_aware,
    )
    top = top_k(dset, cfg.top_k)
    corloc_flags = corloc_flags_arrays(
        top.boxes, top.scores, top.category_ids, gt_boxes, gt_cats,
        iou_threshold=cfg.iou_threshold, class_aware=cfg.class_aware,
        unique_match=cfg.corloc_unique_match,
    )
    pred_vector, _ = merge_attributes(
        dset, ioa_threshold=cfg.ioa_threshold,
        attr_score_threshold=cfg.attr_threshold, mode=cfg.merge_mode,
        ioa_denominator=cfg.ioa_denominator,
    )
    return ImageResult(
        image_id=dset.image_id,
        det_scores=filtered.scores,
        det_is_tp=is_tp,
        det_category_ids=filtered.category_ids,
        gt_detected=gt_detected,
        corloc_flags=corloc_flags,
        pred_attribute_ids=np.flatnonzero(pred_vector).astype(np.int64),
    )


def _process_chunk(chunk: tuple[int, list[str]]):
    start_lineno, lines = chunk
    cfg = _worker_cfg
    assert cfg is not None
    results: list[ImageResult] = []
    skipped: list[str] = []
    for offset, line in enumerate(lines):
        lineno = start_lineno + offset
        if not line.strip():
            continue
        dset = parse_detection_line(
            line, _worker_num_attrs, num_categories=_worker_num_cats,
            max_detections=cfg.max_detections, path=_worker_path, lineno=lineno,
        )
        gt = _worker_gt.get(dset.image_id)
        if gt is None:
            if _worker_strict:
                raise ValidationError(
                    f"image {dset.image_id!r} absent from the groundtruth",
                    path=_worker_path, line=lineno,
                )
            skipped.append(dset.image_id)
            continue
        results.append(_process_image(dset, gt[0], gt[1], cfg))
    return results, skipped


def _chunks(path: str | Path) -> Iterator[tuple[int, list[str]]]:
    with open(path, "r", encoding="utf-8") as f:
        lineno = 1
        batch: list[str] = []
        start = 1
        for line in f:
            if not batch:
                start = lineno
            batch.append(line)
            lineno += 1
            if len(batch) >= _CHUNK_LINES:
                yield start, batch
                batch = []
        if batch:
            yield start, batch


def collect_image_results(
    dataset: Dataset,
    detections_path: str | Path,
    config: ProtocolConfig,
    *,
    jobs: int = 1,
    strict: bool = True,
) -> dict[str, ImageResult]:
    """Process every detection line; one result per overlapping image."""
    gt_index = {
        r.image_id: (
            boxes_to_array([o.box for o in r.objects]),
            np.array([o.category_id for o in r.objects], dtype=np.int64),
        )
        for r in dataset.images
    }
    init_args = (gt_index, config, len(dataset.attributes),
                 len(dataset.categories), strict, str(detections_path))

    results: dict[str, ImageResult] = {}
    skipped_total = 0

    def _absorb(batch):
        nonlocal skipped_total
        batch_results, skipped = batch
        skipped_total += len(skipped)
        for res in batch_results:
            if res.image_id in results:
                raise ValidationError(
                    f"image {res.image_id!r} appears more than once in the detection file"
                )
            results[res.image_id] = res

    if jobs <= 1:
        _init_worker(*init_args)
        try:
            for chunk in _chunks(detections_path):
                _absorb(_process_chunk(chunk))
        finally:
            _init_worker({}, None, 0, 0, True, "<detections>")
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(jobs, initializer=_init_worker, initargs=init_args) as pool:
            for batch in pool.imap(_process_chunk, _chunks(detections_path)):
                _absorb(batch)

    if skipped_total:
        logger.warning("skipped %d detection images absent from the groundtruth",
                       skipped_total)
    if not results:
        raise ValidationError(
            "no overlapping image_ids between the detection file and the groundtruth"
        )
    return results


@dataclass
class DomainMetrics:
    domain: str
    num_images: int
    num_gt: int
    per_class_ap: dict[int, float]
    weighted_map: float | None
    per_class_corloc: dict[int, float]
    weighted_mean_corloc: float | None
    per_class_gt: dict[int, int]
    attributes: AttributePR


def _aggregate_domain(domain: str, records, results: dict[str, ImageResult],
                      dataset: Dataset, config: ProtocolConfig) -> DomainMetrics:
    outcomes = []
    corloc_pairs = []
    preds = []
    gts = []
    num_gt = 0
    for record in records:
        gt_cats = np.array([o.category_id for o in record.objects], dtype=np.int64)
        num_gt += len(gt_cats)
        res = results.get(record.image_id)
        if res is None:
            res = ImageResult.empty(record.image_id, len(gt_cats))
        outcomes.append(MatchOutcome(
            det_scores=res.det_scores,
            det_is_tp=res.det_is_tp,
            det_category_ids=res.det_category_ids,
            gt_detected=res.gt_detected,
            gt_category_ids=gt_cats,
        ))
        corloc_pairs.append((gt_cats, res.corloc_flags))
        preds.append(res.pred_attribute_ids)
        gts.append(sorted(image_attribute_ids(record)))

    cor = corloc_aggregate(corloc_pairs)
    attr = attribute_pr(preds, gts, dataset.attributes)
    return DomainMetrics(
        domain=domain,
        num_images=len(outcomes),
        num_gt=num_gt,
        per_class_ap=per_class_ap(outcomes),
        weighted_map=weighted_map(outcomes, average=config.map_average),
        per_class_corloc=cor.per_class,
        weighted_mean_corloc=cor.weighted_mean,
        per_class_gt=cor.total_by_class,
        attributes=attr,
    )


def aggregate_metrics(dataset: Dataset, results: dict[str, ImageResult],
                      config: ProtocolConfig) -> list[DomainMetrics]:
    """Metrics for the whole dataset ("all") plus every domain partition."""
    domains: dict[str, list] = {}
    for record in dataset.images:
        domains.setdefault(record.domain_tag, []).append(record)
    out = [_aggregate_domain("all", dataset.images, results, dataset, config)]
    for tag in sorted(domains):
        out.append(_aggregate_domain(tag, domains[tag], results, dataset, config))
    return out


def _detail(dm: DomainMetrics, config: ProtocolConfig) -> dict:
    attr = dm.attributes
    per_attr = attr.per_attribute()
    per_type = attr.per_type(average=config.type_average)
    return {
        "num_images": dm.num_images,
        "num_gt": dm.num_gt,
        "per_class_ap": {str(c): v for c, v in dm.per_class_ap.items()},
        "per_class_corloc": {str(c): v for c, v in dm.per_class_corloc.items()},
        "per_class_gt_count": {str(c): v for c, v in sorted(dm.per_class_gt.items())},
        "per_attribute_precision": {str(a): pr[0] for a, pr in per_attr.items()},
        "per_attribute_recall": {str(a): pr[1] for a, pr in per_attr.items()},
        "per_attribute_support": {
            str(e.attribute_id): attr.support(e.attribute_id)
            for e in attr.vocabulary.entries
        },
        "per_type_precision": {t: pr[0] for t, pr in per_type.items()},
        "per_type_recall": {t: pr[1] for t, pr in per_type.items()},
    }


def build_report(domain_metrics: Sequence[DomainMetrics], config: ProtocolConfig,
                 *, label: str = "default",
                 inputs: dict | None = None) -> EvaluationReport:
    rows = []
    for dm in domain_metrics:
        overall_p, overall_r = dm.attributes.overall()
        rows.append(ReportRow(
            dataset=dm.domain,
            metrics={
                "weighted_map": {label: dm.weighted_map},
                "weighted_mean_corloc": {label: dm.weighted_mean_corloc},
                "attribute_precision": {label: overall_p},
                "attribute_recall": {label: overall_r},
            },
            detail={label: _detail(dm, config)},
        ))
    run_config: dict = {"protocol": asdict(config), "label": label}
    if inputs:
        run_config["inputs"] = inputs
    return EvaluationReport(rows=rows, run_config=run_config)


def evaluate_detections(
    dataset: Dataset,
    detections_path: str | Path,
    config: ProtocolConfig = ProtocolConfig(),
    *,
    jobs: int = 1,
    strict: bool = True,
    label: str = "default",
    inputs: dict | None = None,
) -> EvaluationReport:
    """Full pipeline: postprocess + match + aggregate into a report."""
    results = collect_image_results(
        dataset, detections_path, config, jobs=jobs, strict=strict,
    )
    metrics = aggregate_metrics(dataset, results, config)
    return build_report(metrics, config, label=label, inputs=inputs)
