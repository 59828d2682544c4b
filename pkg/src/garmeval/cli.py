"""Command-line surface: clean, simulate, label-proposals, evaluate, report.

Exit codes are a stable contract: 0 success, 1 validation or protocol
error, 2 I/O failure. The default cleaning config resolves as
--cleaning-config flag > $GARMEVAL_CONFIG_DIR/cleaning.yaml > the
packaged starter config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from .annotations import (
    CleaningConfig,
    clean_attributes,
    clean_boxes,
    load_cleaning_config,
    load_dataset,
    remap_groundtruth,
    write_attribute_vocabulary,
    write_category_vocabulary,
    write_dataset,
)
from .errors import ValidationError
from .evaluate import ProtocolConfig, evaluate_detections
from .proposals import (
    AssignmentConfig,
    PruningConfig,
    assign_labels,
    generate_anchor_grid,
    label_histogram,
    prune,
)
from .report import read_report, render_text, write_report
from .simulate import SyntheticNoiseSpec, simulate_detections

CONFIG_DIR_ENV = "GARMEVAL_CONFIG_DIR"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class _Parser(argparse.ArgumentParser):
    # usage errors are validation errors, not I/O errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--groundtruth", required=True, help="groundtruth JSONL file")
    p.add_argument("--attr-vocab", required=True, help="attribute vocabulary JSONL file")
    p.add_argument("--cat-vocab", required=True, help="category vocabulary JSONL file")
    p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True,
                   help="fail on out-of-bounds boxes instead of clipping")


def _resolve_cleaning_config(flag_value: str | None) -> CleaningConfig:
    if flag_value is not None:
        return load_cleaning_config(flag_value)
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir:
        candidate = Path(env_dir) / "cleaning.yaml"
        if candidate.exists():
            return load_cleaning_config(candidate)
    ref = resources.files("garmeval").joinpath("data/cleaning_default.yaml")
    with resources.as_file(ref) as path:
        return load_cleaning_config(path)


def _cmd_clean(args) -> int:
    dataset = load_dataset(args.groundtruth, args.attr_vocab, args.cat_vocab,
                           strict=args.strict)
    config = _resolve_cleaning_config(args.cleaning_config)
    vocab_before = len(dataset.attributes)

    cleaned, log = clean_boxes(dataset, config)
    remap = clean_attributes(dataset.attributes, config)
    cleaned = remap_groundtruth(cleaned, remap)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_dataset(cleaned, out_dir / "groundtruth.jsonl")
    write_attribute_vocabulary(cleaned.attributes, out_dir / "attributes.jsonl")
    write_category_vocabulary(cleaned.categories, out_dir / "categories.jsonl")
    log.write(out_dir / "removal_log.jsonl")

    summary = {
        "images": len(cleaned.images),
        "objects_removed": len(log.removals),
        "removed_by_rule": log.counts_by_rule(),
        "images_emptied": len(log.emptied_images),
        "vocabulary_before": vocab_before,
        "vocabulary_after": len(cleaned.attributes),
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as f:
        f.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_simulate(args) -> int:
    dataset = load_dataset(args.groundtruth, args.attr_vocab, args.cat_vocab,
                           strict=args.strict)
    spec = SyntheticNoiseSpec(
        box_jitter=args.jitter,
        tp_score_min=args.tp_score_range[0],
        tp_score_max=args.tp_score_range[1],
        distractor_rate=args.distractor_rate,
        distractor_score_min=args.distractor_score_range[0],
        distractor_score_max=args.distractor_score_range[1],
        attr_flip_prob=args.attr_flip_prob,
        max_detections=args.max_detections,
        seed=args.seed,
    )
    summary = simulate_detections(dataset, spec, args.out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _parse_prune_threshold(raw: str) -> float | None:
    if raw.lower() in ("off", "none", "disabled"):
        return None
    try:
        return float(raw)
    except ValueError:
        raise ValidationError(f"--prune-threshold must be a number or 'off', got {raw!r}")


def _cmd_label_proposals(args) -> int:
    dataset = load_dataset(args.groundtruth, args.attr_vocab, args.cat_vocab,
                           strict=args.strict)
    assignment = AssignmentConfig(
        positive_iou=args.positive_iou,
        negative_iou=args.negative_iou,
        best_match_positive=args.best_match,
    )
    pruning = PruningConfig(threshold=_parse_prune_threshold(args.prune_threshold))
    scales = [float(s) for s in args.scales.split(",") if s]
    ratios = [float(r) for r in args.ratios.split(",") if r]

    totals = {"positive": 0, "negative": 0, "ignored": 0, "pruned": 0}
    with open(args.out, "w", encoding="utf-8") as f:
        for record in dataset.images:
            if record.person_boxes is None and args.strict:
                raise ValidationError(
                    f"image {record.image_id!r} has no person_boxes field "
                    "(use --no-strict to treat it as empty)"
                )
            proposals = generate_anchor_grid(
                record.width, record.height, args.stride, scales, ratios)
            labels = assign_labels(proposals, [o.box for o in record.objects], assignment)
            before = label_histogram(labels)
            pruned_labels, pruned_count = prune(
                labels, proposals, record.person_boxes_or_empty(), pruning)
            after = label_histogram(pruned_labels)
            for key in ("positive", "negative", "ignored"):
                totals[key] += after[key]
            totals["pruned"] += pruned_count
            f.write(json.dumps({
                "image_id": record.image_id,
                "before": before,
                "after": after,
                "pruned_count": pruned_count,
            }, separators=(",", ":")) + "\n")
    print(json.dumps(totals, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    dataset = load_dataset(args.groundtruth, args.attr_vocab, args.cat_vocab,
                           strict=args.strict)
    config = ProtocolConfig(
        score_threshold=args.score_threshold,
        iou_threshold=args.iou_threshold,
        top_k=args.topk,
        ioa_threshold=args.ioa_threshold,
        attr_threshold=args.attr_threshold,
        class_aware=args.class_aware,
        merge_mode=args.merge_mode,
        ioa_denominator=args.ioa_denominator,
        corloc_unique_match=args.corloc_unique_match,
        map_average=args.map_average,
        type_average=args.type_average,
        max_detections=args.max_detections,
    )
    report = evaluate_detections(
        dataset, args.detections, config,
        jobs=args.jobs, strict=args.strict, label=args.label,
        inputs={
            "groundtruth": str(args.groundtruth),
            "detections": str(args.detections),
            "attr_vocab": str(args.attr_vocab),
            "cat_vocab": str(args.cat_vocab),
        },
    )
    write_report(report, args.out)
    print(render_text(report), end="")
    return EXIT_OK


def _cmd_report(args) -> int:
    report = read_report(args.report)
    text = render_text(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="garmeval",
                     description="Garment detection dataset cleaning and evaluation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("clean", help="apply box and attribute cleaning to a dataset")
    _dataset_args(p)
    p.add_argument("--cleaning-config", default=None,
                   help="cleaning config YAML (default: env dir, then packaged starter)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_clean)

    p = sub.add_parser("simulate", help="generate seeded synthetic detections")
    _dataset_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=0.0,
                   help="box jitter as a fraction of box size")
    p.add_argument("--tp-score-range", type=float, nargs=2, default=[1.0, 1.0],
                   metavar=("LO", "HI"))
    p.add_argument("--distractor-rate", type=float, default=0.0,
                   help="expected distractors per image")
    p.add_argument("--distractor-score-range", type=float, nargs=2, default=[0.0, 1.0],
                   metavar=("LO", "HI"))
    p.add_argument("--attr-flip-prob", type=float, default=0.0)
    p.add_argument("--max-detections", type=int, default=300)
    p.add_argument("--out", required=True, help="output detection JSONL file")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("label-proposals",
                       help="assign anchor labels and apply person-box pruning")
    _dataset_args(p)
    p.add_argument("--stride", type=float, default=16.0)
    p.add_argument("--scales", default="64,128,256", help="comma-separated side lengths")
    p.add_argument("--ratios", default="0.5,1.0,2.0", help="comma-separated h/w ratios")
    p.add_argument("--positive-iou", type=float, default=0.7)
    p.add_argument("--negative-iou", type=float, default=0.3)
    p.add_argument("--best-match", action=argparse.BooleanOptionalAction, default=True,
                   help="promote each groundtruth's best-overlap proposals to positive")
    p.add_argument("--prune-threshold", default="off",
                   help="person-box IoU threshold, or 'off'")
    p.add_argument("--out", required=True, help="output label histogram JSONL file")
    p.set_defaults(func=_cmd_label_proposals)

    p = sub.add_parser("evaluate", help="score a detection file against groundtruth")
    _dataset_args(p)
    p.add_argument("--detections", required=True, help="detection JSONL file")
    p.add_argument("--score-threshold", type=float, default=0.5,
                   help="AP pool keeps detections scoring strictly above this "
                        "(negative keeps everything)")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--topk", type=int, default=5, help="detections per image for CorLoc")
    p.add_argument("--ioa-threshold", type=float, default=0.7)
    p.add_argument("--attr-threshold", type=float, default=0.5)
    p.add_argument("--merge-mode", choices=["and", "or", "majority"], default="and")
    p.add_argument("--ioa-denominator", choices=["candidate", "reference", "smaller"],
                   default="candidate",
                   help="which box's area divides the merge-pool overlap")
    p.add_argument("--class-aware", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--corloc-unique-match", action="store_true",
                   help="one-to-one CorLoc matching instead of coverage counting")
    p.add_argument("--map-average", choices=["pooled", "support"], default="pooled")
    p.add_argument("--type-average", choices=["micro", "macro"], default="micro")
    p.add_argument("--max-detections", type=int, default=300)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--label", default="default", help="variant label for report columns")
    p.add_argument("--out", required=True, help="output report JSON file")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="render a machine report as a text table")
    p.add_argument("report", help="report JSON file")
    p.add_argument("--out", default=None, help="also write the table to this file")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        name = getattr(exc, "filename", None)
        detail = f"{exc.strerror}: {name}" if name else str(exc)
        print(f"i/o error: {detail}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
