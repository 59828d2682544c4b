"""Evaluation report model, canonical JSON serialization and text rendering.

The machine format mirrors the headline result table: one row per
dataset partition, and per metric a mapping from variant label (the
model or run being scored) to a value or null when undefined. The
serializer is canonical (sorted keys, two-space indent, trailing
newline) so equal reports are equal bytes and a parsed file re-emits
itself unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError

FORMAT_TAG = "garmeval.report.v1"

HEADLINE_METRICS = (
    "weighted_map",
    "weighted_mean_corloc",
    "attribute_precision",
    "attribute_recall",
)

UNDEFINED_CELL = "—"  # undefined ratios render as an em dash, never as 0


@dataclass
class ReportRow:
    """One dataset partition: headline metrics plus optional per-variant detail."""

    dataset: str
    metrics: dict[str, dict[str, float | None]]
    detail: dict[str, dict] = field(default_factory=dict)


@dataclass
class EvaluationReport:
    rows: list[ReportRow]
    run_config: dict | None = None

    def row(self, dataset: str) -> ReportRow:
        for r in self.rows:
            if r.dataset == dataset:
                return r
        raise KeyError(dataset)

    def variant_labels(self) -> list[str]:
        labels: list[str] = []
        for row in self.rows:
            for per_variant in row.metrics.values():
                for label in per_variant:
                    if label not in labels:
                        labels.append(label)
        return labels


def _check_metrics(metrics: dict, dataset: str) -> None:
    for name, per_variant in metrics.items():
        if not isinstance(per_variant, dict):
            raise ValidationError(
                f"row {dataset!r}: metric {name!r} must map variant labels to values"
            )
        for label, value in per_variant.items():
            if value is None:
                continue
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValidationError(
                    f"row {dataset!r}: {name}[{label!r}] must be a number or null"
                )


def report_to_json(report: EvaluationReport) -> dict:
    payload: dict = {
        "format": FORMAT_TAG,
        "rows": [
            {"dataset": r.dataset, "metrics": r.metrics, "detail": r.detail}
            for r in report.rows
        ],
    }
    payload["run_config"] = report.run_config
    return payload


def serialize_report(report: EvaluationReport) -> str:
    return json.dumps(report_to_json(report), indent=2, sort_keys=True) + "\n"


def write_report(report: EvaluationReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_report(report))


def parse_report(text: str, *, path: str = "<report>") -> EvaluationReport:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc.msg}", path=path)
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_TAG:
        raise ValidationError(
            f"not a {FORMAT_TAG} file (format={payload.get('format')!r})"
            if isinstance(payload, dict) else "not a report object",
            path=path,
        )
    rows = []
    raw_rows = payload.get("rows")
    if not isinstance(raw_rows, list):
        raise ValidationError("rows must be a list", path=path)
    for raw in raw_rows:
        try:
            dataset = str(raw["dataset"])
            metrics = raw["metrics"]
            detail = raw.get("detail", {})
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad report row: {exc}", path=path)
        _check_metrics(metrics, dataset)
        rows.append(ReportRow(dataset=dataset, metrics=metrics, detail=detail))
    return EvaluationReport(rows=rows, run_config=payload.get("run_config"))


def read_report(path: str | Path) -> EvaluationReport:
    with open(path, "r", encoding="utf-8") as f:
        return parse_report(f.read(), path=str(path))


# ---------------------------------------------------------------------------
# Plain-text rendering


def _format_cell(value: float | None) -> str:
    if value is None:
        return UNDEFINED_CELL
    return f"{value:.4f}"


def _render_table(title: str, datasets: list[str], labels: list[str],
                  cells: dict[tuple[str, str], float | None]) -> list[str]:
    header = ["dataset"] + labels
    body = [[ds] + [_format_cell(cells.get((ds, lab))) for lab in labels]
            for ds in datasets]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = [title]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return lines


def render_text(report: EvaluationReport) -> str:
    """Aligned plain-text tables, one per headline metric present."""
    datasets = [r.dataset for r in report.rows]
    blocks: list[list[str]] = []
    for metric in HEADLINE_METRICS:
        labels: list[str] = []
        cells: dict[tuple[str, str], float | None] = {}
        present = False
        for row in report.rows:
            per_variant = row.metrics.get(metric)
            if per_variant is None:
                continue
            present = True
            for label, value in per_variant.items():
                if label not in labels:
                    labels.append(label)
                cells[(row.dataset, label)] = value
        if present:
            blocks.append(_render_table(metric, datasets, labels, cells))
    if not blocks:
        return "(empty report)\n"
    return "\n\n".join("\n".join(b) for b in blocks) + "\n"
