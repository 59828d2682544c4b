import json

import pytest

from garmeval.annotations import load_dataset
from garmeval.errors import ValidationError
from garmeval.evaluate import (
    ProtocolConfig,
    aggregate_metrics,
    collect_image_results,
    evaluate_detections,
)
from garmeval.report import serialize_report
from garmeval.simulate import SyntheticNoiseSpec, simulate_detections

from datagen import make_dataset_files


def frac(value):
    if value is None:
        return None
    num, den = value
    return num / den


@pytest.fixture
def micro(micro_dir):
    dataset = load_dataset(
        micro_dir / "groundtruth.jsonl",
        micro_dir / "attributes.jsonl",
        micro_dir / "categories.jsonl",
    )
    expected = json.loads((micro_dir / "expected.json").read_text())
    return dataset, micro_dir / "detections.jsonl", expected


class TestMicroFixture:
    def test_headline_metrics(self, micro):
        dataset, det_path, expected = micro
        results = collect_image_results(dataset, det_path, ProtocolConfig())
        metrics = aggregate_metrics(dataset, results, ProtocolConfig())
        overall = metrics[0]
        assert overall.domain == "all"
        assert overall.weighted_map == pytest.approx(
            frac(expected["weighted_map_pooled"]), abs=1e-12)
        assert overall.weighted_mean_corloc == pytest.approx(
            frac(expected["weighted_mean_corloc"]), abs=1e-12)
        for cat, ap in expected["per_class_ap"].items():
            assert overall.per_class_ap[int(cat)] == pytest.approx(frac(ap), abs=1e-12)
        for cat, cl in expected["per_class_corloc"].items():
            assert overall.per_class_corloc[int(cat)] == pytest.approx(frac(cl), abs=1e-12)
        assert overall.num_gt == expected["num_gt"]
        assert overall.num_images == expected["num_images"]

    def test_merged_predictions(self, micro):
        dataset, det_path, expected = micro
        results = collect_image_results(dataset, det_path, ProtocolConfig())
        for image_id, ids in expected["merged_predictions"].items():
            assert results[image_id].pred_attribute_ids.tolist() == ids

    def test_attribute_table(self, micro):
        dataset, det_path, expected = micro
        results = collect_image_results(dataset, det_path, ProtocolConfig())
        attr = aggregate_metrics(dataset, results, ProtocolConfig())[0].attributes
        for aid, value in expected["attribute_precision"].items():
            assert attr.precision(int(aid)) == (
                pytest.approx(frac(value), abs=1e-12) if value is not None else None)
        for aid, value in expected["attribute_recall"].items():
            assert attr.recall(int(aid)) == (
                pytest.approx(frac(value), abs=1e-12) if value is not None else None)
        for aid, support in expected["attribute_support"].items():
            assert attr.support(int(aid)) == support
        per_type = attr.per_type("micro")
        for t, value in expected["type_precision"].items():
            assert per_type[t][0] == pytest.approx(frac(value), abs=1e-12)
        for t, value in expected["type_recall"].items():
            assert per_type[t][1] == pytest.approx(frac(value), abs=1e-12)
        assert attr.overall()[0] == pytest.approx(
            frac(expected["overall_attribute_precision"]), abs=1e-12)
        assert attr.overall()[1] == pytest.approx(
            frac(expected["overall_attribute_recall"]), abs=1e-12)

    def test_support_weighted_map(self, micro):
        dataset, det_path, expected = micro
        cfg = ProtocolConfig(map_average="support")
        results = collect_image_results(dataset, det_path, cfg)
        overall = aggregate_metrics(dataset, results, cfg)[0]
        assert overall.weighted_map == pytest.approx(
            frac(expected["weighted_map_support"]), abs=1e-12)

    def test_report_carries_detail(self, micro):
        dataset, det_path, expected = micro
        report = evaluate_detections(dataset, det_path, ProtocolConfig(), label="run")
        row = report.row("all")
        assert row.metrics["weighted_map"]["run"] == pytest.approx(
            frac(expected["weighted_map_pooled"]), abs=1e-12)
        detail = row.detail["run"]
        assert detail["per_class_gt_count"] == {
            k: v for k, v in expected["per_class_gt_count"].items()}
        assert detail["per_attribute_precision"]["2"] is None
        assert detail["per_type_precision"]["shape"] == pytest.approx(1.0)
        # run config is embedded for traceability
        assert report.run_config["protocol"]["iou_threshold"] == 0.5
        assert report.run_config["label"] == "run"


class TestPipelineMechanics:
    def make_inputs(self, tmp_path, num_images=30, **sim_kwargs):
        files = make_dataset_files(tmp_path / "data", num_images=num_images,
                                   num_categories=4, num_attributes=10, seed=21,
                                   domain_tags=("shop", "runway"))
        dataset = load_dataset(files["groundtruth"], files["attr_vocab"],
                               files["cat_vocab"])
        det_path = tmp_path / "dets.jsonl"
        spec = SyntheticNoiseSpec(**{"seed": 5, **sim_kwargs})
        simulate_detections(dataset, spec, det_path)
        return dataset, det_path

    def test_parallel_matches_serial(self, tmp_path):
        dataset, det_path = self.make_inputs(
            tmp_path, box_jitter=0.2, tp_score_min=0.3, tp_score_max=1.0,
            distractor_rate=4.0, attr_flip_prob=0.2)
        serial = evaluate_detections(dataset, det_path, ProtocolConfig(), jobs=1)
        parallel = evaluate_detections(dataset, det_path, ProtocolConfig(), jobs=3)
        assert serialize_report(serial) == serialize_report(parallel)

    def test_domain_breakdown_rows(self, tmp_path):
        dataset, det_path = self.make_inputs(tmp_path)
        report = evaluate_detections(dataset, det_path, ProtocolConfig())
        assert [r.dataset for r in report.rows] == ["all", "runway", "shop"]

    def test_missing_images_count_as_empty(self, tmp_path):
        dataset, det_path = self.make_inputs(tmp_path)
        # keep only the first half of the detection lines
        lines = det_path.read_text().splitlines(keepends=True)
        half = tmp_path / "half.jsonl"
        half.write_text("".join(lines[:15]))
        report = evaluate_detections(dataset, half, ProtocolConfig())
        full = evaluate_detections(dataset, det_path, ProtocolConfig())
        row = report.row("all").metrics
        full_row = full.row("all").metrics
        assert row["weighted_mean_corloc"]["default"] < full_row["weighted_mean_corloc"]["default"]

    def test_no_overlap_is_error(self, tmp_path):
        dataset, det_path = self.make_inputs(tmp_path)
        renamed = tmp_path / "renamed.jsonl"
        renamed.write_text("".join(
            line.replace("img_", "other_") for line in det_path.read_text().splitlines(keepends=True)
        ))
        with pytest.raises(ValidationError, match="no overlapping image_ids"):
            evaluate_detections(dataset, renamed, ProtocolConfig(), strict=False)

    def test_unknown_image_strict_vs_lenient(self, tmp_path):
        dataset, det_path = self.make_inputs(tmp_path)
        lines = det_path.read_text().splitlines(keepends=True)
        extra = lines[0].replace("img_", "mystery_")
        mixed = tmp_path / "mixed.jsonl"
        mixed.write_text("".join(lines) + extra)
        with pytest.raises(ValidationError, match="absent from the groundtruth"):
            evaluate_detections(dataset, mixed, ProtocolConfig(), strict=True)
        report = evaluate_detections(dataset, mixed, ProtocolConfig(), strict=False)
        assert report.row("all").detail["default"]["num_images"] == 30

    def test_duplicate_detection_line_rejected(self, tmp_path):
        dataset, det_path = self.make_inputs(tmp_path)
        lines = det_path.read_text().splitlines(keepends=True)
        dup = tmp_path / "dup.jsonl"
        dup.write_text("".join(lines) + lines[0])
        with pytest.raises(ValidationError, match="more than once"):
            evaluate_detections(dataset, dup, ProtocolConfig())

    def test_negative_score_threshold_keeps_everything(self, micro_dir):
        dataset = load_dataset(
            micro_dir / "groundtruth.jsonl",
            micro_dir / "attributes.jsonl",
            micro_dir / "categories.jsonl",
        )
        cfg = ProtocolConfig(score_threshold=-1.0)
        results = collect_image_results(dataset, micro_dir / "detections.jsonl", cfg)
        # img_b's 0.45-score detection joins the AP pool under the diagnostic setting
        assert len(results["img_b"].det_scores) == 3

    def test_protocol_validation(self):
        with pytest.raises(ValidationError):
            ProtocolConfig(top_k=0)
        with pytest.raises(ValidationError):
            ProtocolConfig(merge_mode="nand")
