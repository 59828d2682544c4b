import json

import numpy as np
import pytest

from garmeval.errors import ValidationError
from garmeval.geometry import Box
from garmeval.postprocess import (
    Detection,
    DetectionSet,
    detection_set_to_json,
    filter_by_score,
    merge_attributes,
    parse_detection_line,
    read_detection_file,
    top_k,
    write_detection_file,
)

NUM_ATTRS = 6


def det(box, score, attrs=None, cat=0):
    return Detection(Box(*box), cat, score, attrs or {})


def dset(detections, image_id="img"):
    return DetectionSet.from_detections(image_id, detections, NUM_ATTRS)


class TestDetectionSet:
    def test_round_trip_objects(self):
        d = det((0, 0, 10, 10), 0.9, {1: 0.8, 3: 0.2})
        ds = dset([d])
        assert len(ds) == 1
        assert ds[0] == d
        assert ds.detections == [d]

    def test_score_out_of_range(self):
        with pytest.raises(ValidationError, match="category scores"):
            dset([det((0, 0, 10, 10), 1.5)])

    def test_attr_id_out_of_range(self):
        with pytest.raises(ValidationError, match="attribute id"):
            dset([det((0, 0, 10, 10), 0.5, {NUM_ATTRS: 0.9})])

    def test_attr_score_out_of_range(self):
        with pytest.raises(ValidationError, match="attribute scores"):
            dset([det((0, 0, 10, 10), 0.5, {0: -0.1})])

    def test_subset_preserves_sparse_rows(self):
        ds = dset([
            det((0, 0, 10, 10), 0.9, {0: 0.5, 1: 0.6}),
            det((0, 0, 20, 20), 0.8, {2: 0.7}),
            det((0, 0, 30, 30), 0.7, {3: 0.1, 4: 0.9, 5: 0.3}),
        ])
        sub = ds.subset(np.array([2, 0]))
        assert sub.detections == [ds[2], ds[0]]


class TestFilterByScore:
    def test_strictly_greater(self):
        ds = dset([det((0, 0, 1, 1), 0.9), det((0, 0, 1, 1), 0.5), det((0, 0, 1, 1), 0.2)])
        out = filter_by_score(ds, 0.5)
        assert [d.category_score for d in out.detections] == [0.9]

    def test_empty(self):
        assert len(filter_by_score(dset([]), 0.5)) == 0

    def test_threshold_zero_drops_zero_scores(self):
        ds = dset([det((0, 0, 1, 1), 0.0), det((0, 0, 1, 1), 0.01)])
        out = filter_by_score(ds, 0.0)
        assert [d.category_score for d in out.detections] == [0.01]

    def test_idempotent_and_order_preserving(self):
        rng = np.random.default_rng(5)
        ds = dset([det((0, 0, 1, 1), float(s)) for s in rng.random(20)])
        once = filter_by_score(ds, 0.5)
        twice = filter_by_score(once, 0.5)
        assert once.detections == twice.detections
        scores = [d.category_score for d in once.detections]
        assert scores == [s for s in ds.scores if s > 0.5]


class TestTopK:
    def test_fewer_than_k(self):
        ds = dset([det((0, 0, 1, 1), 0.5)] * 3)
        assert len(top_k(ds, 5)) == 3

    def test_tie_break_by_index(self):
        ds = dset([det((0, 0, 1, 1), 0.1), det((0, 0, 2, 2), 0.9),
                   det((0, 0, 3, 3), 0.9), det((0, 0, 4, 4), 0.2)])
        out = top_k(ds, 2)
        assert [d.box.x_max for d in out.detections] == [2, 3]

    def test_k_one_is_argmax(self):
        ds = dset([det((0, 0, 1, 1), 0.3), det((0, 0, 2, 2), 0.8), det((0, 0, 3, 3), 0.5)])
        out = top_k(ds, 1)
        assert out.detections[0].category_score == 0.8

    def test_idempotent(self):
        rng = np.random.default_rng(6)
        ds = dset([det((0, 0, 1, 1), float(s)) for s in rng.random(12)])
        once = top_k(ds, 5)
        assert top_k(once, 5).detections == once.detections

    def test_k_must_be_positive(self):
        with pytest.raises(ValidationError):
            top_k(dset([]), 0)


class TestMergeAttributes:
    def test_single_detection(self):
        ds = dset([det((0, 0, 10, 10), 0.9, {0: 0.9, 1: 0.3})])
        vec, empty = merge_attributes(ds)
        assert not empty
        assert list(np.flatnonzero(vec)) == [0]

    def test_coincident_pair_uses_and(self):
        ds = dset([
            det((0, 0, 10, 10), 0.9, {0: 0.9, 1: 0.6}),
            det((0, 0, 10, 10), 0.8, {0: 0.8, 1: 0.4}),
        ])
        vec, empty = merge_attributes(ds)
        assert list(np.flatnonzero(vec)) == [0]

    def test_disjoint_second_detection_excluded(self):
        ds = dset([
            det((0, 0, 10, 10), 0.9, {0: 0.9, 1: 0.8}),
            det((50, 50, 60, 60), 0.8, {}),
        ])
        vec, _ = merge_attributes(ds)
        assert list(np.flatnonzero(vec)) == [0, 1]

    def test_empty_set_flags_and_zeroes(self):
        vec, empty = merge_attributes(dset([]))
        assert empty
        assert not vec.any()

    def test_ioa_threshold_strictly_greater(self):
        # second box covers exactly 70% of itself over the top box
        ds = dset([
            det((0, 0, 10, 10), 0.9, {0: 0.9, 1: 0.9}),
            det((3, 0, 13, 10), 0.8, {0: 0.9}),  # ioa = 7/10 = 0.7, not > 0.7
        ])
        vec, _ = merge_attributes(ds, ioa_threshold=0.7)
        assert list(np.flatnonzero(vec)) == [0, 1]

    def test_score_tie_top_detection_is_first(self):
        ds = dset([
            det((0, 0, 10, 10), 0.9, {0: 0.9}),
            det((50, 50, 60, 60), 0.9, {1: 0.9}),
        ])
        vec, _ = merge_attributes(ds)
        assert list(np.flatnonzero(vec)) == [0]

    def test_merged_is_subset_of_top_detection(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            n = int(rng.integers(1, 8))
            dets = []
            for _ in range(n):
                x, y = rng.uniform(0, 50, 2)
                attrs = {int(a): float(rng.random())
                         for a in rng.choice(NUM_ATTRS, rng.integers(0, 4), replace=False)}
                dets.append(det((x, y, x + rng.uniform(1, 40), y + rng.uniform(1, 40)),
                                float(rng.random()), attrs))
            ds = dset(dets)
            vec, _ = merge_attributes(ds)
            best = int(np.argmax(ds.scores))
            top_vec = np.zeros(NUM_ATTRS, dtype=bool)
            top_vec[ds.binarized_attributes(best, 0.5)] = True
            assert not (vec & ~top_vec).any()

    def test_raising_ioa_threshold_grows_result(self):
        ds = dset([
            det((0, 0, 10, 10), 0.9, {0: 0.9, 1: 0.9}),
            det((0, 3, 10, 13), 0.8, {0: 0.9}),  # ioa 0.7 over the top box
        ])
        loose, _ = merge_attributes(ds, ioa_threshold=0.5)
        tight, _ = merge_attributes(ds, ioa_threshold=0.95)
        assert list(np.flatnonzero(loose)) == [0]
        assert list(np.flatnonzero(tight)) == [0, 1]
        assert (loose <= tight).all()

    def test_or_and_majority_modes(self):
        ds = dset([
            det((0, 0, 10, 10), 0.9, {0: 0.9, 1: 0.9}),
            det((0, 0, 10, 10), 0.8, {0: 0.9, 2: 0.9}),
            det((0, 0, 10, 10), 0.7, {0: 0.9}),
        ])
        v_and, _ = merge_attributes(ds, mode="and")
        v_or, _ = merge_attributes(ds, mode="or")
        v_maj, _ = merge_attributes(ds, mode="majority")
        assert list(np.flatnonzero(v_and)) == [0]
        assert list(np.flatnonzero(v_or)) == [0, 1, 2]
        assert list(np.flatnonzero(v_maj)) == [0]

    def test_unknown_mode(self):
        with pytest.raises(ValidationError):
            merge_attributes(dset([]), mode="xor")

    def test_ioa_denominator_conventions(self):
        # small second box inside the top one: candidate ratio 1, reference 0.04
        ds = dset([
            det((0, 0, 50, 50), 0.9, {0: 0.9, 1: 0.9}),
            det((10, 10, 20, 20), 0.8, {0: 0.9}),
        ])
        by_candidate, _ = merge_attributes(ds, ioa_denominator="candidate")
        by_reference, _ = merge_attributes(ds, ioa_denominator="reference")
        by_smaller, _ = merge_attributes(ds, ioa_denominator="smaller")
        assert list(np.flatnonzero(by_candidate)) == [0]  # small box joins, vetoes 1
        assert list(np.flatnonzero(by_reference)) == [0, 1]  # ratio 0.04, excluded
        assert list(np.flatnonzero(by_smaller)) == [0]

    def test_unknown_ioa_denominator(self):
        with pytest.raises(ValidationError):
            merge_attributes(dset([]), ioa_denominator="bigger")

    def test_permutation_invariant_with_unique_top(self):
        rng = np.random.default_rng(13)
        dets = []
        scores = rng.permutation(np.linspace(0.1, 0.9, 6))
        for s in scores:
            x, y = rng.uniform(0, 30, 2)
            dets.append(det((x, y, x + 20, y + 20), float(s),
                            {int(a): 0.9 for a in rng.choice(NUM_ATTRS, 2, replace=False)}))
        base, _ = merge_attributes(dset(dets))
        perm = [dets[i] for i in rng.permutation(len(dets))]
        shuffled, _ = merge_attributes(dset(perm))
        assert (base == shuffled).all()


class TestDetectionFile:
    def test_write_parse_round_trip(self, tmp_path):
        sets = [
            dset([det((0, 0, 10, 10), 0.9, {1: 0.8}), det((5, 5, 20, 20), 0.4)], "a"),
            dset([], "b"),
        ]
        path = tmp_path / "dets.jsonl"
        write_detection_file(path, sets)
        loaded = list(read_detection_file(path, NUM_ATTRS))
        assert [s.image_id for s in loaded] == ["a", "b"]
        assert loaded[0].detections == sets[0].detections
        assert len(loaded[1]) == 0

    def test_cap_enforced(self):
        line = json.dumps({
            "image_id": "a",
            "detections": [
                {"box": [0, 0, 1, 1], "category_id": 0, "category_score": 0.5,
                 "attribute_scores": []}
            ] * 4,
        })
        with pytest.raises(ValidationError, match="cap"):
            parse_detection_line(line, NUM_ATTRS, max_detections=3)

    def test_bad_json_line_number(self):
        with pytest.raises(ValidationError, match="dets:7"):
            parse_detection_line("{", NUM_ATTRS, path="dets", lineno=7)

    def test_category_id_outside_vocabulary(self):
        line = json.dumps({
            "image_id": "a",
            "detections": [
                {"box": [0, 0, 1, 1], "category_id": 9, "category_score": 0.5,
                 "attribute_scores": []}
            ],
        })
        with pytest.raises(ValidationError, match="category id outside"):
            parse_detection_line(line, NUM_ATTRS, num_categories=3)
        # without the category count the check is skipped
        parse_detection_line(line, NUM_ATTRS)

    def test_duplicate_attribute_id_rejected(self):
        line = json.dumps({
            "image_id": "a",
            "detections": [
                {"box": [0, 0, 1, 1], "category_id": 0, "category_score": 0.5,
                 "attribute_scores": [[1, 0.4], [1, 0.9]]}
            ],
        })
        with pytest.raises(ValidationError, match="duplicate attribute id"):
            parse_detection_line(line, NUM_ATTRS)

    def test_json_shape(self):
        ds = dset([det((0, 0, 10, 10), 0.9, {1: 0.8, 2: 0.3})], "img_1")
        payload = detection_set_to_json(ds)
        assert payload == {
            "image_id": "img_1",
            "detections": [{
                "box": [0.0, 0.0, 10.0, 10.0],
                "category_id": 0,
                "category_score": 0.9,
                "attribute_scores": [[1, 0.8], [2, 0.3]],
            }],
        }
