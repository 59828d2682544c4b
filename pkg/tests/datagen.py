"""Synthetic dataset builders shared by the test suite."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

TYPE_CYCLE = ("texture", "fabric", "shape", "part", "style")


def write_vocab_files(dirpath: Path, num_categories: int, num_attributes: int,
                      attr_types=None) -> tuple[Path, Path]:
    attr_path = dirpath / "attributes.jsonl"
    cat_path = dirpath / "categories.jsonl"
    with open(attr_path, "w", encoding="utf-8") as f:
        for i in range(num_attributes):
            attr_type = attr_types[i] if attr_types else TYPE_CYCLE[i % 5]
            f.write(json.dumps({"id": i, "name": f"attr_{i}", "type": attr_type}) + "\n")
    with open(cat_path, "w", encoding="utf-8") as f:
        for i in range(num_categories):
            f.write(json.dumps({"id": i, "name": f"cat_{i}"}) + "\n")
    return attr_path, cat_path


def random_box(rng: np.random.Generator, width: int, height: int,
               min_side: int = 8) -> list[float]:
    w = int(rng.integers(min_side, max(width // 2, min_side + 1)))
    h = int(rng.integers(min_side, max(height // 2, min_side + 1)))
    x = int(rng.integers(0, width - w + 1))
    y = int(rng.integers(0, height - h + 1))
    return [float(x), float(y), float(x + w), float(y + h)]


def write_groundtruth(
    path: Path,
    *,
    num_images: int,
    num_categories: int,
    num_attributes: int,
    seed: int = 0,
    objects_per_image: tuple[int, int] = (1, 1),
    attrs_per_object: tuple[int, int] = (1, 3),
    image_size: tuple[int, int] = (640, 480),
    domain_tags: tuple[str, ...] = ("shop",),
    person_box_prob: float = 0.0,
) -> None:
    """Write a deterministic synthetic groundtruth JSONL file."""
    rng = np.random.default_rng(seed)
    width, height = image_size
    with open(path, "w", encoding="utf-8") as f:
        for i in range(num_images):
            n_obj = int(rng.integers(objects_per_image[0], objects_per_image[1] + 1))
            objects = []
            for _ in range(n_obj):
                n_attr = int(rng.integers(attrs_per_object[0], attrs_per_object[1] + 1))
                n_attr = min(n_attr, num_attributes)
                attrs = sorted(int(a) for a in rng.choice(
                    num_attributes, size=n_attr, replace=False))
                objects.append({
                    "box": random_box(rng, width, height, min_side=40),
                    "category_id": int(rng.integers(0, num_categories)),
                    "attributes": attrs,
                })
            record = {
                "image_id": f"img_{i:06d}",
                "width": width,
                "height": height,
                "domain_tag": domain_tags[i % len(domain_tags)],
                "objects": objects,
            }
            if person_box_prob > 0 and rng.random() < person_box_prob:
                record["person_boxes"] = [random_box(rng, width, height, min_side=80)]
            else:
                record["person_boxes"] = []
            f.write(json.dumps(record) + "\n")


def make_dataset_files(
    dirpath: Path,
    *,
    num_images: int,
    num_categories: int = 5,
    num_attributes: int = 12,
    seed: int = 0,
    **kwargs,
) -> dict[str, Path]:
    dirpath.mkdir(parents=True, exist_ok=True)
    attr_path, cat_path = write_vocab_files(dirpath, num_categories, num_attributes)
    gt_path = dirpath / "groundtruth.jsonl"
    write_groundtruth(
        gt_path,
        num_images=num_images,
        num_categories=num_categories,
        num_attributes=num_attributes,
        seed=seed,
        **kwargs,
    )
    return {"groundtruth": gt_path, "attr_vocab": attr_path, "cat_vocab": cat_path}
