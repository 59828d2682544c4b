"""Groundtruth data model, JSONL ingestion and the dataset cleaning pipeline."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import yaml

from .errors import ValidationError
from .geometry import Box, area_fraction, aspect_ratio

logger = logging.getLogger(__name__)

# The five attribute score groups the detection contract exposes; every
# vocabulary entry must belong to one of them.
ATTRIBUTE_TYPES = ("texture", "fabric", "shape", "part", "style")

RULE_ASPECT_BELOW_MIN = "aspect_below_min"
RULE_ASPECT_ABOVE_MAX = "aspect_above_max"
RULE_AREA_BELOW_MIN = "area_below_min"
RULE_IMAGE_EMPTIED = "image_emptied"

_WHITESPACE = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    """Canonical form used for uniqueness checks and config lookups."""
    return _WHITESPACE.sub(" ", name.strip()).casefold()


@dataclass(frozen=True)
class AttributeEntry:
    attribute_id: int
    name: str
    attr_type: str


@dataclass(frozen=True)
class AttributeVocabulary:
    """Ordered attribute entries with dense ids and typed grouping."""

    entries: tuple[AttributeEntry, ...]
    types: tuple[str, ...] = ATTRIBUTE_TYPES

    def __post_init__(self) -> None:
        if len(self.types) != 5:
            raise ValidationError(
                f"attribute vocabulary must declare exactly 5 types, got {len(self.types)}"
            )
        type_set = set(self.types)
        seen_names: dict[str, int] = {}
        for i, e in enumerate(self.entries):
            if e.attribute_id != i:
                raise ValidationError(
                    f"attribute ids must be dense 0..N-1; entry {i} has id {e.attribute_id}"
                )
            if e.attr_type not in type_set:
                raise ValidationError(
                    f"attribute {e.name!r} has unknown type {e.attr_type!r}; "
                    f"expected one of {sorted(type_set)}"
                )
            key = normalize_name(e.name)
            if key in seen_names:
                raise ValidationError(
                    f"attribute name {e.name!r} collides with id {seen_names[key]} "
                    "after normalization"
                )
            seen_names[key] = e.attribute_id

    def __len__(self) -> int:
        return len(self.entries)

    def id_by_name(self, name: str) -> int | None:
        key = normalize_name(name)
        for e in self.entries:
            if normalize_name(e.name) == key:
                return e.attribute_id
        return None

    def type_of(self, attribute_id: int) -> str:
        return self.entries[attribute_id].attr_type


@dataclass(frozen=True)
class CategoryEntry:
    category_id: int
    name: str


@dataclass(frozen=True)
class CategoryVocabulary:
    entries: tuple[CategoryEntry, ...]

    def __post_init__(self) -> None:
        seen: dict[str, int] = {}
        for i, e in enumerate(self.entries):
            if e.category_id != i:
                raise ValidationError(
                    f"category ids must be dense 0..N-1; entry {i} has id {e.category_id}"
                )
            key = normalize_name(e.name)
            if key in seen:
                raise ValidationError(f"duplicate category name {e.name!r}")
            seen[key] = e.category_id

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class GroundTruthObject:
    """One labeled garment instance.

    ``attributes`` holds the positive attribute ids; it stands for the
    binary vector of length ``len(vocabulary)`` with ones at those ids.
    """

    box: Box
    category_id: int
    attributes: frozenset[int]

    def attribute_vector(self, num_attributes: int):
        import numpy as np

        v = np.zeros(num_attributes, dtype=bool)
        if self.attributes:
            v[list(self.attributes)] = True
        return v


@dataclass(frozen=True)
class ImageRecord:
    """One annotated image.

    ``person_boxes`` is None when the field was absent from the input
    record, as opposed to present-but-empty; the proposal labeling
    command distinguishes the two in strict mode.
    """

    image_id: str
    width: float
    height: float
    domain_tag: str
    objects: tuple[GroundTruthObject, ...]
    person_boxes: tuple[Box, ...] | None = ()

    def person_boxes_or_empty(self) -> tuple[Box, ...]:
        return self.person_boxes if self.person_boxes is not None else ()


@dataclass(frozen=True)
class Dataset:
    attributes: AttributeVocabulary
    categories: CategoryVocabulary
    images: tuple[ImageRecord, ...]

    def __len__(self) -> int:
        return len(self.images)


def image_attribute_ids(record: ImageRecord) -> frozenset[int]:
    """Union of positive attribute ids over the image's objects."""
    out: set[int] = set()
    for obj in record.objects:
        out.update(obj.attributes)
    return frozenset(out)


# ---------------------------------------------------------------------------
# Cleaning configuration


@dataclass(frozen=True)
class CleaningConfig:
    """Thresholds and vocabulary edits for the cleaning pass.

    All removal comparisons are strict, so boxes sitting exactly on a
    threshold survive. ``merge_map`` maps alias names to canonical
    names; canonicals must not themselves be aliases.
    """

    min_aspect: float = 0.2
    max_aspect: float = 5.0
    min_area_fraction: float = 0.0021
    removed_attributes: tuple[str, ...] = ()
    merge_map: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0 < self.min_aspect < self.max_aspect):
            raise ValidationError(
                f"need 0 < min_aspect < max_aspect, got {self.min_aspect}, {self.max_aspect}"
            )
        if not (0 < self.min_area_fraction < 1):
            raise ValidationError(
                f"min_area_fraction must be in (0, 1), got {self.min_area_fraction}"
            )
        canonicals = {normalize_name(v) for v in self.merge_map.values()}
        for alias, canonical in self.merge_map.items():
            if normalize_name(alias) == normalize_name(canonical):
                raise ValidationError(f"attribute {alias!r} merges into itself")
            if normalize_name(alias) in canonicals:
                raise ValidationError(
                    f"merge target {alias!r} is itself an alias; merges must be one step"
                )
        removed = {normalize_name(n) for n in self.removed_attributes}
        for alias in self.merge_map:
            if normalize_name(alias) in removed:
                raise ValidationError(
                    f"attribute {alias!r} is both removed and merged; pick one"
                )


def load_cleaning_config(path: str | Path) -> CleaningConfig:
    """Read a cleaning config from its YAML file (see FORMATS.md)."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ValidationError(f"invalid YAML: {exc}", path=str(path))
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValidationError("cleaning config must be a mapping", path=str(path))
    known = {
        "min_aspect", "max_aspect", "min_area_fraction",
        "removed_attributes", "merge_map",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(
            f"unknown cleaning config keys: {sorted(unknown)}", path=str(path)
        )
    removed = raw.get("removed_attributes") or []
    merge = raw.get("merge_map") or {}
    if not isinstance(removed, list) or not all(isinstance(x, str) for x in removed):
        raise ValidationError("removed_attributes must be a list of names", path=str(path))
    if not isinstance(merge, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in merge.items()
    ):
        raise ValidationError("merge_map must map alias names to canonical names", path=str(path))
    try:
        return CleaningConfig(
            min_aspect=float(raw.get("min_aspect", 0.2)),
            max_aspect=float(raw.get("max_aspect", 5.0)),
            min_area_fraction=float(raw.get("min_area_fraction", 0.0021)),
            removed_attributes=tuple(removed),
            merge_map=dict(merge),
        )
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad cleaning config value: {exc}", path=str(path))


# ---------------------------------------------------------------------------
# JSONL ingestion


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, parsed_object) for non-blank lines."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"invalid JSON: {exc.msg}", path=str(path), line=lineno)
            if not isinstance(obj, dict):
                raise ValidationError("expected a JSON object", path=str(path), line=lineno)
            yield lineno, obj


def load_attribute_vocabulary(path: str | Path) -> AttributeVocabulary:
    entries = []
    for lineno, obj in iter_jsonl(path):
        try:
            entries.append(
                AttributeEntry(int(obj["id"]), str(obj["name"]), str(obj["type"]))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad attribute entry: {exc}", path=str(path), line=lineno)
    try:
        return AttributeVocabulary(tuple(entries))
    except ValidationError as exc:
        raise ValidationError(f"{exc}", path=str(path))


def load_category_vocabulary(path: str | Path) -> CategoryVocabulary:
    entries = []
    for lineno, obj in iter_jsonl(path):
        try:
            entries.append(CategoryEntry(int(obj["id"]), str(obj["name"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad category entry: {exc}", path=str(path), line=lineno)
    try:
        return CategoryVocabulary(tuple(entries))
    except ValidationError as exc:
        raise ValidationError(f"{exc}", path=str(path))


def _parse_box(raw, *, path: str, lineno: int, what: str) -> Box:
    if (not isinstance(raw, (list, tuple))) or len(raw) != 4:
        raise ValidationError(
            f"{what} must be [x_min, y_min, x_max, y_max], got {raw!r}",
            path=path, line=lineno,
        )
    try:
        return Box(float(raw[0]), float(raw[1]), float(raw[2]), float(raw[3]))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad {what}: {exc}", path=path, line=lineno)


def _bound_box(box: Box, width: float, height: float, *, strict: bool,
               path: str, lineno: int, what: str) -> Box:
    inside = (box.x_min >= 0 and box.y_min >= 0
              and box.x_max <= width and box.y_max <= height)
    if inside:
        return box
    if strict:
        raise ValidationError(
            f"{what} {box.as_tuple()} outside {width}x{height} image",
            path=path, line=lineno,
        )
    clipped_coords = (
        max(box.x_min, 0.0), max(box.y_min, 0.0),
        min(box.x_max, width), min(box.y_max, height),
    )
    if not (clipped_coords[2] > clipped_coords[0] and clipped_coords[3] > clipped_coords[1]):
        raise ValidationError(
            f"{what} {box.as_tuple()} lies entirely outside {width}x{height} image",
            path=path, line=lineno,
        )
    logger.warning("%s:%d: clipped %s %s to image bounds", path, lineno, what, box.as_tuple())
    return Box(*clipped_coords)


def load_dataset(
    groundtruth_path: str | Path,
    attr_vocab_path: str | Path,
    cat_vocab_path: str | Path,
    *,
    strict: bool = True,
) -> Dataset:
    """Load and fully validate a groundtruth dataset.

    In strict mode out-of-bounds boxes are fatal; in lenient mode they
    are clipped with a warning. Everything else (malformed JSON, id
    collisions, unknown ids) is fatal in both modes.
    """
    attributes = load_attribute_vocabulary(attr_vocab_path)
    categories = load_category_vocabulary(cat_vocab_path)
    num_attrs = len(attributes)
    num_cats = len(categories)
    gt_path = str(groundtruth_path)

    images: list[ImageRecord] = []
    seen_ids: set[str] = set()
    for lineno, obj in iter_jsonl(groundtruth_path):
        try:
            image_id = str(obj["image_id"])
            width = float(obj["width"])
            height = float(obj["height"])
            domain_tag = str(obj.get("domain_tag", ""))
            raw_objects = obj.get("objects", [])
            raw_persons = obj.get("person_boxes", None)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad image record: {exc}", path=gt_path, line=lineno)
        if width <= 0 or height <= 0:
            raise ValidationError(
                f"image dimensions must be positive, got {width}x{height}",
                path=gt_path, line=lineno,
            )
        if image_id in seen_ids:
            raise ValidationError(f"duplicate image_id {image_id!r}", path=gt_path, line=lineno)
        seen_ids.add(image_id)

        objects = []
        for obj_idx, raw in enumerate(raw_objects):
            box = _parse_box(raw.get("box"), path=gt_path, lineno=lineno,
                             what=f"objects[{obj_idx}].box")
            box = _bound_box(box, width, height, strict=strict, path=gt_path,
                             lineno=lineno, what=f"objects[{obj_idx}].box")
            try:
                category_id = int(raw["category_id"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(
                    f"objects[{obj_idx}]: bad category_id: {exc}", path=gt_path, line=lineno
                )
            if not (0 <= category_id < num_cats):
                raise ValidationError(
                    f"objects[{obj_idx}]: category_id {category_id} not in vocabulary "
                    f"of size {num_cats}",
                    path=gt_path, line=lineno,
                )
            raw_attrs = raw.get("attributes", [])
            attrs: set[int] = set()
            for a in raw_attrs:
                try:
                    aid = int(a)
                except (TypeError, ValueError):
                    raise ValidationError(
                        f"objects[{obj_idx}]: bad attribute id {a!r}", path=gt_path, line=lineno
                    )
                if not (0 <= aid < num_attrs):
                    raise ValidationError(
                        f"objects[{obj_idx}]: attribute id {aid} not in vocabulary "
                        f"of size {num_attrs}",
                        path=gt_path, line=lineno,
                    )
                if aid in attrs:
                    raise ValidationError(
                        f"objects[{obj_idx}]: duplicate attribute id {aid}",
                        path=gt_path, line=lineno,
                    )
                attrs.add(aid)
            objects.append(GroundTruthObject(box, category_id, frozenset(attrs)))

        if raw_persons is None:
            person_boxes: tuple[Box, ...] | None = None
        else:
            boxes = []
            for p_idx, raw in enumerate(raw_persons):
                box = _parse_box(raw, path=gt_path, lineno=lineno,
                                 what=f"person_boxes[{p_idx}]")
                boxes.append(_bound_box(box, width, height, strict=strict, path=gt_path,
                                        lineno=lineno, what=f"person_boxes[{p_idx}]"))
            person_boxes = tuple(boxes)

        images.append(ImageRecord(
            image_id=image_id, width=width, height=height, domain_tag=domain_tag,
            objects=tuple(objects), person_boxes=person_boxes,
        ))

    return Dataset(attributes=attributes, categories=categories, images=tuple(images))


# ---------------------------------------------------------------------------
# Canonical JSONL emitters (stable bytes for identical inputs)


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=False) + "\n"


def image_record_to_json(record: ImageRecord) -> dict:
    out: dict = {
        "image_id": record.image_id,
        "width": record.width,
        "height": record.height,
        "domain_tag": record.domain_tag,
        "objects": [
            {
                "box": list(o.box.as_tuple()),
                "category_id": o.category_id,
                "attributes": sorted(o.attributes),
            }
            for o in record.objects
        ],
    }
    if record.person_boxes is not None:
        out["person_boxes"] = [list(b.as_tuple()) for b in record.person_boxes]
    return out


def write_dataset(dataset: Dataset, groundtruth_path: str | Path) -> None:
    with open(groundtruth_path, "w", encoding="utf-8") as f:
        for record in dataset.images:
            f.write(_dump_line(image_record_to_json(record)))


def write_attribute_vocabulary(vocab: AttributeVocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in vocab.entries:
            f.write(_dump_line({"id": e.attribute_id, "name": e.name, "type": e.attr_type}))


def write_category_vocabulary(vocab: CategoryVocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in vocab.entries:
            f.write(_dump_line({"id": e.category_id, "name": e.name}))


# ---------------------------------------------------------------------------
# Box cleaning


@dataclass(frozen=True)
class Removal:
    image_id: str
    object_index: int
    rule: str


@dataclass
class RemovalLog:
    """Per-object removals plus the images the pass left empty."""

    removals: list[Removal] = field(default_factory=list)
    emptied_images: list[str] = field(default_factory=list)

    def counts_by_rule(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.removals:
            counts[r.rule] = counts.get(r.rule, 0) + 1
        return counts

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for r in self.removals:
                f.write(_dump_line({
                    "image_id": r.image_id, "object_index": r.object_index, "rule": r.rule,
                }))
            for image_id in self.emptied_images:
                f.write(_dump_line({
                    "image_id": image_id, "object_index": None, "rule": RULE_IMAGE_EMPTIED,
                }))


def _removal_rule(obj: GroundTruthObject, record: ImageRecord,
                  config: CleaningConfig) -> str | None:
    aspect = aspect_ratio(obj.box)
    if aspect < config.min_aspect:
        return RULE_ASPECT_BELOW_MIN
    if aspect > config.max_aspect:
        return RULE_ASPECT_ABOVE_MAX
    if area_fraction(obj.box, record.width, record.height) < config.min_area_fraction:
        return RULE_AREA_BELOW_MIN
    return None


def clean_boxes(dataset: Dataset, config: CleaningConfig) -> tuple[Dataset, RemovalLog]:
    """Drop objects with odd aspect ratios or a tiny image-area share.

    Comparisons are strict, so a box exactly on a threshold is kept.
    Images emptied by the pass stay in the dataset and are flagged in
    the log; their person boxes remain useful to the pruning tools.
    """
    log = RemovalLog()
    new_images = []
    for record in dataset.images:
        kept = []
        for idx, obj in enumerate(record.objects):
            rule = _removal_rule(obj, record, config)
            if rule is None:
                kept.append(obj)
            else:
                log.removals.append(Removal(record.image_id, idx, rule))
        if not kept and record.objects:
            log.emptied_images.append(record.image_id)
        new_images.append(replace(record, objects=tuple(kept)))
    return replace(dataset, images=tuple(new_images)), log


# ---------------------------------------------------------------------------
# Attribute vocabulary cleaning


@dataclass(frozen=True)
class AttributeRemap:
    """Result of a vocabulary cleaning pass.

    ``mapping[old_id]`` is the new id, or None for removed attributes.
    """

    vocabulary: AttributeVocabulary
    mapping: tuple[int | None, ...]


def clean_attributes(vocab: AttributeVocabulary, config: CleaningConfig) -> AttributeRemap:
    """Remove unclear attributes and collapse merge groups to one id each.

    Aliases inherit their canonical's new id; merged attributes must
    share an attribute type because detection scores are grouped by
    type.
    """
    by_name = {normalize_name(e.name): e for e in vocab.entries}

    def resolve(name: str, role: str) -> AttributeEntry:
        entry = by_name.get(normalize_name(name))
        if entry is None:
            raise ValidationError(f"{role} {name!r} not in the attribute vocabulary")
        return entry

    removed_ids = {resolve(n, "removed attribute").attribute_id
                   for n in config.removed_attributes}
    alias_to_canonical: dict[int, int] = {}
    for alias, canonical in config.merge_map.items():
        a = resolve(alias, "merge alias")
        c = resolve(canonical, "merge target")
        if a.attr_type != c.attr_type:
            raise ValidationError(
                f"cannot merge {alias!r} ({a.attr_type}) into {canonical!r} "
                f"({c.attr_type}): attribute types differ"
            )
        if c.attribute_id in removed_ids:
            raise ValidationError(
                f"merge target {canonical!r} of alias {alias!r} is removed"
            )
        alias_to_canonical[a.attribute_id] = c.attribute_id

    new_entries: list[AttributeEntry] = []
    canonical_new_id: dict[int, int] = {}
    for e in vocab.entries:
        if e.attribute_id in removed_ids or e.attribute_id in alias_to_canonical:
            continue
        canonical_new_id[e.attribute_id] = len(new_entries)
        new_entries.append(AttributeEntry(len(new_entries), e.name, e.attr_type))

    mapping: list[int | None] = []
    for e in vocab.entries:
        if e.attribute_id in removed_ids:
            mapping.append(None)
        elif e.attribute_id in alias_to_canonical:
            mapping.append(canonical_new_id[alias_to_canonical[e.attribute_id]])
        else:
            mapping.append(canonical_new_id[e.attribute_id])

    return AttributeRemap(
        vocabulary=AttributeVocabulary(tuple(new_entries), types=vocab.types),
        mapping=tuple(mapping),
    )


def remap_groundtruth(dataset: Dataset, remap: AttributeRemap) -> Dataset:
    """Rewrite every object's attributes under the remap (OR semantics).

    An object has a merged attribute if it had any of its constituents;
    removed attributes are dropped.
    """
    if len(remap.mapping) != len(dataset.attributes):
        raise ValidationError(
            f"remap covers {len(remap.mapping)} attributes but the dataset "
            f"vocabulary has {len(dataset.attributes)}"
        )
    mapping = remap.mapping
    new_images = []
    for record in dataset.images:
        new_objects = []
        for obj in record.objects:
            new_attrs = frozenset(
                mapping[a] for a in obj.attributes if mapping[a] is not None
            )
            new_objects.append(replace(obj, attributes=new_attrs))
        new_images.append(replace(record, objects=tuple(new_objects)))
    return Dataset(
        attributes=remap.vocabulary,
        categories=dataset.categories,
        images=tuple(new_images),
    )
