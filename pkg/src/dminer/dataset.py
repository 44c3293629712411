"""Annotation loading, the sparse keep-one transform, and reduction reporting.

The on-disk format is JSON::

    {
      "categories": [{"id": 0, "name": "..."}, ...],   # ids dense in [0, C)
      "images": [
        {"id": 7, "width": 640, "height": 480,
         "annotations": [{"cx": ..., "cy": ..., "w": ..., "h": ...,
                          "category_id": 0}, ...]},
        ...
      ]
    }

Boxes are center-form in pixels by default; ``box_format="xywh"`` accepts
top-left corner form and converts on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Annotation, BBox
from .errors import (
    CategoryOutOfRangeError,
    DatasetMismatchError,
    InvalidSizeError,
    MalformedAnnotationsError,
)

BOX_FORMATS = ("cxcywh", "xywh")


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    width: int
    height: int
    annotations: tuple[Annotation, ...]


@dataclass(frozen=True)
class Dataset:
    images: tuple[ImageRecord, ...]
    num_categories: int
    category_names: tuple[str, ...]

    def total_annotations(self) -> int:
        return sum(len(im.annotations) for im in self.images)

    def annotations_per_category(self) -> list[int]:
        counts = [0] * self.num_categories
        for im in self.images:
            for ann in im.annotations:
                counts[ann.category] += 1
        return counts


def _require(cond: bool, context: str):
    if not cond:
        raise MalformedAnnotationsError(context)


def load_dataset(path: str | Path, box_format: str = "cxcywh") -> Dataset:
    """Load and validate an annotation file.

    Args:
        path: JSON file following the schema above.
        box_format: "cxcywh" (default, center form) or "xywh" (top-left form,
            converted to center form on load).

    Raises:
        MalformedAnnotationsError: schema violations, with field context.
        CategoryOutOfRangeError: a category_id outside [0, C).
    """
    if box_format not in BOX_FORMATS:
        raise ValueError(f"box_format must be one of {BOX_FORMATS}, got {box_format!r}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedAnnotationsError(f"cannot read {path}: {exc}") from exc
    return parse_dataset(raw, box_format=box_format, source=str(path))


def parse_dataset(raw: dict, box_format: str = "cxcywh", source: str = "<dict>") -> Dataset:
    """Validate an already-parsed annotation structure (see load_dataset)."""
    _require(isinstance(raw, dict), f"{source}: top level must be an object")
    _require("categories" in raw, f"{source}: missing 'categories'")
    _require("images" in raw, f"{source}: missing 'images'")

    cats = raw["categories"]
    _require(isinstance(cats, list) and cats, f"{source}: 'categories' must be a non-empty list")
    ids, names = [], {}
    for i, c in enumerate(cats):
        ctx = f"{source}: categories[{i}]"
        _require(isinstance(c, dict), f"{ctx} must be an object")
        _require(isinstance(c.get("id"), int), f"{ctx}.id must be an integer")
        _require(isinstance(c.get("name"), str), f"{ctx}.name must be a string")
        ids.append(c["id"])
        names[c["id"]] = c["name"]
    num_categories = len(ids)
    if sorted(ids) != list(range(num_categories)):
        raise MalformedAnnotationsError(
            f"{source}: category ids must be dense in [0, {num_categories}), got {sorted(ids)}"
        )
    category_names = tuple(names[i] for i in range(num_categories))

    images_raw = raw["images"]
    _require(isinstance(images_raw, list), f"{source}: 'images' must be a list")
    images: list[ImageRecord] = []
    seen_ids: set[int] = set()
    for i, im in enumerate(images_raw):
        ctx = f"{source}: images[{i}]"
        _require(isinstance(im, dict), f"{ctx} must be an object")
        _require(isinstance(im.get("id"), int) and im["id"] >= 0, f"{ctx}.id must be an int >= 0")
        _require(im["id"] not in seen_ids, f"{ctx}.id {im['id']} is duplicated")
        seen_ids.add(im["id"])
        for side in ("width", "height"):
            _require(
                isinstance(im.get(side), int) and im[side] > 0,
                f"{ctx}.{side} must be a positive integer",
            )
        anns_raw = im.get("annotations", [])
        _require(isinstance(anns_raw, list), f"{ctx}.annotations must be a list")
        anns: list[Annotation] = []
        for j, a in enumerate(anns_raw):
            actx = f"{ctx}.annotations[{j}]"
            _require(isinstance(a, dict), f"{actx} must be an object")
            keys = ("cx", "cy", "w", "h") if box_format == "cxcywh" else ("x", "y", "w", "h")
            vals = {}
            for k in keys:
                v = a.get(k)
                _require(isinstance(v, (int, float)), f"{actx}.{k} must be a number")
                vals[k] = float(v)
            if box_format == "xywh":
                vals = {
                    "cx": vals["x"] + vals["w"] / 2.0,
                    "cy": vals["y"] + vals["h"] / 2.0,
                    "w": vals["w"],
                    "h": vals["h"],
                }
            cat = a.get("category_id")
            _require(isinstance(cat, int), f"{actx}.category_id must be an integer")
            if not 0 <= cat < num_categories:
                raise CategoryOutOfRangeError(
                    f"{actx}.category_id {cat} outside [0, {num_categories})"
                )
            try:
                bbox = BBox(**vals)
            except InvalidSizeError as exc:
                raise MalformedAnnotationsError(f"{actx}: {exc}") from exc
            _require(
                0.0 <= bbox.cx < im["width"] and 0.0 <= bbox.cy < im["height"],
                f"{actx}: center ({bbox.cx}, {bbox.cy}) outside "
                f"{im['width']}x{im['height']} image",
            )
            anns.append(Annotation(bbox=bbox, category=cat))
        images.append(
            ImageRecord(
                image_id=im["id"],
                width=im["width"],
                height=im["height"],
                annotations=tuple(anns),
            )
        )
    return Dataset(
        images=tuple(images),
        num_categories=num_categories,
        category_names=category_names,
    )


def dataset_to_dict(d: Dataset) -> dict:
    """Inverse of parse_dataset; always emits center-form boxes."""
    return {
        "categories": [
            {"id": i, "name": name} for i, name in enumerate(d.category_names)
        ],
        "images": [
            {
                "id": im.image_id,
                "width": im.width,
                "height": im.height,
                "annotations": [
                    {
                        "cx": a.bbox.cx,
                        "cy": a.bbox.cy,
                        "w": a.bbox.w,
                        "h": a.bbox.h,
                        "category_id": a.category,
                    }
                    for a in im.annotations
                ],
            }
            for im in d.images
        ],
    }


def save_dataset(d: Dataset, path: str | Path):
    with open(path, "w") as fh:
        json.dump(dataset_to_dict(d), fh, indent=2)
        fh.write("\n")


def keep1_transform(d: Dataset, seed: int) -> Dataset:
    """Keep exactly one uniformly chosen annotation per (image, category) pair.

    Selection is keyed on (seed, image_id, category) through a splittable
    seed sequence, so each pair's draw is independent of every other pair and
    of iteration order: adding or removing other images or categories never
    changes which annotation survives here. Survivors keep their original
    relative order and are reused unmodified.

    Args:
        d: source dataset.
        seed: non-negative base seed.

    Returns:
        A dataset with exactly one annotation per category present per image.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    images: list[ImageRecord] = []
    for im in d.images:
        by_cat: dict[int, list[int]] = {}
        for idx, ann in enumerate(im.annotations):
            by_cat.setdefault(ann.category, []).append(idx)
        keep: set[int] = set()
        for cat, idxs in by_cat.items():
            rng = np.random.default_rng([seed, im.image_id, cat])
            keep.add(idxs[int(rng.integers(len(idxs)))])
        images.append(
            ImageRecord(
                image_id=im.image_id,
                width=im.width,
                height=im.height,
                annotations=tuple(
                    ann for idx, ann in enumerate(im.annotations) if idx in keep
                ),
            )
        )
    return Dataset(
        images=tuple(images),
        num_categories=d.num_categories,
        category_names=d.category_names,
    )


@dataclass(frozen=True)
class ReductionReport:
    total_full: int
    total_kept: int
    reduction_ratio: float
    per_category_full: tuple[int, ...]
    per_category_kept: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "total_full": self.total_full,
            "total_kept": self.total_kept,
            "reduction_ratio": self.reduction_ratio,
            "per_category_full": list(self.per_category_full),
            "per_category_kept": list(self.per_category_kept),
        }


def reduction_report(full: Dataset, kept: Dataset) -> ReductionReport:
    """Instance-count comparison between a dataset and its sparse version.

    Raises:
        DatasetMismatchError: if the two datasets do not describe the same
            images and categories, or kept is not a per-image subset.
    """
    if full.num_categories != kept.num_categories:
        raise DatasetMismatchError(
            f"category counts differ: {full.num_categories} vs {kept.num_categories}"
        )
    if [im.image_id for im in full.images] != [im.image_id for im in kept.images]:
        raise DatasetMismatchError("image id sequences differ")
    for fim, kim in zip(full.images, kept.images):
        remaining = list(fim.annotations)
        for ann in kim.annotations:
            if ann in remaining:
                remaining.remove(ann)
            else:
                raise DatasetMismatchError(
                    f"image {kim.image_id} keeps an annotation absent from the full set"
                )
    total_full = full.total_annotations()
    total_kept = kept.total_annotations()
    ratio = 0.0 if total_full == 0 else 1.0 - total_kept / total_full
    return ReductionReport(
        total_full=total_full,
        total_kept=total_kept,
        reduction_ratio=ratio,
        per_category_full=tuple(full.annotations_per_category()),
        per_category_kept=tuple(kept.annotations_per_category()),
    )
