"""Shared builders for randomized datasets, detections, and embedding files."""

from __future__ import annotations

import json

import numpy as np
import pytest

from fewdet.core import BBox, DatasetIndex, Detection, GroundTruthBox, ImageInfo


def make_dataset(images, categories, annotations) -> DatasetIndex:
    """DatasetIndex from plain tuples: images {id: (w, h)}, categories
    {id: name}, annotations [(ann_id, image_id, category_id, (x1, y1, x2, y2))]."""
    return DatasetIndex(
        images={i: ImageInfo(w, h, f"img_{i}.jpg") for i, (w, h) in images.items()},
        categories=dict(categories),
        annotations=tuple(
            GroundTruthBox(a, img, c, BBox(*box)) for a, img, c, box in annotations
        ),
    )


def random_box(rng: np.random.Generator, bound: int = 96) -> BBox:
    # integer-grid coordinates: IoUs and file round-trips stay exact
    x = int(rng.integers(0, bound - 2))
    y = int(rng.integers(0, bound - 2))
    w = int(rng.integers(1, min(24, bound - x)))
    h = int(rng.integers(1, min(24, bound - y)))
    return BBox(x, y, x + w, y + h)


def random_score(rng: np.random.Generator) -> float:
    # half the scores come from a tiny discrete set to force tie handling
    if rng.random() < 0.5:
        return float(rng.choice([0.25, 0.5, 0.75, 0.9]))
    return round(float(rng.uniform(0.05, 1.0)), 3)


def random_eval_instance(rng: np.random.Generator, max_images=5, max_classes=4,
                         max_boxes=12):
    """A small dataset plus detections, built to exercise matching edge cases:
    perturbed copies of ground truth, duplicated boxes, tied scores."""
    n_images = int(rng.integers(1, max_images + 1))
    n_classes = int(rng.integers(1, max_classes + 1))
    images = {i: (96, 96) for i in range(1, n_images + 1)}
    categories = {c: f"class_{c}" for c in range(1, n_classes + 1)}

    n_gt = int(rng.integers(1, max_boxes + 1))
    annotations = []
    for ann_id in range(1, n_gt + 1):
        image_id = int(rng.integers(1, n_images + 1))
        class_id = int(rng.integers(1, n_classes + 1))
        box = random_box(rng)
        annotations.append((ann_id, image_id, class_id,
                            (box.x_min, box.y_min, box.x_max, box.y_max)))
    dataset = make_dataset(images, categories, annotations)

    dets = []
    n_det = int(rng.integers(0, max_boxes + 1))
    for _ in range(n_det):
        image_id = int(rng.integers(1, n_images + 1))
        class_id = int(rng.integers(1, n_classes + 1))
        roll = rng.random()
        if roll < 0.4 and dataset.annotations:
            gt = dataset.annotations[int(rng.integers(0, len(dataset.annotations)))]
            jitter = int(rng.integers(0, 6))
            box = BBox(gt.bbox.x_min, gt.bbox.y_min,
                       gt.bbox.x_max + jitter, gt.bbox.y_max + jitter)
            image_id, class_id = gt.image_id, gt.category_id
        elif roll < 0.55 and dets:
            box = dets[int(rng.integers(0, len(dets)))].bbox
        else:
            box = random_box(rng)
        dets.append(Detection(image_id, class_id, box, random_score(rng)))
    return dataset, dets


def random_detections(rng: np.random.Generator, n_max=20, n_classes=3,
                      image_id=1) -> list[Detection]:
    """Single-image detection list with engineered overlaps and score ties."""
    n = int(rng.integers(0, n_max + 1))
    dets = []
    for _ in range(n):
        if dets and rng.random() < 0.3:
            base = dets[int(rng.integers(0, len(dets)))]
            shift = int(rng.integers(0, 4))
            box = BBox(base.bbox.x_min + shift, base.bbox.y_min,
                       base.bbox.x_max + shift, base.bbox.y_max)
            class_id = base.category_id if rng.random() < 0.7 else \
                int(rng.integers(1, n_classes + 1))
        else:
            box = random_box(rng)
            class_id = int(rng.integers(1, n_classes + 1))
        dets.append(Detection(image_id, class_id, box, random_score(rng)))
    return dets


def write_dataset_file(path, ds: DatasetIndex) -> None:
    from fewdet.core import serialize_dataset

    path.write_text(json.dumps(serialize_dataset(ds)), encoding="utf-8")


def write_detections_file(path, dets: list[Detection]) -> None:
    from fewdet.core import serialize_detections

    path.write_text(json.dumps(serialize_detections(dets)), encoding="utf-8")


def write_embeddings_file(path, records: list[dict]) -> None:
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20250815)
