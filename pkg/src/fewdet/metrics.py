"""Precision-recall matching, per-class AP, dataset mAP, and the challenge
ranking Score.

Matching semantics (shared bit-for-bit with the test oracle):

* at most ``max_dets_per_image`` detections are kept per image, top-scoring
  across all classes, equal scores by input order;
* detections are ranked by descending score, equal scores by input order;
* each detection greedily takes the unmatched ground-truth box of its class
  and image with the highest IoU >= the threshold, equal IoUs broken by
  lowest annotation id;
* AP is interpolated precision (max precision at recall >= r) sampled at
  ``interpolation_points`` evenly spaced recall levels;
* mAP averages classes present in the ground truth, then thresholds, and is
  reported in percent. Classes absent from both ground truth and detections
  never enter the mean; a class with ground truth but no detections scores 0.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import _kernels
from .core import DatasetIndex, Detection, GroundTruthBox, ValidationError

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

NINE_MAP_KEYS = tuple(
    f"D{dataset}_{shot}shot" for dataset in (1, 2, 3) for shot in (1, 5, 10)
)

SHOT_WEIGHTS = {1: 2.0, 5: 1.0, 10: 1.0}


@dataclass(frozen=True)
class MatchConfig:
    """mAP evaluation parameters (COCO-style defaults)."""

    iou_thresholds: tuple[float, ...] = COCO_IOU_THRESHOLDS
    max_dets_per_image: int = 100
    interpolation_points: int = 101

    def __post_init__(self):
        object.__setattr__(self, "iou_thresholds", tuple(self.iou_thresholds))
        if not self.iou_thresholds:
            raise ValidationError("iou_thresholds must be non-empty")
        for t in self.iou_thresholds:
            if not (0.0 < t <= 1.0):
                raise ValidationError(f"iou threshold {t} outside (0, 1]")
        if any(b <= a for a, b in zip(self.iou_thresholds, self.iou_thresholds[1:])):
            raise ValidationError("iou_thresholds must be strictly ascending")
        if self.max_dets_per_image < 1:
            raise ValidationError("max_dets_per_image must be positive")
        if self.interpolation_points < 1:
            raise ValidationError("interpolation_points must be positive")

    @classmethod
    def ap50(cls) -> MatchConfig:
        return cls(iou_thresholds=(0.5,))


def _truncate_per_image(dets: list[Detection], max_dets: int) -> list[tuple[int, Detection]]:
    """Keep each image's top ``max_dets`` detections across classes.

    Returns (input_index, detection) pairs in input order.
    """
    by_image: dict[int, list[tuple[int, Detection]]] = {}
    for idx, det in enumerate(dets):
        by_image.setdefault(det.image_id, []).append((idx, det))
    keep: set[int] = set()
    for pairs in by_image.values():
        ranked = sorted(pairs, key=lambda p: (-p[1].score, p[0]))
        keep.update(idx for idx, _ in ranked[:max_dets])
    return [(idx, det) for idx, det in enumerate(dets) if idx in keep]


def _interpolated_ap(tp: np.ndarray, n_gt: int, points: int) -> float:
    if tp.size == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.arange(1, tp.size + 1, dtype=np.float64)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    levels = np.linspace(0.0, 1.0, points)
    idx = np.searchsorted(recall, levels, side="left")
    sampled = np.where(idx < tp.size, envelope[np.minimum(idx, tp.size - 1)], 0.0)
    return float(sampled.mean())


def average_precision(
    dets: list[Detection],
    gts: list[GroundTruthBox],
    class_id: int,
    iou_t: float,
    cfg: MatchConfig = MatchConfig(),
) -> float:
    """AP in [0, 1] for one class at one IoU threshold.

    Returns 0 when the class has no ground truth (whether or not detections
    exist) and 0 when no detection matches.
    """
    cls_gts = [g for g in gts if g.category_id == class_id]
    n_gt = len(cls_gts)
    if n_gt == 0:
        return 0.0

    pairs = _truncate_per_image(dets, cfg.max_dets_per_image)
    cls_pairs = [(idx, d) for idx, d in pairs if d.category_id == class_id]
    cls_pairs.sort(key=lambda p: (-p[1].score, p[0]))

    gts_by_image: dict[int, list[GroundTruthBox]] = {}
    for g in cls_gts:
        gts_by_image.setdefault(g.image_id, []).append(g)
    for lst in gts_by_image.values():
        lst.sort(key=lambda g: g.annotation_id)

    tp = np.zeros(len(cls_pairs), dtype=np.float64)
    ranks_by_image: dict[int, list[int]] = {}
    for rank, (_, det) in enumerate(cls_pairs):
        ranks_by_image.setdefault(det.image_id, []).append(rank)
    for image_id, ranks in ranks_by_image.items():
        image_gts = gts_by_image.get(image_id)
        if not image_gts:
            continue
        det_boxes = np.array(
            [cls_pairs[r][1].bbox.as_array() for r in ranks], dtype=np.float64
        )
        gt_boxes = np.array([g.bbox.as_array() for g in image_gts], dtype=np.float64)
        matched = _kernels.greedy_match(det_boxes, gt_boxes, iou_t)
        for rank, m in zip(ranks, matched):
            if m >= 0:
                tp[rank] = 1.0
    return _interpolated_ap(tp, n_gt, cfg.interpolation_points)


def _validate_against_dataset(dets: list[Detection], dataset: DatasetIndex) -> None:
    for idx, det in enumerate(dets):
        if det.image_id not in dataset.images:
            raise ValidationError(f"detection #{idx}: unknown image id {det.image_id}")
        if det.category_id not in dataset.categories:
            raise ValidationError(f"detection #{idx}: unknown category id {det.category_id}")


def _ap_grid(
    dets: list[Detection],
    dataset: DatasetIndex,
    cfg: MatchConfig,
    threads: int = 1,
) -> tuple[list[int], dict[tuple[float, int], float]]:
    _validate_against_dataset(dets, dataset)
    classes = sorted({g.category_id for g in dataset.annotations})
    if not classes:
        raise ValidationError("dataset has no ground-truth annotations to evaluate")
    gts = list(dataset.annotations)
    tasks = [(t, c) for t in cfg.iou_thresholds for c in classes]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(
                lambda tc: average_precision(dets, gts, tc[1], tc[0], cfg), tasks
            ))
    else:
        values = [average_precision(dets, gts, c, t, cfg) for t, c in tasks]
    return classes, dict(zip(tasks, values))


def map_score(
    dets: list[Detection],
    dataset: DatasetIndex,
    cfg: MatchConfig = MatchConfig(),
    threads: int = 1,
) -> float:
    """Dataset mAP in percent: classes present in GT, then IoU thresholds."""
    classes, grid = _ap_grid(dets, dataset, cfg, threads)
    per_threshold = [
        float(np.mean([grid[(t, c)] for c in classes])) for t in cfg.iou_thresholds
    ]
    return 100.0 * float(np.mean(per_threshold))


@dataclass(frozen=True)
class EvalReport:
    """One dataset's mAP plus the per-class breakdown, in percent."""

    mean_ap: float
    per_class: dict[int, float]
    iou_thresholds: tuple[float, ...]
    n_detections: int
    n_annotations: int

    def to_json_dict(self) -> dict:
        return {
            "mean_ap": self.mean_ap,
            "per_class": {str(c): v for c, v in sorted(self.per_class.items())},
            "iou_thresholds": list(self.iou_thresholds),
            "n_detections": self.n_detections,
            "n_annotations": self.n_annotations,
        }


def evaluate_detections(
    dets: list[Detection],
    dataset: DatasetIndex,
    cfg: MatchConfig = MatchConfig(),
    threads: int = 1,
) -> EvalReport:
    classes, grid = _ap_grid(dets, dataset, cfg, threads)
    per_class = {
        c: 100.0 * float(np.mean([grid[(t, c)] for t in cfg.iou_thresholds]))
        for c in classes
    }
    mean_ap = float(np.mean([per_class[c] for c in classes]))
    return EvalReport(mean_ap, per_class, cfg.iou_thresholds, len(dets), len(dataset.annotations))


def challenge_score(nine_maps: Mapping[str, float]) -> float:
    """Weighted ranking score over the nine per-dataset / per-shot mAPs.

    Score = 2 * avg(1-shot triple) + avg(5-shot triple) + avg(10-shot triple),
    every entry a percent in [0, 100]. Missing entries raise; extra keys are
    ignored so full report dicts can be passed directly.
    """
    for key in NINE_MAP_KEYS:
        if key not in nine_maps:
            raise ValidationError(f"missing mAP entry {key!r}")
        value = float(nine_maps[key])
        if not (0.0 <= value <= 100.0):
            raise ValidationError(f"{key}={value} outside [0, 100]")
    score = 0.0
    for shot, weight in SHOT_WEIGHTS.items():
        triple = [float(nine_maps[f"D{d}_{shot}shot"]) for d in (1, 2, 3)]
        score += weight * (sum(triple) / 3.0)
    return score


@dataclass(frozen=True)
class ScoreReport:
    """The nine per-dataset/per-shot mAPs, their Score, and per-class APs."""

    maps: dict[str, float]
    per_class: dict[str, float] = field(default_factory=dict)
    score: float = field(init=False)

    def __post_init__(self):
        score = challenge_score(self.maps)  # validates presence and range
        object.__setattr__(self, "maps", {k: float(self.maps[k]) for k in NINE_MAP_KEYS})
        object.__setattr__(self, "score", score)

    def to_json_dict(self) -> dict:
        out: dict = {"score": self.score}
        out.update(self.maps)
        if self.per_class:
            out["per_class"] = dict(sorted(self.per_class.items()))
        return out
