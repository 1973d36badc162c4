"""Box geometry, greedy per-class NMS, and the confidence-reweighted
multi-model ensemble.

All functions are pure; score ties are broken by input order throughout so
results are deterministic on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import BBox, Detection, ValidationError


@dataclass(frozen=True)
class EnsembleConfig:
    """Per-model reliability weights plus the pooled-NMS parameters."""

    reliability_weights: dict[str, float]
    iou_threshold: float = 0.5
    score_floor: float = 0.0

    def __post_init__(self):
        if not self.reliability_weights:
            raise ValidationError("ensemble needs at least one source weight")
        for source, weight in self.reliability_weights.items():
            if weight < 0:
                raise ValidationError(f"source {source!r}: negative weight {weight}")
        if not any(w > 0 for w in self.reliability_weights.values()):
            raise ValidationError("at least one reliability weight must be > 0")
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValidationError(f"iou_threshold {self.iou_threshold} outside (0, 1]")
        if not (0.0 <= self.score_floor <= 1.0):
            raise ValidationError(f"score_floor {self.score_floor} outside [0, 1]")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 whenever either box has zero area."""
    x1 = max(a.x_min, b.x_min)
    y1 = max(a.y_min, b.y_min)
    x2 = min(a.x_max, b.x_max)
    y2 = min(a.y_max, b.y_max)
    inter = max(0.0, x2 - x1) * max(0.0, y2 - y1)
    area_a = a.area
    area_b = b.area
    if area_a == 0.0 or area_b == 0.0:
        return 0.0
    union = (area_a + area_b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _boxes_array(dets: list[Detection]) -> np.ndarray:
    return np.array([[d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max] for d in dets],
                    dtype=np.float64).reshape(-1, 4)


def nms(dets: list[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Greedy per-class NMS over one image's detections.

    Suppression is strict ``>`` against the threshold (an overlap exactly at
    the threshold survives). Output is sorted by descending score, equal
    scores by input order; it is always a subset of the input and idempotent.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ValidationError(f"iou_threshold {iou_threshold} outside (0, 1]")
    if not dets:
        return []
    kept: list[tuple[int, Detection]] = []
    by_class: dict[int, list[int]] = {}
    for idx, det in enumerate(dets):
        by_class.setdefault(det.category_id, []).append(idx)
    for indices in by_class.values():
        group = [dets[i] for i in indices]
        keep = _kernels.nms_keep(_boxes_array(group),
                                 np.array([d.score for d in group], dtype=np.float64),
                                 iou_threshold)
        kept.extend((indices[int(k)], group[int(k)]) for k in keep)
    kept.sort(key=lambda pair: (-pair[1].score, pair[0]))
    return [det for _, det in kept]


def ensemble(det_sets: list[tuple[str, list[Detection]]], cfg: EnsembleConfig) -> list[Detection]:
    """Reweight each source's scores, pool, floor, then NMS per image/class.

    Every source id must have a weight in ``cfg``; weighted scores are
    clamped to [0, 1] (not renormalized), detections scoring strictly below
    ``score_floor`` are dropped, and one NMS pass runs on the pooled set.
    Reweighting before the single pooled NMS pass is an interpretation; the
    source material does not fix the order. Output is ordered by image id,
    then descending score, then pooled input order.
    """
    pooled: list[Detection] = []
    for source_id, dets in det_sets:
        if source_id not in cfg.reliability_weights:
            raise ValidationError(f"no reliability weight configured for source {source_id!r}")
        weight = cfg.reliability_weights[source_id]
        for det in dets:
            score = min(1.0, max(0.0, det.score * weight))
            if score < cfg.score_floor:
                continue
            pooled.append(Detection(det.image_id, det.category_id, det.bbox, score, source_id))

    by_image: dict[int, list[Detection]] = {}
    for det in pooled:
        by_image.setdefault(det.image_id, []).append(det)

    out: list[Detection] = []
    for image_id in sorted(by_image):
        out.extend(nms(by_image[image_id], cfg.iou_threshold))
    return out
