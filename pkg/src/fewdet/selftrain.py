"""Pseudo-label refinement loop over a pluggable scorer.

Pure label-set logic: score, keep detections strictly above the confidence
cutoff, merge the survivors into the label set with IoU dedup against the
existing labels, repeat. No model parameters are updated anywhere; a scorer
may rebuild its prototypes from the merged labels, which is this harness's
analogue of adaptation, not a reproduction of it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .core import BBox, Detection, GroundTruthBox, ValidationError
from .detops import iou
from .protofusion import _softmax, proto_scores

PENDING_ANNOTATION_ID = -1  # placeholder until merge assigns a fresh id


@dataclass(frozen=True)
class PseudoLabelConfig:
    """Confidence cutoff, iteration count, and the dedup IoU threshold."""

    lambda_conf: float = 0.6
    iterations: int = 5
    dedup_iou: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.lambda_conf <= 1.0):
            raise ValidationError(f"lambda_conf {self.lambda_conf} outside [0, 1]")
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")
        if not (0.0 <= self.dedup_iou <= 1.0):
            raise ValidationError(f"dedup_iou {self.dedup_iou} outside [0, 1]")


@runtime_checkable
class Scorer(Protocol):
    """Deterministic (image_id, current labels) -> detections interface.

    Implementations may additionally define ``begin_iteration(t)``; the loop
    calls it at the start of iteration t (1-based) so replay-style scorers
    can switch prediction sets.
    """

    def score(self, image_id: int, labels: list[GroundTruthBox]) -> list[Detection]:
        ...


class ReplayScorer:
    """Replays pre-recorded detections, one list per iteration.

    A single list is reused for every iteration; otherwise there must be at
    least as many lists as loop iterations.
    """

    def __init__(self, per_iteration: list[list[Detection]]):
        if not per_iteration:
            raise ValidationError("replay scorer needs at least one detection list")
        self._per_iteration = [list(dets) for dets in per_iteration]
        self._current = self._per_iteration[0]

    def begin_iteration(self, t: int) -> None:
        if len(self._per_iteration) == 1:
            self._current = self._per_iteration[0]
            return
        if t > len(self._per_iteration):
            raise ValidationError(
                f"replay scorer has {len(self._per_iteration)} prediction sets, "
                f"iteration {t} requested"
            )
        self._current = self._per_iteration[t - 1]

    def score(self, image_id: int, labels: list[GroundTruthBox]) -> list[Detection]:
        return [d for d in self._current if d.image_id == image_id]


class PrototypeScorer:
    """Scores fixed per-image candidate boxes against class prototypes.

    Candidates are (box, embedding) pairs per image. Prototypes start from
    the given support vectors; with ``rebuild_from_labels`` the means are
    recomputed each call from the supports plus the embeddings of candidates
    that current labels point at (matched by image id and exact box), the
    harness-level analogue of adapting to merged pseudo-labels.
    """

    def __init__(
        self,
        candidates: dict[int, list[tuple[BBox, np.ndarray]]],
        support_vectors: dict[int, list[np.ndarray]],
        rebuild_from_labels: bool = False,
        sigma: float = 0.5,
    ):
        if not support_vectors:
            raise ValidationError("prototype scorer needs support vectors")
        self._candidates = candidates
        self._support = {c: [np.asarray(v, dtype=np.float64) for v in vecs]
                         for c, vecs in sorted(support_vectors.items())}
        self._rebuild = rebuild_from_labels
        self._sigma = sigma
        self._vector_by_box = {
            (image_id, box.x_min, box.y_min, box.x_max, box.y_max): vec
            for image_id, pairs in candidates.items()
            for box, vec in pairs
        }

    def _prototypes(self, labels: list[GroundTruthBox]) -> tuple[list[int], np.ndarray]:
        pools = {c: list(vecs) for c, vecs in self._support.items()}
        if self._rebuild:
            for label in labels:
                key = (label.image_id, label.bbox.x_min, label.bbox.y_min,
                       label.bbox.x_max, label.bbox.y_max)
                vec = self._vector_by_box.get(key)
                if vec is not None and label.category_id in pools:
                    pools[label.category_id].append(vec)
        classes = sorted(pools)
        protos = np.stack([np.mean(np.stack(pools[c]), axis=0) for c in classes])
        return classes, protos

    def score(self, image_id: int, labels: list[GroundTruthBox]) -> list[Detection]:
        out: list[Detection] = []
        classes, protos = self._prototypes(labels)
        for box, vec in self._candidates.get(image_id, []):
            probs = _softmax(proto_scores(vec, protos, self._sigma))
            best = int(np.argmax(probs))
            out.append(Detection(image_id, classes[best], box, float(probs[best])))
        return out


def select_pseudo_labels(dets: list[Detection], cfg: PseudoLabelConfig) -> list[GroundTruthBox]:
    """Keep detections with score strictly above the cutoff, as label records.

    Survivors carry the placeholder annotation id -1 until merged.
    """
    return [
        GroundTruthBox(PENDING_ANNOTATION_ID, d.image_id, d.category_id, d.bbox)
        for d in dets
        if d.score > cfg.lambda_conf
    ]


def merge_labels(
    existing: list[GroundTruthBox],
    pseudo: list[GroundTruthBox],
    dedup_iou: float,
    first_new_id: int | None = None,
) -> list[GroundTruthBox]:
    """Append pseudo labels that do not duplicate an existing one.

    All labels must belong to one image. A pseudo label overlapping any
    *existing* same-class label with IoU strictly above ``dedup_iou`` is
    discarded; survivors are appended with fresh annotation ids starting at
    ``first_new_id`` (default: max existing id, floored at 0, plus one).
    """
    image_ids = {g.image_id for g in existing} | {g.image_id for g in pseudo}
    if len(image_ids) > 1:
        raise ValidationError(f"merge_labels got labels from images {sorted(image_ids)}")
    next_id = first_new_id
    if next_id is None:
        next_id = max([g.annotation_id for g in existing], default=0) + 1
        next_id = max(next_id, 1)
    out = list(existing)
    for p in pseudo:
        duplicate = any(
            e.category_id == p.category_id and iou(p.bbox, e.bbox) > dedup_iou
            for e in existing
        )
        if duplicate:
            continue
        out.append(GroundTruthBox(next_id, p.image_id, p.category_id, p.bbox))
        next_id += 1
    return out


@dataclass(frozen=True)
class IterationTrace:
    iteration: int
    added_annotation_ids: tuple[int, ...]
    label_count: int

    def to_json_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "added_annotation_ids": list(self.added_annotation_ids),
            "label_count": self.label_count,
        }


def self_train_loop(
    image_ids: list[int],
    scorer: Scorer,
    initial_labels: list[GroundTruthBox],
    cfg: PseudoLabelConfig = PseudoLabelConfig(),
    first_new_id: int | None = None,
) -> tuple[list[GroundTruthBox], list[IterationTrace]]:
    """Run T rounds of score / select / merge; a pure fold over iterations.

    Images are visited in ascending id each round; fresh annotation ids are
    globally unique across images, counting up from ``first_new_id`` when
    given (callers running several loops supply it to keep ids disjoint).
    The trace records the added ids and the total label count per
    iteration. Scorer exceptions are re-raised with the iteration index
    attached.
    """
    labels = list(initial_labels)
    trace: list[IterationTrace] = []
    next_id = first_new_id
    if next_id is None:
        next_id = max([g.annotation_id for g in labels], default=0) + 1
        next_id = max(next_id, 1)
    ordered_images = sorted(set(image_ids))
    for t in range(1, cfg.iterations + 1):
        begin = getattr(scorer, "begin_iteration", None)
        if begin is not None:
            begin(t)
        added: list[int] = []
        for image_id in ordered_images:
            try:
                dets = scorer.score(image_id, labels)
            except Exception as exc:
                raise RuntimeError(
                    f"scorer failed at iteration {t} on image {image_id}: {exc}"
                ) from exc
            pseudo = select_pseudo_labels(dets, cfg)
            existing = [g for g in labels if g.image_id == image_id]
            merged = merge_labels(existing, pseudo, cfg.dedup_iou, first_new_id=next_id)
            new = merged[len(existing):]
            labels.extend(new)
            added.extend(g.annotation_id for g in new)
            next_id += len(new)
        trace.append(IterationTrace(t, tuple(added), len(labels)))
    return labels, trace
