"""Pure-numpy box kernels; fallback backend when the compiled extension is absent.

Semantics are shared with the compiled backend and must stay bit-identical:

* IoU is ``inter / (area_a + area_b - inter)`` and 0 whenever either box has
  zero area (union 0 included).
* ``nms_keep`` suppresses with strict ``>`` against the threshold and ranks
  by descending score, equal scores broken by lower input index.
* ``greedy_match`` walks detections in the given (already ranked) order and
  assigns each the unmatched ground-truth row of highest IoU ``>= threshold``,
  equal IoUs broken by lower row index.
"""

from __future__ import annotations

import numpy as np


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two (n, 4) / (m, 4) corner-format box arrays."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.maximum(0.0, x2 - x1) * np.maximum(0.0, y2 - y1)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    np.divide(inter, union, out=out, where=union > 0.0)
    # zero-area boxes contribute nothing even when the union is positive
    out[area_a == 0.0, :] = 0.0
    out[:, area_b == 0.0] = 0.0
    return out


def nms_keep(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy NMS over one class; returns kept input indices in rank order."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = boxes.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(-scores, kind="stable")
    ious = iou_matrix(boxes, boxes)
    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        for j in order:
            if not suppressed[j] and j != i and ious[i, j] > iou_threshold:
                suppressed[j] = True
    return np.asarray(keep, dtype=np.int64)


def greedy_match(det_boxes: np.ndarray, gt_boxes: np.ndarray, iou_threshold: float) -> np.ndarray:
    """One-to-one matching of ranked detections to ground-truth rows.

    Returns, per detection, the matched gt row index or -1. Callers are
    responsible for rank order of ``det_boxes`` and tie-break order of
    ``gt_boxes`` (lowest row index wins equal IoUs).
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    n, m = det_boxes.shape[0], gt_boxes.shape[0]
    matched = np.full(n, -1, dtype=np.int64)
    if n == 0 or m == 0:
        return matched
    ious = iou_matrix(det_boxes, gt_boxes)
    gt_taken = np.zeros(m, dtype=bool)
    for i in range(n):
        best_j = -1
        best_iou = 0.0
        for j in range(m):
            if gt_taken[j]:
                continue
            v = ious[i, j]
            if v >= iou_threshold and v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0:
            matched[i] = best_j
            gt_taken[best_j] = True
    return matched
