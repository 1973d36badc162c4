# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled box kernels; bit-identical semantics to ``_pure`` (see its docstring).

Built with -ffp-contract=off so every double operation rounds exactly like
the numpy/python fallback.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _pair_iou(const double[:, ::1] a, Py_ssize_t i,
                             const double[:, ::1] b, Py_ssize_t j) nogil:
    cdef double x1, y1, x2, y2, w, h, inter, area_a, area_b, union_
    x1 = a[i, 0] if a[i, 0] > b[j, 0] else b[j, 0]
    y1 = a[i, 1] if a[i, 1] > b[j, 1] else b[j, 1]
    x2 = a[i, 2] if a[i, 2] < b[j, 2] else b[j, 2]
    y2 = a[i, 3] if a[i, 3] < b[j, 3] else b[j, 3]
    w = x2 - x1
    if w < 0.0:
        w = 0.0
    h = y2 - y1
    if h < 0.0:
        h = 0.0
    inter = w * h
    area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
    area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
    if area_a == 0.0 or area_b == 0.0:
        return 0.0
    union_ = (area_a + area_b) - inter
    if union_ <= 0.0:
        return 0.0
    return inter / union_


def iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU between two (n, 4) / (m, 4) corner-format box arrays."""
    cdef const double[:, ::1] a = np.ascontiguousarray(
        np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4))
    cdef const double[:, ::1] b = np.ascontiguousarray(
        np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = _pair_iou(a, i, b, j)
    return out


def nms_keep(boxes, scores, double iou_threshold):
    """Greedy NMS over one class; returns kept input indices in rank order."""
    cdef const double[:, ::1] bx = np.ascontiguousarray(
        np.asarray(boxes, dtype=np.float64).reshape(-1, 4))
    sc = np.asarray(scores, dtype=np.float64).reshape(-1)
    cdef Py_ssize_t n = bx.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    order_arr = np.argsort(-sc, kind="stable").astype(np.int64)
    cdef const cnp.int64_t[::1] order = order_arr
    suppressed_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] suppressed = suppressed_arr
    keep_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] keep = keep_arr
    cdef Py_ssize_t n_keep = 0, oi, oj, i, j
    with nogil:
        for oi in range(n):
            i = order[oi]
            if suppressed[i]:
                continue
            keep[n_keep] = i
            n_keep += 1
            for oj in range(n):
                j = order[oj]
                if suppressed[j] or j == i:
                    continue
                if _pair_iou(bx, i, bx, j) > iou_threshold:
                    suppressed[j] = 1
    return keep_arr[:n_keep].copy()


def greedy_match(det_boxes, gt_boxes, double iou_threshold):
    """One-to-one matching of ranked detections to ground-truth rows.

    Returns, per detection, the matched gt row index or -1; ties on IoU go to
    the lower gt row index.
    """
    cdef const double[:, ::1] db = np.ascontiguousarray(
        np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4))
    cdef const double[:, ::1] gb = np.ascontiguousarray(
        np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t n = db.shape[0], m = gb.shape[0], i, j, best_j
    matched_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] matched = matched_arr
    if n == 0 or m == 0:
        return matched_arr
    taken_arr = np.zeros(m, dtype=np.uint8)
    cdef cnp.uint8_t[::1] taken = taken_arr
    cdef double v, best_iou
    with nogil:
        for i in range(n):
            best_j = -1
            best_iou = 0.0
            for j in range(m):
                if taken[j]:
                    continue
                v = _pair_iou(db, i, gb, j)
                if v >= iou_threshold and v > best_iou:
                    best_iou = v
                    best_j = j
            if best_j >= 0:
                matched[i] = best_j
                taken[best_j] = 1
    return matched_arr
