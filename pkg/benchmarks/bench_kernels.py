#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-numpy fallback.

Times the three box kernels on synthetic workloads plus an end-to-end
mAP evaluation, printing per-backend wall times and the speedup.

    python benchmarks/bench_kernels.py [--boxes 2000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fewdet import _kernels
from fewdet.core import BBox, Detection, DatasetIndex, GroundTruthBox, ImageInfo
from fewdet.metrics import MatchConfig, map_score


def random_boxes(rng, n, bound=1000):
    x = rng.uniform(0, bound - 30, size=n)
    y = rng.uniform(0, bound - 30, size=n)
    w = rng.uniform(1, 60, size=n)
    h = rng.uniform(1, 60, size=n)
    return np.stack([x, y, x + w, y + h], axis=1)


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def synthetic_eval_instance(rng, n_images=40, dets_per_image=60, gts_per_image=15):
    images = {i: ImageInfo(1000, 1000, f"{i}.jpg") for i in range(1, n_images + 1)}
    categories = {c: f"c{c}" for c in range(1, 6)}
    annotations = []
    dets = []
    ann_id = 1
    for img in range(1, n_images + 1):
        for box in random_boxes(rng, gts_per_image):
            annotations.append(GroundTruthBox(ann_id, img, int(rng.integers(1, 6)),
                                              BBox(*box)))
            ann_id += 1
        for box in random_boxes(rng, dets_per_image):
            dets.append(Detection(img, int(rng.integers(1, 6)), BBox(*box),
                                  round(float(rng.uniform(0, 1)), 4)))
    return DatasetIndex(images, categories, tuple(annotations)), dets


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--boxes", type=int, default=2000)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    available = _kernels.backends()
    if "fast" not in available:
        print("compiled backend not built; nothing to compare")
        return

    rng = np.random.default_rng(args.seed)
    n = args.boxes
    boxes = random_boxes(rng, n)
    scores = rng.uniform(0, 1, size=n)
    sub = boxes[: max(2, n // 10)]
    dataset, dets = synthetic_eval_instance(rng)

    workloads = {
        f"iou_matrix {len(sub)}x{len(sub)}":
            lambda mod: mod.iou_matrix(sub, sub),
        f"nms_keep {n} boxes (iou 0.5)":
            lambda mod: mod.nms_keep(boxes, scores, 0.5),
        f"greedy_match {n}x{len(sub)}":
            lambda mod: mod.greedy_match(boxes, sub, 0.5),
    }

    results: dict[str, dict[str, float]] = {}
    for label, call in workloads.items():
        results[label] = {name: timeit(lambda: call(mod), args.repeat)
                          for name, mod in available.items()}

    # end-to-end mAP with the backend swapped under the hood
    original = _kernels.BACKEND
    end_to_end = {}
    try:
        for name in available:
            _kernels.use(name)
            end_to_end[name] = timeit(
                lambda: map_score(dets, dataset, MatchConfig()), max(1, args.repeat // 2))
    finally:
        _kernels.use(original)
    results["map_score (40 imgs x 60 dets, 10 thresholds)"] = end_to_end

    width = max(len(k) for k in results)
    print(f"{'workload':<{width}}  {'pure':>10}  {'fast':>10}  {'speedup':>8}")
    for label, times in results.items():
        speedup = times["pure"] / times["fast"] if times["fast"] > 0 else float("inf")
        print(f"{label:<{width}}  {times['pure']:>9.4f}s  {times['fast']:>9.4f}s  "
              f"{speedup:>7.1f}x")


if __name__ == "__main__":
    main()
