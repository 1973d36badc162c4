"""N-way K-shot support/query construction.

Sampling is driven by numpy's PCG64 bit generator seeded with the episode
seed; the K-subset per class is drawn by an explicit partial Fisher-Yates
shuffle so the only randomness primitive consumed is ``Generator.integers``.
Classes are visited in ascending class id, which together with the fixed
generator makes an episode a pure function of (dataset, k, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DatasetIndex, ValidationError


@dataclass(frozen=True)
class Episode:
    """An N-way K-shot split: per-class support annotation ids plus the
    disjoint query image ids, and the seed that produced it."""

    n_way: int
    k_shot: int
    support: dict[int, tuple[int, ...]]
    query_image_ids: frozenset[int]
    seed: int

    def __post_init__(self):
        if self.n_way != len(self.support):
            raise ValidationError(
                f"n_way={self.n_way} but support covers {len(self.support)} classes"
            )
        for class_id, ids in self.support.items():
            if len(ids) != self.k_shot:
                raise ValidationError(
                    f"class {class_id}: {len(ids)} support instances, expected {self.k_shot}"
                )

    def to_json_dict(self) -> dict:
        return {
            "n_way": self.n_way,
            "k_shot": self.k_shot,
            "seed": self.seed,
            "support": {str(c): list(ids) for c, ids in sorted(self.support.items())},
            "query_image_ids": sorted(self.query_image_ids),
        }


def _sample_without_replacement(rng: np.random.Generator, pool: list[int], k: int) -> list[int]:
    # partial Fisher-Yates: k draws of integers(i, n) over a copy of the pool
    items = list(pool)
    n = len(items)
    for i in range(k):
        j = int(rng.integers(i, n))
        items[i], items[j] = items[j], items[i]
    return items[:k]


def sample_episode(ds: DatasetIndex, k: int, seed: int) -> Episode:
    """Sample exactly K support instances for every class of the dataset.

    N is always the full class count. Images owning any chosen support
    instance are excluded from the query set entirely, so support and query
    images are disjoint. A class with fewer than K instances makes the
    episode infeasible and raises, naming the class.
    """
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")
    by_class = ds.annotation_ids_by_class()
    for class_id in sorted(by_class):
        if len(by_class[class_id]) < k:
            name = ds.categories[class_id]
            raise ValidationError(
                f"infeasible episode: class {class_id} ({name!r}) has "
                f"{len(by_class[class_id])} instances, need k={k}"
            )

    rng = np.random.Generator(np.random.PCG64(seed))
    ann_by_id = ds.annotations_by_id()
    support: dict[int, tuple[int, ...]] = {}
    support_images: set[int] = set()
    for class_id in sorted(by_class):
        chosen = _sample_without_replacement(rng, by_class[class_id], k)
        support[class_id] = tuple(sorted(chosen))
        support_images.update(ann_by_id[a].image_id for a in chosen)

    query = frozenset(ds.images) - support_images
    return Episode(len(support), k, support, frozenset(query), seed)
