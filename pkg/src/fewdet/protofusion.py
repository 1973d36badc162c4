"""Prototype and similarity computations over precomputed embeddings.

Pure forward math, no learning: per-class prototype construction,
distance-to-score transforms, instance-cache affinity lookups, tempered
cosine, Gaussian soft masks, and the query-aware prototype refinement chain.
All functions are reentrant; cosines against a zero vector are 0 by
definition (see :class:`fewdet.core.EmbeddingRecord`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingTable, ValidationError

# maps embedding-record provenance to the prototype slot it feeds
PROTO_KIND_BY_RECORD = {"instance": "local", "image": "global", "text": "text"}
PROTOTYPE_KINDS = ("local", "global", "text")

COSINE_EPS = 1e-8


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector is zero."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


@dataclass(frozen=True)
class PrototypeSet:
    """Per-class local / global / text prototype vectors, each optional."""

    by_kind: dict[str, dict[int, np.ndarray]]
    dim: int

    def __post_init__(self):
        for kind, protos in self.by_kind.items():
            if kind not in PROTOTYPE_KINDS:
                raise ValidationError(f"unknown prototype kind {kind!r}")
            for class_id, vec in protos.items():
                if vec.shape != (self.dim,):
                    raise ValidationError(
                        f"{kind} prototype for class {class_id}: shape {vec.shape}, "
                        f"expected ({self.dim},)"
                    )
                if not np.all(np.isfinite(vec)):
                    raise ValidationError(f"{kind} prototype for class {class_id} is non-finite")

    def get(self, kind: str, class_id: int) -> np.ndarray | None:
        return self.by_kind.get(kind, {}).get(class_id)

    def classes(self) -> list[int]:
        out: set[int] = set()
        for protos in self.by_kind.values():
            out.update(protos)
        return sorted(out)

    def matrix(self, kind: str, classes: list[int]) -> np.ndarray | None:
        """Stacked prototypes of one kind, or None if any class lacks one."""
        protos = self.by_kind.get(kind, {})
        if any(c not in protos for c in classes):
            return None
        return np.stack([protos[c] for c in classes])


@dataclass(frozen=True)
class FusionWeights:
    """Weights for combining per-source class scores (weighted summation)."""

    w_local: float = 0.25
    w_global: float = 0.15
    w_text: float = 0.4
    w_det: float = 0.1
    w_aux: float = 0.1

    def __post_init__(self):
        values = (self.w_local, self.w_global, self.w_text, self.w_det, self.w_aux)
        if any(w < 0 for w in values):
            raise ValidationError("fusion weights must be >= 0")
        if sum(values) <= 0:
            raise ValidationError("fusion weights must not all be zero")


def build_prototypes(table: EmbeddingTable, kinds: tuple[str, ...] = ("instance", "image", "text")) -> PrototypeSet:
    """Per-class prototypes: arithmetic mean of instance / image records,
    text records taken verbatim (exactly one per class).

    Records of the requested kinds must carry a class id. A class with no
    record of some kind simply lacks that prototype.
    """
    by_kind: dict[str, dict[int, np.ndarray]] = {}
    for record_kind in kinds:
        if record_kind not in PROTO_KIND_BY_RECORD:
            raise ValidationError(f"unknown record kind {record_kind!r}")
        proto_kind = PROTO_KIND_BY_RECORD[record_kind]
        grouped: dict[int, list[np.ndarray]] = {}
        for rec in table.of_kind(record_kind):
            if rec.class_id is None:
                raise ValidationError(f"record {rec.record_id!r} has no class id")
            grouped.setdefault(rec.class_id, []).append(rec.vector)
        protos: dict[int, np.ndarray] = {}
        for class_id, vectors in grouped.items():
            if record_kind == "text":
                if len(vectors) > 1:
                    raise ValidationError(
                        f"class {class_id}: {len(vectors)} text records, expected one"
                    )
                protos[class_id] = vectors[0]
            else:
                protos[class_id] = np.mean(np.stack(vectors), axis=0)
        if protos:
            by_kind[proto_kind] = protos
    return PrototypeSet(by_kind, table.dim)


def proto_scores(query: np.ndarray, prototypes: np.ndarray, sigma: float,
                 softmax: bool = False) -> np.ndarray:
    """Distance-based class scores against a (n_classes, d) prototype stack.

    L2 distances are min-max normalized across classes (all-equal maps to
    all zeros), then score_c = -(1/sigma) * exp(normalized_c). The raw form
    is negative by construction; ``softmax`` applies the optional post-step
    that turns the scores into a distribution.
    """
    if sigma <= 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    prototypes = np.asarray(prototypes, dtype=np.float64)
    if prototypes.ndim != 2 or prototypes.shape[0] < 1:
        raise ValidationError("prototypes must be a non-empty (n_classes, d) array")
    if prototypes.shape[1] != query.shape[0]:
        raise ValidationError(
            f"dimension mismatch: query {query.shape[0]}, prototypes {prototypes.shape[1]}"
        )
    d = np.sqrt(np.sum((prototypes - query[None, :]) ** 2, axis=1))
    lo, hi = float(d.min()), float(d.max())
    norm = np.zeros_like(d) if hi == lo else (d - lo) / (hi - lo)
    scores = -(1.0 / sigma) * np.exp(norm)
    return _softmax(scores) if softmax else scores


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max()
    e = np.exp(shifted)
    return e / e.sum()


def fuse(prob_sources: list[tuple[np.ndarray, float]]) -> np.ndarray:
    """Elementwise weighted summation of equally sized score vectors."""
    if not prob_sources:
        raise ValidationError("fuse needs at least one source")
    first = np.asarray(prob_sources[0][0], dtype=np.float64).reshape(-1)
    out = np.zeros_like(first)
    for vec, weight in prob_sources:
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.shape != first.shape:
            raise ValidationError(
                f"length mismatch: {vec.shape[0]} vs {first.shape[0]}"
            )
        out = out + weight * vec
    return out


@dataclass(frozen=True, eq=False)
class FeatureCache:
    """Support-instance feature memory with one-hot labels.

    ``features`` is NK x d (row-aligned with ``labels_onehot``, NK x N);
    ``beta`` sharpens the affinity. Rows are L2-normalized defensively at
    lookup time, not here.
    """

    features: np.ndarray
    labels_onehot: np.ndarray
    beta: float

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels_onehot, dtype=np.float64)
        if features.ndim != 2 or labels.ndim != 2:
            raise ValidationError("cache features and labels must be 2-D")
        if features.shape[0] != labels.shape[0]:
            raise ValidationError(
                f"row mismatch: {features.shape[0]} feature rows vs {labels.shape[0]} label rows"
            )
        if not np.all((labels == 0.0) | (labels == 1.0)) or not np.all(labels.sum(axis=1) == 1.0):
            raise ValidationError("labels_onehot rows must be one-hot")
        if self.beta <= 0:
            raise ValidationError(f"beta must be > 0, got {self.beta}")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels_onehot", labels)

    @classmethod
    def from_embedding_table(cls, table: EmbeddingTable, beta: float) -> tuple[FeatureCache, list[int]]:
        """Build the cache from instance records, class-major, record id
        ascending within a class. Returns the cache and its class order."""
        records = [r for r in table.of_kind("instance")]
        if not records:
            raise ValidationError("no instance records to cache")
        for rec in records:
            if rec.class_id is None:
                raise ValidationError(f"record {rec.record_id!r} has no class id")
        classes = sorted({r.class_id for r in records})
        index = {c: i for i, c in enumerate(classes)}
        records.sort(key=lambda r: (index[r.class_id], r.record_id))
        features = np.stack([r.vector for r in records])
        labels = np.zeros((len(records), len(classes)), dtype=np.float64)
        for row, rec in enumerate(records):
            labels[row, index[rec.class_id]] = 1.0
        return cls(features, labels, beta), classes


def _l2_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return matrix / safe


def ifc_affinity(query: np.ndarray, cache: FeatureCache) -> tuple[np.ndarray, np.ndarray]:
    """Exponential-cosine affinity row against the cache plus adapted logits.

    A_j = exp(-beta * (1 - <q, F_j>)) over L2-normalized query and cache
    rows; logits_c = sum_j A_j * onehot[j, c]. Entries lie in (0, 1] for
    normalized inputs, hitting 1 exactly when the cosine is 1.
    """
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != cache.features.shape[1]:
        raise ValidationError(
            f"dimension mismatch: query {query.shape[0]}, cache {cache.features.shape[1]}"
        )
    norm = float(np.linalg.norm(query))
    q = query if norm == 0.0 else query / norm
    rows = _l2_rows(cache.features)
    # round-off can push a unit-vector dot past 1; clip so entries stay in (0, 1]
    cos = np.clip(rows @ q, -1.0, 1.0)
    affinity = np.exp(-cache.beta * (1.0 - cos))
    logits = affinity @ cache.labels_onehot
    return affinity, logits


def tempered_similarity(query: np.ndarray, proto: np.ndarray, tau: float = 0.07) -> float:
    """Temperature-scaled cosine: cosine(query, proto) / tau."""
    if tau <= 0:
        raise ValidationError(f"tau must be > 0, got {tau}")
    return cosine(query, proto) / tau


def _gaussian_taps(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def _blur_axis(grid: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    radius = (taps.size - 1) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(grid, pad, mode="reflect")
    out = np.zeros_like(grid)
    for k, tap in enumerate(taps):
        if axis == 0:
            out += tap * padded[k:k + grid.shape[0], :]
        else:
            out += tap * padded[:, k:k + grid.shape[1]]
    return out


def soft_mask(binary_mask: np.ndarray, sigma: float = 2.0) -> np.ndarray:
    """Gaussian soft mask: separable blur of a {0,1} grid divided by its max.

    Kernel radius is ceil(3*sigma) with renormalized taps; padding reflects
    about the edge sample (numpy 'reflect'). The output lives in [0, 1] and
    attains exactly 1 at the blurred maximum.
    """
    if sigma <= 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    mask = np.asarray(binary_mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ValidationError("mask must be a 2-D grid")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValidationError("mask entries must be 0 or 1")
    if not np.any(mask):
        raise ValidationError("mask must not be all-zero")
    taps = _gaussian_taps(sigma)
    blurred = _blur_axis(_blur_axis(mask, taps, axis=0), taps, axis=1)
    return blurred / blurred.max()


def masked_mean(features: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted spatial mean: sum(w * f) / sum(w) over an H x W grid."""
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if features.ndim != 3 or weights.ndim != 2 or features.shape[:2] != weights.shape:
        raise ValidationError(
            f"shape mismatch: features {features.shape}, weights {weights.shape}"
        )
    total = float(weights.sum())
    if total <= 0:
        raise ValidationError("total weight must be > 0")
    return np.tensordot(weights, features, axes=([0, 1], [0, 1])) / total


def nearest_support(query: np.ndarray, supports: list[tuple[np.ndarray, int]]) -> tuple[int, float]:
    """Classify by the single most similar support instance (never averaged).

    Returns (class_id, cosine confidence); ties go to the lowest class id,
    then the lowest support index.
    """
    if not supports:
        raise ValidationError("nearest_support needs at least one support vector")
    best: tuple[float, int, int] | None = None  # (-cos, class_id, index) minimized
    for index, (vec, class_id) in enumerate(supports):
        sim = cosine(query, vec)
        key = (-sim, class_id, index)
        if best is None or key < best:
            best = key
    return best[1], -best[0]


@dataclass(frozen=True, eq=False)
class ProjectionSet:
    """Externally supplied projection matrices for prototype refinement.

    The trained values are not published, so these are file-supplied inputs;
    :meth:`identity` gives the documented defaults. ``gate`` must be square
    (d x d): the sigmoid gate scales features elementwise.
    """

    query: np.ndarray
    key_self: np.ndarray
    key_cross: np.ndarray
    value: np.ndarray
    gate: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> ProjectionSet:
        eye = np.eye(dim, dtype=np.float64)
        return cls(eye, eye, eye, eye, eye)


def _checked_matmul(mat: np.ndarray, proj: np.ndarray, stage: str) -> np.ndarray:
    proj = np.asarray(proj, dtype=np.float64)
    if proj.ndim != 2 or mat.shape[1] != proj.shape[0]:
        raise ValidationError(
            f"{stage}: cannot project {mat.shape} by {proj.shape}"
        )
    return mat @ proj


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # pairwise cosine with the epsilon guard in the denominator
    norms_a = np.linalg.norm(a, axis=1)
    norms_b = np.linalg.norm(b, axis=1)
    return (a @ b.T) / (norms_a[:, None] * norms_b[None, :] + COSINE_EPS)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def refine_prototypes(
    query_patches: np.ndarray,
    support_patches: np.ndarray,
    projections: ProjectionSet,
    alpha: float,
    k_shot: int,
) -> np.ndarray:
    """Query-aware prototype refinement for one class.

    Implements, in order: scaled self-attention of the query patches,
    epsilon-guarded cosine cross-attention onto the projected support
    patches, row-softmax over the concatenated scores, a residual update of
    the query patches through the value projection, support re-weighting by
    softmaxed cosine against the (raw) query patches, a sigmoid gate, the
    K-shot mean, and finally the blend
    ``alpha * refined_mean + (1 - alpha) * plain_mean``. ``alpha = 0``
    therefore returns the plain support mean no matter the projections.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValidationError(f"alpha {alpha} outside [0, 1]")
    f_q = np.asarray(query_patches, dtype=np.float64)
    f_s = np.asarray(support_patches, dtype=np.float64)
    if f_q.ndim != 2 or f_s.ndim != 2:
        raise ValidationError("query and support patches must be 2-D matrices")
    if f_q.shape[1] != f_s.shape[1]:
        raise ValidationError(
            f"feature dimension mismatch: query {f_q.shape[1]}, support {f_s.shape[1]}"
        )
    if f_s.shape[0] != k_shot:
        raise ValidationError(f"support has {f_s.shape[0]} rows, expected k_shot={k_shot}")

    q = _checked_matmul(f_q, projections.query, "query projection")
    k1 = _checked_matmul(f_q, projections.key_self, "self-key projection")
    k2 = _checked_matmul(f_s, projections.key_cross, "cross-key projection")
    if q.shape[1] != k1.shape[1] or q.shape[1] != k2.shape[1]:
        raise ValidationError("projected query/key dimensions disagree")
    proj_dim = q.shape[1]

    a_self = (q @ k1.T) / math.sqrt(proj_dim)
    a_cross = _cosine_matrix(q, k2)
    attention = _softmax_rows(np.concatenate([a_self, a_cross], axis=1))

    values = _checked_matmul(np.concatenate([f_q, f_s], axis=0), projections.value,
                             "value projection")
    if values.shape[1] != f_q.shape[1]:
        raise ValidationError(
            f"value projection output dim {values.shape[1]} must equal the "
            f"feature dim {f_q.shape[1]} for the residual update"
        )
    refined_q = f_q + attention @ values

    sim = _softmax_rows(_cosine_matrix(f_s, f_q))
    refined_s = f_s + sim @ refined_q

    gate = np.asarray(projections.gate, dtype=np.float64)
    if gate.shape != (f_s.shape[1], f_s.shape[1]):
        raise ValidationError(
            f"gate must be square ({f_s.shape[1]} x {f_s.shape[1]}), got {gate.shape}"
        )
    weights = 1.0 / (1.0 + np.exp(-(refined_s @ gate)))
    refined_s = weights * refined_s

    refined_mean = refined_s.mean(axis=0)
    plain_mean = f_s.mean(axis=0)
    return alpha * refined_mean + (1.0 - alpha) * plain_mean
