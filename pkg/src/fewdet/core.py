"""Domain types shared by the whole harness, plus annotation / detection /
embedding file loading and validation.

File boundary conventions:

* annotation files are a COCO subset: a JSON object with ``images``
  (``{id, width, height, file_name}``), ``annotations``
  (``{id, image_id, category_id, bbox}``) and ``categories`` (``{id, name}``),
  with annotation boxes in ``[x, y, width, height]`` order;
* detection files are COCO results: a JSON array of
  ``{image_id, category_id, bbox, score}``, bbox again ``[x, y, w, h]``;
* embedding files are JSON lines of ``{id, class_id?, kind, vector}``.

Internally every box is corner-format (x_min, y_min, x_max, y_max) float64;
xywh exists only at the file boundary. All types are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EMBEDDING_KINDS = ("instance", "image", "text")


class ValidationError(ValueError):
    """An input file or in-memory record violates its contract."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, corner convention, continuous pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"non-finite box coordinate {name}={value!r}")
            object.__setattr__(self, name, value)
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValidationError(
                f"inverted box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> BBox:
        if w < 0 or h < 0:
            raise ValidationError(f"negative box size: w={w}, h={h}")
        return cls(x, y, x + w, y + h)

    def to_xywh(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max - self.x_min, self.y_max - self.y_min]

    def clamped(self, width: float, height: float) -> BBox:
        """Clamp into [0, width] x [0, height]."""
        return BBox(
            min(max(self.x_min, 0.0), width),
            min(max(self.y_min, 0.0), height),
            min(max(self.x_max, 0.0), width),
            min(max(self.y_max, 0.0), height),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)


@dataclass(frozen=True)
class GroundTruthBox:
    """A labeled instance bound to an image and a category."""

    annotation_id: int
    image_id: int
    category_id: int
    bbox: BBox


@dataclass(frozen=True)
class Detection:
    """A scored prediction bound to an image and a category.

    ``source_id`` optionally tags the producing model for ensembling.
    """

    image_id: int
    category_id: int
    bbox: BBox
    score: float
    source_id: str | None = None

    def __post_init__(self):
        score = float(self.score)
        if not (0.0 <= score <= 1.0):
            raise ValidationError(f"detection score {score!r} outside [0, 1]")
        object.__setattr__(self, "score", score)


@dataclass(frozen=True)
class ImageInfo:
    width: float
    height: float
    file_name: str

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(
                f"non-positive image size {self.width}x{self.height} ({self.file_name!r})"
            )


@dataclass(frozen=True)
class DatasetIndex:
    """Images, category table, and ground-truth annotations of one dataset."""

    images: dict[int, ImageInfo]
    categories: dict[int, str]
    annotations: tuple[GroundTruthBox, ...]

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        seen: set[int] = set()
        for ann in self.annotations:
            if ann.annotation_id in seen:
                raise ValidationError(f"duplicate annotation id {ann.annotation_id}")
            seen.add(ann.annotation_id)
            if ann.image_id not in self.images:
                raise ValidationError(
                    f"annotation {ann.annotation_id} references missing image {ann.image_id}"
                )
            if ann.category_id not in self.categories:
                raise ValidationError(
                    f"annotation {ann.annotation_id} references missing category {ann.category_id}"
                )

    def annotation_ids_by_class(self) -> dict[int, list[int]]:
        """Ascending annotation ids per category, all categories included."""
        out: dict[int, list[int]] = {c: [] for c in self.categories}
        for ann in self.annotations:
            out[ann.category_id].append(ann.annotation_id)
        for ids in out.values():
            ids.sort()
        return out

    def annotations_by_id(self) -> dict[int, GroundTruthBox]:
        return {a.annotation_id: a for a in self.annotations}


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """An L2-normalizable feature vector with provenance.

    ``kind`` is one of ``instance`` (a cropped object), ``image`` (a whole
    image) or ``text`` (a class-name encoding). ``is_zero`` flags the zero
    vector, which is never normalized; any cosine against it is defined as 0.
    """

    record_id: str
    kind: str
    vector: np.ndarray
    class_id: int | None = None

    def __post_init__(self):
        if self.kind not in EMBEDDING_KINDS:
            raise ValidationError(f"record {self.record_id!r}: unknown kind {self.kind!r}")
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if vec.size < 1:
            raise ValidationError(f"record {self.record_id!r}: empty vector")
        if not np.all(np.isfinite(vec)):
            raise ValidationError(f"record {self.record_id!r}: non-finite vector entry")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])

    @property
    def is_zero(self) -> bool:
        return bool(np.all(self.vector == 0.0))

    def normalized(self) -> EmbeddingRecord:
        """L2-normalized copy; the zero vector is returned unchanged."""
        if self.is_zero:
            return self
        return EmbeddingRecord(
            self.record_id, self.kind, self.vector / np.linalg.norm(self.vector), self.class_id
        )


@dataclass(frozen=True)
class EmbeddingTable:
    """Embedding records sharing one dimension, indexed by record id."""

    records: tuple[EmbeddingRecord, ...]
    by_id: dict[str, EmbeddingRecord] = field(init=False, repr=False)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        if not records:
            raise ValidationError("embedding table is empty")
        dim = records[0].dim
        by_id: dict[str, EmbeddingRecord] = {}
        for rec in records:
            if rec.dim != dim:
                raise ValidationError(
                    f"record {rec.record_id!r}: dimension {rec.dim} != table dimension {dim}"
                )
            if rec.record_id in by_id:
                raise ValidationError(f"duplicate record id {rec.record_id!r}")
            by_id[rec.record_id] = rec
        object.__setattr__(self, "by_id", by_id)

    @property
    def dim(self) -> int:
        return self.records[0].dim

    def of_kind(self, kind: str) -> tuple[EmbeddingRecord, ...]:
        return tuple(r for r in self.records if r.kind == kind)


@dataclass(frozen=True, eq=False)
class ProbVector:
    """Per-class score vector over an episode's classes.

    When ``normalized`` is set, the values must be a probability
    distribution (non-negative, summing to 1 within 1e-9).
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.normalized:
            if np.any(vals < 0.0):
                raise ValidationError("normalized ProbVector has a negative entry")
            if abs(float(vals.sum()) - 1.0) > 1e-9:
                raise ValidationError(f"normalized ProbVector sums to {vals.sum()!r}")


# ---------------------------------------------------------------------------
# file loading


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ValidationError(f"{where}: missing key {key!r}")
    return mapping[key]


def _as_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _read_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_dataset(path: str | Path) -> DatasetIndex:
    """Load and validate a COCO-subset annotation file.

    Boxes are converted from xywh to corners and clamped to image bounds
    (with a warning) when they overflow; referential integrity, positive
    image sizes and non-negative box sizes are enforced, each violation
    reported with the offending record id.
    """
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: annotation file must be a JSON object")

    images: dict[int, ImageInfo] = {}
    for entry in _require(raw, "images", str(path)):
        image_id = int(_require(entry, "id", "image entry"))
        if image_id in images:
            raise ValidationError(f"duplicate image id {image_id}")
        width = _as_number(_require(entry, "width", f"image {image_id}"), f"image {image_id} width")
        height = _as_number(_require(entry, "height", f"image {image_id}"), f"image {image_id} height")
        if width <= 0 or height <= 0:
            raise ValidationError(f"image {image_id}: non-positive size {width}x{height}")
        images[image_id] = ImageInfo(width, height, str(_require(entry, "file_name", f"image {image_id}")))

    categories: dict[int, str] = {}
    for entry in _require(raw, "categories", str(path)):
        cat_id = int(_require(entry, "id", "category entry"))
        if cat_id in categories:
            raise ValidationError(f"duplicate category id {cat_id}")
        categories[cat_id] = str(_require(entry, "name", f"category {cat_id}"))

    annotations: list[GroundTruthBox] = []
    clamped_ids: list[int] = []
    for entry in _require(raw, "annotations", str(path)):
        ann_id = int(_require(entry, "id", "annotation entry"))
        image_id = int(_require(entry, "image_id", f"annotation {ann_id}"))
        category_id = int(_require(entry, "category_id", f"annotation {ann_id}"))
        if image_id not in images:
            raise ValidationError(f"annotation {ann_id}: dangling image reference {image_id}")
        if category_id not in categories:
            raise ValidationError(f"annotation {ann_id}: dangling category reference {category_id}")
        bbox_raw = _require(entry, "bbox", f"annotation {ann_id}")
        if not isinstance(bbox_raw, (list, tuple)) or len(bbox_raw) != 4:
            raise ValidationError(f"annotation {ann_id}: bbox must be [x, y, w, h]")
        x, y, w, h = (_as_number(v, f"annotation {ann_id} bbox") for v in bbox_raw)
        if w < 0 or h < 0:
            raise ValidationError(f"annotation {ann_id}: negative box size w={w}, h={h}")
        box = BBox.from_xywh(x, y, w, h)
        info = images[image_id]
        clamped = box.clamped(info.width, info.height)
        if clamped != box:
            clamped_ids.append(ann_id)
        annotations.append(GroundTruthBox(ann_id, image_id, category_id, clamped))

    if clamped_ids:
        warnings.warn(
            f"{len(clamped_ids)} annotation box(es) exceeded image bounds and were "
            f"clamped: ids {clamped_ids[:10]}{'...' if len(clamped_ids) > 10 else ''}",
            stacklevel=2,
        )
    return DatasetIndex(images, categories, tuple(annotations))


def serialize_dataset(ds: DatasetIndex) -> dict:
    """Inverse of :func:`load_dataset`, back to the COCO-subset layout."""
    return {
        "images": [
            {"id": i, "width": info.width, "height": info.height, "file_name": info.file_name}
            for i, info in sorted(ds.images.items())
        ],
        "annotations": [
            {
                "id": a.annotation_id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": a.bbox.to_xywh(),
            }
            for a in ds.annotations
        ],
        "categories": [{"id": i, "name": n} for i, n in sorted(ds.categories.items())],
    }


def save_dataset(ds: DatasetIndex, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(serialize_dataset(ds), fh)


def load_detections(path: str | Path, source_id: str | None = None) -> list[Detection]:
    """Load a COCO-results detection file (xywh boxes, scores in [0, 1]).

    Accepts either a bare results array or a report object carrying the
    array under a ``detections`` key (the `ensemble` subcommand's output).
    """
    raw = _read_json(path)
    if isinstance(raw, dict) and "detections" in raw:
        raw = raw["detections"]
    if not isinstance(raw, list):
        raise ValidationError(f"{path}: detection file must be a JSON array")
    out: list[Detection] = []
    for idx, entry in enumerate(raw):
        where = f"detection #{idx}"
        image_id = int(_require(entry, "image_id", where))
        category_id = int(_require(entry, "category_id", where))
        bbox_raw = _require(entry, "bbox", where)
        if not isinstance(bbox_raw, (list, tuple)) or len(bbox_raw) != 4:
            raise ValidationError(f"{where}: bbox must be [x, y, w, h]")
        x, y, w, h = (_as_number(v, f"{where} bbox") for v in bbox_raw)
        if w < 0 or h < 0:
            raise ValidationError(f"{where}: negative box size w={w}, h={h}")
        score = _as_number(_require(entry, "score", where), f"{where} score")
        if not (0.0 <= score <= 1.0):
            raise ValidationError(f"{where}: score {score} outside [0, 1]")
        out.append(Detection(image_id, category_id, BBox.from_xywh(x, y, w, h), score, source_id))
    return out


def serialize_detections(dets: list[Detection]) -> list[dict]:
    return [
        {
            "image_id": d.image_id,
            "category_id": d.category_id,
            "bbox": d.bbox.to_xywh(),
            "score": d.score,
        }
        for d in dets
    ]


def save_detections(dets: list[Detection], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(serialize_detections(dets), fh)


def load_embeddings(path: str | Path, normalize: bool = False) -> EmbeddingTable:
    """Load a JSON-lines embedding file into an :class:`EmbeddingTable`.

    Every record must share one vector dimension and contain only finite
    values; duplicate ids are rejected. With ``normalize`` the vectors are
    L2-normalized on load (zero vectors stay as-is and keep their flag).
    """
    records: list[EmbeddingRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            where = f"{path}:{line_no}"
            record_id = str(_require(entry, "id", where))
            kind = str(_require(entry, "kind", where))
            vector = _require(entry, "vector", where)
            if not isinstance(vector, (list, tuple)):
                raise ValidationError(f"{where}: vector must be an array")
            class_id = entry.get("class_id")
            rec = EmbeddingRecord(
                record_id, kind, np.asarray(vector, dtype=np.float64),
                None if class_id is None else int(class_id),
            )
            records.append(rec.normalized() if normalize else rec)
    return EmbeddingTable(tuple(records))
