"""Internal boxes have a bottom-left origin with y pointing up."""

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractViolationError, InvalidGeometryError, UnknownCategoryError


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        values = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise InvalidGeometryError(f"non-finite box {values}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidGeometryError(f"box needs positive width and height, got w={self.w}, h={self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2, self.y + self.h / 2)

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def longer_side(self) -> float:
        return max(self.w, self.h)

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def scaled(self, s: float) -> "BBox":
        return BBox(self.x * s, self.y * s, self.w * s, self.h * s)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class PairFeature:
    """Relative offset and scale of box 1 with respect to box 2."""

    v: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        if self.v[2] <= 0 or self.v[3] <= 0:
            raise InvalidGeometryError(f"size ratios must be positive, got {self.v}")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.v, dtype=float)


def pair_feature(b1: BBox, b2: BBox) -> PairFeature:
    if b2.w <= 0 or b2.h <= 0:
        raise InvalidGeometryError(f"degenerate reference box {b2.as_tuple()}")
    return PairFeature(
        (
            (b1.x - b2.x) / b2.w,
            (b1.y - b2.y) / b2.h,
            b1.w / b2.w,
            b1.h / b2.h,
        )
    )


def to_internal_coords(box_topleft: Sequence[float], image_height: int) -> BBox:
    x, y_td, w, h = (float(v) for v in box_topleft)
    if w <= 0 or h <= 0:
        raise InvalidGeometryError(f"box needs positive width and height, got w={w}, h={h}")
    return BBox(x, image_height - y_td - h, w, h)


def to_topleft_coords(box: BBox, image_height: int) -> tuple[float, float, float, float]:
    return (box.x, image_height - box.y - box.h, box.w, box.h)


def clamp_box(box: BBox, width: float, height: float) -> BBox:
    x0 = max(0.0, box.x)
    y0 = max(0.0, box.y)
    x1 = min(float(width), box.x + box.w)
    y1 = min(float(height), box.y + box.h)
    if x1 <= x0 or y1 <= y0:
        raise InvalidGeometryError(f"box {box.as_tuple()} lies outside the {width}x{height} image")
    if (x0, y0, x1 - x0, y1 - y0) == box.as_tuple():
        return box
    return BBox(x0, y0, x1 - x0, y1 - y0)


def _check_names(kind: str, names: tuple[str, ...]) -> None:
    if not names:
        raise ContractViolationError(f"{kind} vocabulary is empty")
    if len(set(names)) != len(names):
        raise ContractViolationError(f"{kind} vocabulary has duplicates: {list(names)}")


@dataclass(frozen=True)
class Vocabulary:
    insertable: tuple[str, ...]
    context: tuple[str, ...]
    relations: tuple[str, ...]
    _index: dict[str, dict[str, int]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "insertable", tuple(self.insertable))
        object.__setattr__(self, "context", tuple(self.context))
        object.__setattr__(self, "relations", tuple(self.relations))
        _check_names("insertable", self.insertable)
        _check_names("context", self.context)
        _check_names("relation", self.relations)
        object.__setattr__(
            self,
            "_index",
            {
                "insertable": {name: i for i, name in enumerate(self.insertable)},
                "context": {name: i for i, name in enumerate(self.context)},
                "relations": {name: i for i, name in enumerate(self.relations)},
            },
        )

    def _lookup(self, kind: str, name: str) -> int:
        try:
            return self._index[kind][name]
        except KeyError:
            raise UnknownCategoryError(f"{name!r} is not in the {kind} vocabulary") from None

    def insertable_index(self, name: str) -> int:
        return self._lookup("insertable", name)

    def context_index(self, name: str) -> int:
        return self._lookup("context", name)

    def relation_index(self, name: str) -> int:
        return self._lookup("relations", name)

    def is_insertable(self, name: str) -> bool:
        return name in self._index["insertable"]

    def is_context(self, name: str) -> bool:
        return name in self._index["context"]

    def is_relation(self, name: str) -> bool:
        return name in self._index["relations"]

    def to_dict(self) -> dict:
        return {
            "insertable": list(self.insertable),
            "context": list(self.context),
            "relations": list(self.relations),
        }


@dataclass(frozen=True)
class DetectedObject:
    box: BBox
    scores: tuple[float, ...]   # P(Cj | Bi, I), aligned with Vocabulary.context

    def __post_init__(self) -> None:
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        for s in self.scores:
            if not (0.0 <= s <= 1.0):
                raise ContractViolationError(f"detection score {s} outside [0, 1]")

    @property
    def max_score(self) -> float:
        return max(self.scores, default=0.0)

    @property
    def label_index(self) -> int:
        """Index of the most likely context category (first one on ties)."""
        return int(np.argmax(self.scores))


@dataclass(frozen=True)
class SceneDetections:
    image_id: str
    width: int
    height: int
    detections: tuple[DetectedObject, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "detections", tuple(self.detections))
        if self.width <= 0 or self.height <= 0:
            raise InvalidGeometryError(f"image {self.image_id} has non-positive size {self.width}x{self.height}")

    def with_detections(self, detections: Sequence[DetectedObject]) -> "SceneDetections":
        return SceneDetections(self.image_id, self.width, self.height, tuple(detections))

    def score_matrix(self, n_context: int) -> np.ndarray:
        """Detection scores as an (N, |context|) array."""
        if not self.detections:
            return np.zeros((0, n_context))
        out = np.asarray([d.scores for d in self.detections], dtype=float)
        if out.shape[1] != n_context:
            raise ContractViolationError(
                f"detections of {self.image_id} carry {out.shape[1]} scores, vocabulary has {n_context}"
            )
        return out

    def box_array(self) -> np.ndarray:
        """Detection boxes as an (N, 4) array of x, y, w, h."""
        if not self.detections:
            return np.zeros((0, 4))
        return np.asarray([d.box.as_tuple() for d in self.detections], dtype=float)


def filter_detections(scene: SceneDetections, threshold: float, max_n: int) -> SceneDetections:
    kept = [d for d in scene.detections if d.max_score >= threshold]
    # sorted() is stable, so equal scores keep their input order
    kept = sorted(kept, key=lambda d: -d.max_score)[: max(0, max_n)]
    return scene.with_detections(kept)


__all__ = [
    "BBox",
    "DetectedObject",
    "PairFeature",
    "SceneDetections",
    "Vocabulary",
    "clamp_box",
    "filter_detections",
    "pair_feature",
    "to_internal_coords",
    "to_topleft_coords",
]
