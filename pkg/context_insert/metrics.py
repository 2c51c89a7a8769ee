import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from loguru import logger

from .errors import ContractViolationError
from .scene_model import BBox
from .scorer import Heatmap, pixel_spans

ImageCategory = tuple[str, str]


@dataclass(frozen=True, eq=False)
class RegionMask:
    bitmap: np.ndarray      # (height, width) bool, row 0 is the bottom row

    def __post_init__(self) -> None:
        object.__setattr__(self, "bitmap", np.asarray(self.bitmap, dtype=bool))
        if self.bitmap.ndim != 2:
            raise ContractViolationError(f"region mask must be 2-D, got shape {self.bitmap.shape}")

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]


@dataclass(frozen=True, eq=False)
class AnnotationRecord:
    image_id: str
    annotator_id: str
    category: str
    preference: int
    box_size: float
    region: RegionMask | None = None

    def __post_init__(self) -> None:
        if self.preference not in (1, 2):
            raise ContractViolationError(f"preference must be 1 or 2, got {self.preference}")
        if not (self.box_size > 0 and math.isfinite(self.box_size)):
            raise ContractViolationError(f"box size must be positive, got {self.box_size}")


def _gain(rel: float, mode: str) -> float:
    if mode == "linear":
        return float(rel)
    if mode == "exponential":
        return 2.0 ** rel - 1.0
    raise ValueError(f"unknown gain mode {mode!r}")


def ndcg_at_k(ranked, gains: Mapping[Hashable, float], k: int, gain: str = "linear") -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    items: Sequence[Hashable] = getattr(ranked, "items", ranked)
    dcg = sum(_gain(gains.get(item, 0), gain) / math.log2(i + 2) for i, item in enumerate(items[:k]))
    ideal = sorted(gains.values(), reverse=True)[:k]
    idcg = sum(_gain(rel, gain) / math.log2(i + 2) for i, rel in enumerate(ideal))
    return dcg / idcg if idcg > 0 else 0.0


def _by_image(annotations: Iterable[AnnotationRecord]) -> dict[str, list[AnnotationRecord]]:
    out: dict[str, list[AnnotationRecord]] = defaultdict(list)
    for rec in annotations:
        out[rec.image_id].append(rec)
    return out


def _by_image_category(annotations: Iterable[AnnotationRecord]) -> dict[ImageCategory, list[AnnotationRecord]]:
    out: dict[ImageCategory, list[AnnotationRecord]] = defaultdict(list)
    for rec in annotations:
        out[(rec.image_id, rec.category)].append(rec)
    return out


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def avg_ndcg_objects(
    results: Mapping[str, object],
    annotations: Iterable[AnnotationRecord],
    k: int,
    gain: str = "linear",
) -> float:
    """nDCG@k averaged over each image's annotators, then over images."""
    by_image = _by_image(annotations)
    per_image = []
    for image_id in sorted(results):
        records = by_image.get(image_id, [])
        if not records:
            logger.warning(f"Image {image_id} has no annotators; excluded from object nDCG")
            continue
        per_annotator: dict[str, dict[str, float]] = defaultdict(dict)
        for rec in records:
            per_annotator[rec.annotator_id][rec.category] = rec.preference
        per_image.append(
            _mean([ndcg_at_k(results[image_id], per_annotator[a], k, gain) for a in sorted(per_annotator)])
        )
    missing = sorted(set(by_image) - set(results))
    if missing:
        logger.warning(f"{len(missing)} annotated images have no ranking; excluded from object nDCG")
    return _mean(per_image)


def scene_gains(annotations: Iterable[AnnotationRecord]) -> dict[str, dict[str, float]]:
    """category -> image -> mean preference over the image's annotators (0 for those who skipped it)."""
    by_image = _by_image(annotations)
    gains: dict[str, dict[str, float]] = defaultdict(dict)
    for image_id, records in by_image.items():
        n_annotators = len({r.annotator_id for r in records})
        totals: dict[str, float] = defaultdict(float)
        for rec in records:
            totals[rec.category] += rec.preference
        for category, total in totals.items():
            gains[category][image_id] = total / n_annotators
    return gains


def avg_ndcg_scenes(
    results: Mapping[str, object],
    annotations: Iterable[AnnotationRecord],
    k: int,
    gain: str = "linear",
) -> float:
    """nDCG@k of each category's retrieved scene list, averaged over categories."""
    gains = scene_gains(annotations)
    return _mean([ndcg_at_k(results[c], gains.get(c, {}), k, gain) for c in sorted(results)])


def iou_size_pair(g: float, s: float) -> float:
    return min(g, s) / max(g, s)


def _aggregate(
    annotations: Iterable[AnnotationRecord],
    predictions: Mapping[ImageCategory, object],
    per_record,
    metric: str,
) -> dict[str, float]:
    per_category: dict[str, list[float]] = defaultdict(list)
    for (image_id, category), records in sorted(_by_image_category(annotations).items()):
        if (image_id, category) not in predictions:
            logger.warning(f"No prediction for {category} in {image_id}; excluded from {metric}")
            continue
        prediction = predictions[(image_id, category)]
        per_category[category].append(_mean([per_record(rec, prediction) for rec in records]))
    return {c: _mean(v) for c, v in sorted(per_category.items())}


def iou_size(
    annotations: Iterable[AnnotationRecord],
    predictions: Mapping[ImageCategory, float],
) -> dict[str, float]:
    return _aggregate(annotations, predictions, lambda rec, s: iou_size_pair(rec.box_size, s), "size IoU")


def box_region_overlap(region: RegionMask, box: BBox) -> tuple[int, int]:
    """(pixels of box inside the region, pixels of box), counting pixels by their centers."""
    x0, x1, y0, y1 = pixel_spans(np.array([box.as_tuple()]), region.width, region.height)[0]
    total = max(0, x1 - x0) * max(0, y1 - y0)
    if total == 0:
        return 0, 0
    return int(region.bitmap[y0:y1, x0:x1].sum()), int(total)


def location_accuracy(region: RegionMask, box: BBox, strict: bool = False) -> float:
    inside, total = box_region_overlap(region, box)
    if total == 0:
        return 0.0
    if strict:
        return 1.0 if inside == total else 0.0
    return inside / total


def accuracy_loc(
    annotations: Iterable[AnnotationRecord],
    best_boxes: Mapping[ImageCategory, BBox],
    strict: bool = False,
    image_sizes: Mapping[str, tuple[int, int]] | None = None,
) -> dict[str, float]:
    records = [r for r in annotations if r.region is not None]
    for rec in records:
        if image_sizes is not None and rec.image_id in image_sizes:
            if (rec.region.width, rec.region.height) != tuple(image_sizes[rec.image_id]):
                raise ContractViolationError(
                    f"region of {rec.annotator_id}/{rec.category} in {rec.image_id} is "
                    f"{rec.region.width}x{rec.region.height}, image is {image_sizes[rec.image_id]}"
                )
    name = "strict location accuracy" if strict else "location accuracy"
    return _aggregate(records, best_boxes, lambda rec, box: location_accuracy(rec.region, box, strict), name)


def iou_loc(g: np.ndarray, h: np.ndarray) -> float:
    if g.shape != h.shape:
        raise ContractViolationError(f"ground truth {g.shape} and heatmap {h.shape} differ in size")
    g_sum = g.sum()
    h_sum = h.sum()
    if g_sum <= 0 or h_sum <= 0:
        return 0.0
    g = g / g_sum
    h = h / h_sum
    return float(np.minimum(g, h).sum() / np.maximum(g, h).sum())


def heatmap_iou(
    annotations: Iterable[AnnotationRecord],
    heatmaps: Mapping[ImageCategory, Heatmap | np.ndarray],
) -> dict[str, float]:
    per_category: dict[str, list[float]] = defaultdict(list)
    for (image_id, category), records in sorted(_by_image_category(annotations).items()):
        records = [r for r in records if r.region is not None]
        if not records:
            continue
        if (image_id, category) not in heatmaps:
            logger.warning(f"No heatmap for {category} in {image_id}; excluded from heatmap IoU")
            continue
        predicted = heatmaps[(image_id, category)]
        raster = predicted.raster if isinstance(predicted, Heatmap) else np.asarray(predicted, dtype=float)
        ground_truth = np.zeros(records[0].region.bitmap.shape)
        for rec in records:
            if rec.region.bitmap.shape != ground_truth.shape:
                raise ContractViolationError(f"annotators of {image_id} drew regions of different sizes")
            ground_truth += rec.region.bitmap
        per_category[category].append(iou_loc(ground_truth, raster))
    return {c: _mean(v) for c, v in sorted(per_category.items())}


def macro_mean(per_category: Mapping[str, float]) -> float:
    return _mean(list(per_category.values()))


__all__ = [
    "AnnotationRecord",
    "RegionMask",
    "accuracy_loc",
    "avg_ndcg_objects",
    "avg_ndcg_scenes",
    "box_region_overlap",
    "heatmap_iou",
    "iou_loc",
    "iou_size",
    "iou_size_pair",
    "location_accuracy",
    "macro_mean",
    "ndcg_at_k",
    "scene_gains",
]
