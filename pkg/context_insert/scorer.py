import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from loguru import logger

from .config import (
    DETECTION_THRESHOLD,
    MAX_CONTEXT_OBJECTS,
    NORMALIZE_PER_IMAGE,
    REFINE_MAX_SCALE,
    REFINE_VALUES,
    STRIDE_RATIO,
    WINDOW_SCALES,
)
from .corpus_stats import CountTables, TripleKey, relation_ratio
from .errors import ContractViolationError, UnknownCategoryError, ZeroEvidenceError
from .gmm import DIM, FitConfig, GmmModel
from .scene_model import BBox, SceneDetections, Vocabulary, clamp_box, filter_detections


@dataclass(frozen=True)
class ScoringConfig:
    det_threshold: float = DETECTION_THRESHOLD
    max_context: int = MAX_CONTEXT_OBJECTS
    scales: tuple[float, ...] = WINDOW_SCALES
    stride_ratio: float = STRIDE_RATIO
    refine_values: int = REFINE_VALUES
    refine_max_scale: float = REFINE_MAX_SCALE
    normalize_per_image: bool = NORMALIZE_PER_IMAGE

    def __post_init__(self) -> None:
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if not (0.0 <= self.det_threshold <= 1.0) or self.max_context < 0:
            raise ValueError(f"invalid detection filter settings: {self}")
        if not self.scales or any(s <= 0 for s in self.scales) or self.stride_ratio <= 0:
            raise ValueError(f"invalid sliding-window settings: {self}")
        if self.refine_values < 1 or self.refine_max_scale <= 0:
            raise ValueError(f"invalid refinement settings: {self}")

    def to_dict(self) -> dict:
        return {
            "det_threshold": self.det_threshold,
            "max_context": self.max_context,
            "scales": list(self.scales),
            "stride_ratio": self.stride_ratio,
            "refine_values": self.refine_values,
            "refine_max_scale": self.refine_max_scale,
            "normalize_per_image": self.normalize_per_image,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScoringConfig":
        return cls(**{**data, "scales": tuple(data["scales"])})


@dataclass(frozen=True, eq=False)
class _ComponentTable:
    """Every mixture component of the model, sorted by insertable column.

    The log term of a component at feature f is monomials(f) @ coef[:, q].
    """

    coef: np.ndarray        # (15, Q) quadratic, linear and constant coefficients
    context: np.ndarray     # (Q,) context index of the component's triple
    column: np.ndarray      # (Q,) insertable column, non-decreasing

    def __len__(self) -> int:
        return len(self.context)


_UPPER = np.triu_indices(DIM)
N_MONOMIALS = len(_UPPER[0]) + DIM + 1
SCORE_CHUNK = 256


def _monomials(feats: np.ndarray) -> np.ndarray:
    out = np.empty((len(feats), N_MONOMIALS))
    n_quad = len(_UPPER[0])
    np.multiply(feats[:, _UPPER[0]], feats[:, _UPPER[1]], out=out[:, :n_quad])
    out[:, n_quad : n_quad + DIM] = feats
    out[:, -1] = 1.0
    return out


def _component_coef(const: float, mean: np.ndarray, prec_chol: np.ndarray) -> np.ndarray:
    # const - (f - m)^T P (f - m) / 2, expanded over the monomials of f
    prec = prec_chol @ prec_chol.T
    off_diagonal = np.where(_UPPER[0] == _UPPER[1], 0.5, 1.0)
    return np.concatenate(
        (
            -off_diagonal * prec[_UPPER],
            prec @ mean,
            [const - 0.5 * mean @ prec @ mean],
        )
    )


@dataclass(frozen=True, eq=False)
class ContextModel:
    vocab: Vocabulary
    counts: CountTables
    gmms: dict[TripleKey, GmmModel]
    fit_config: FitConfig = field(default_factory=FitConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)

    def __post_init__(self) -> None:
        for key in self.gmms:
            c, r, cj = key
            if self.counts.triple(c, r, cj) <= 0:
                raise ContractViolationError(f"mixture for {key} has no supporting triple count")
            if not (self.vocab.is_insertable(c) and self.vocab.is_relation(r) and self.vocab.is_context(cj)):
                raise ContractViolationError(f"mixture key {key} is outside the vocabulary")

    @cached_property
    def component_table(self) -> _ComponentTable:
        rows = []
        for (c, r, cj), gmm in sorted(self.gmms.items()):
            rho = relation_ratio(self.counts, c, r, cj)
            if rho <= 0:
                continue
            consts, means, precs = gmm.component_terms()
            col = self.vocab.insertable_index(c)
            ctx = self.vocab.context_index(cj)
            for const, mean, prec in zip(consts, means, precs):
                rows.append((col, ctx, _component_coef(float(const) + math.log(rho), mean, prec)))
        rows.sort(key=lambda row: row[0])
        if not rows:
            return _ComponentTable(np.zeros((N_MONOMIALS, 0)), np.zeros(0, dtype=int), np.zeros(0, dtype=int))
        return _ComponentTable(
            coef=np.column_stack([row[2] for row in rows]),
            context=np.array([row[1] for row in rows]),
            column=np.array([row[0] for row in rows]),
        )


@dataclass(frozen=True, eq=False)
class CandidateGrid:
    width: int
    height: int
    boxes_xywh: np.ndarray      # (M, 4), internal coordinates

    def __len__(self) -> int:
        return len(self.boxes_xywh)

    @property
    def boxes(self) -> list[BBox]:
        return [BBox(*map(float, row)) for row in self.boxes_xywh]

    def box(self, index: int) -> BBox:
        return BBox(*map(float, self.boxes_xywh[index]))


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    values: np.ndarray              # (boxes, insertable categories)
    categories: tuple[str, ...]
    normalized: bool = False
    log_scale: float = 0.0         # true scores are values * exp(log_scale)

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != len(self.categories):
            raise ContractViolationError(
                f"score matrix shape {self.values.shape} does not match {len(self.categories)} categories"
            )

    @property
    def z(self) -> float:
        return float(self.values.sum())

    def column(self, category: str) -> np.ndarray:
        if category not in self.categories:
            raise UnknownCategoryError(f"{category!r} is not an insertable category")
        return self.values[:, self.categories.index(category)]


@dataclass(frozen=True, eq=False)
class Heatmap:
    raster: np.ndarray      # (height, width), row 0 is the bottom row
    category: str
    image_id: str

    def __post_init__(self) -> None:
        if self.raster.ndim != 2 or not np.all(np.isfinite(self.raster)) or np.any(self.raster < 0):
            raise ContractViolationError("heatmap raster must be 2-D, finite and non-negative")

    @property
    def width(self) -> int:
        return self.raster.shape[1]

    @property
    def height(self) -> int:
        return self.raster.shape[0]


def sample_candidates(
    width: int,
    height: int,
    scales: Sequence[float] = WINDOW_SCALES,
    stride_ratio: float = STRIDE_RATIO,
) -> CandidateGrid:
    longest = max(width, height)
    rows = []
    for scale in scales:
        w = scale * longest
        s = stride_ratio * w
        if w <= 0 or w > width or w > height:
            continue
        nx = math.floor((width - w) / s) + 1
        ny = math.floor((height - w) / s) + 1
        xs = np.minimum(np.arange(nx) * s, width - w)
        ys = np.minimum(np.arange(ny) * s, height - w)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        block = np.empty((nx * ny, 4))
        block[:, 0] = gx.ravel()
        block[:, 1] = gy.ravel()
        block[:, 2] = w
        block[:, 3] = w
        rows.append(block)
    boxes = np.concatenate(rows) if rows else np.zeros((0, 4))
    return CandidateGrid(width, height, boxes)


def grid_for(scene: SceneDetections, config: ScoringConfig) -> CandidateGrid:
    return sample_candidates(scene.width, scene.height, config.scales, config.stride_ratio)


def prepare_scene(scene: SceneDetections, config: ScoringConfig) -> SceneDetections:
    return filter_detections(scene, config.det_threshold, config.max_context)


def scaled_scores(scene: SceneDetections, boxes_xywh: np.ndarray, model: ContextModel) -> tuple[np.ndarray, float]:
    """Joint scores S(B, C) for an (M, 4) box array as (values, log_scale), S = values * exp(log_scale).

    log_scale is the largest single log term of the image, so values never
    underflow as a whole.
    """
    boxes_xywh = np.asarray(boxes_xywh, dtype=float).reshape(-1, DIM)
    values = np.zeros((len(boxes_xywh), len(model.vocab.insertable)))
    table = model.component_table
    if len(boxes_xywh) == 0 or not scene.detections or len(table) == 0:
        return values, 0.0

    probs = scene.score_matrix(len(model.vocab.context))
    shift = -math.inf
    for i, (x2, y2, w2, h2) in enumerate(scene.box_array()):
        active = np.flatnonzero(probs[i, table.context] > 0)
        if len(active) == 0:
            continue
        phi = _monomials((boxes_xywh - (x2, y2, 0.0, 0.0)) / (w2, h2, w2, h2))
        for start in range(0, len(active), SCORE_CHUNK):
            idx = active[start : start + SCORE_CHUNK]
            base = shift if math.isfinite(shift) else 0.0
            coef = table.coef[:, idx].copy()
            coef[-1] += np.log(probs[i, table.context[idx]]) - base
            logs = phi @ coef
            top = float(logs.max())
            if base + top > shift:
                values *= math.exp(shift - base - top)
                shift = base + top
                logs -= top
            np.exp(logs, out=logs)
            cols = table.column[idx]
            starts = np.flatnonzero(np.r_[True, cols[1:] != cols[:-1]])
            values[:, cols[starts]] += np.add.reduceat(logs, starts, axis=1)
    return values, (shift if math.isfinite(shift) else 0.0)


def score_boxes(scene: SceneDetections, boxes_xywh: np.ndarray, model: ContextModel) -> np.ndarray:
    """Unscaled joint scores; tiny images of far-away context may underflow to zero."""
    values, log_scale = scaled_scores(scene, boxes_xywh, model)
    return values * math.exp(log_scale)


def joint_score(scene: SceneDetections, grid: CandidateGrid, model: ContextModel) -> ScoreMatrix:
    values, log_scale = scaled_scores(scene, grid.boxes_xywh, model)
    return ScoreMatrix(values, model.vocab.insertable, log_scale=log_scale)


def normalize_joint(sm: ScoreMatrix) -> ScoreMatrix:
    z = sm.z
    if z <= 0:
        raise ZeroEvidenceError("joint score matrix is all zero")
    return ScoreMatrix(sm.values / z, sm.categories, normalized=True)


def marginal_category(sm: ScoreMatrix) -> np.ndarray:
    return sm.values.sum(axis=0)


def conditional_box(sm: ScoreMatrix, c: str) -> np.ndarray:
    col = sm.column(c)
    total = col.sum()
    if total <= 0:
        raise ZeroEvidenceError(f"no context evidence for category {c}")
    return col / total


def uniform_box_probs(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n) if n else np.zeros(0)


def refine_size(
    scene: SceneDetections,
    model: ContextModel,
    c: str,
    best: BBox,
    n_values: int | None = None,
) -> BBox:
    n_values = n_values or model.scoring.refine_values
    side_max = model.scoring.refine_max_scale * max(scene.width, scene.height)
    cx, cy = best.center
    candidates = []
    for k in range(1, n_values + 1):
        side = side_max * k / n_values
        candidates.append(clamp_box(BBox(cx - side / 2, cy - side / 2, side, side), scene.width, scene.height))

    column = scaled_scores(scene, np.asarray([b.as_tuple() for b in candidates]), model)[0][
        :, model.vocab.insertable_index(c)
    ]
    # argmax returns the first maximum, i.e. the smallest side on ties
    chosen = candidates[int(np.argmax(column))]
    logger.debug(f"Refined {c} box in {scene.image_id}: side {best.longer_side:.1f} -> {chosen.longer_side:.1f}")
    return chosen


def pixel_spans(boxes_xywh: np.ndarray, width: int, height: int) -> np.ndarray:
    """Half-open pixel index ranges [x0, x1) x [y0, y1) of pixels whose centers fall in each box."""
    boxes_xywh = np.asarray(boxes_xywh, dtype=float).reshape(-1, DIM)
    x, y, w, h = boxes_xywh.T
    x0 = np.clip(np.ceil(x - 0.5), 0, width).astype(int)
    x1 = np.clip(np.ceil(x + w - 0.5), 0, width).astype(int)
    y0 = np.clip(np.ceil(y - 0.5), 0, height).astype(int)
    y1 = np.clip(np.ceil(y + h - 0.5), 0, height).astype(int)
    return np.column_stack((x0, x1, y0, y1))


def rasterize_heatmap(
    grid: CandidateGrid,
    box_probs: np.ndarray,
    width: int,
    height: int,
    *,
    category: str = "",
    image_id: str = "",
) -> Heatmap:
    box_probs = np.asarray(box_probs, dtype=float)
    if len(box_probs) != len(grid):
        raise ContractViolationError(f"{len(box_probs)} box probabilities for {len(grid)} candidate boxes")
    if width <= 0 or height <= 0:
        raise ContractViolationError(f"cannot rasterize onto a {width}x{height} image")

    spans = pixel_spans(grid.boxes_xywh, width, height)
    x0, x1, y0, y1 = spans.T
    keep = (x1 > x0) & (y1 > y0)
    diff = np.zeros((height + 1, width + 1))
    p = box_probs[keep]
    np.add.at(diff, (y0[keep], x0[keep]), p)
    np.add.at(diff, (y0[keep], x1[keep]), -p)
    np.add.at(diff, (y1[keep], x0[keep]), -p)
    np.add.at(diff, (y1[keep], x1[keep]), p)
    raster = diff.cumsum(axis=0).cumsum(axis=1)[:height, :width]
    # prefix sums of cancelling terms can leave -0.0 or tiny negatives
    raster = np.maximum(raster, 0.0)
    return Heatmap(raster, category, image_id)


__all__ = [
    "CandidateGrid",
    "ContextModel",
    "Heatmap",
    "ScoreMatrix",
    "ScoringConfig",
    "conditional_box",
    "grid_for",
    "joint_score",
    "marginal_category",
    "normalize_joint",
    "pixel_spans",
    "prepare_scene",
    "rasterize_heatmap",
    "refine_size",
    "sample_candidates",
    "scaled_scores",
    "score_boxes",
    "uniform_box_probs",
]
