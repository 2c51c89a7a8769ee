from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from loguru import logger

from .corpus_stats import CountTables
from .errors import ZeroEvidenceError
from .scene_model import BBox, SceneDetections, Vocabulary
from .scorer import (
    CandidateGrid,
    ContextModel,
    ScoreMatrix,
    conditional_box,
    grid_for,
    joint_score,
    marginal_category,
    normalize_joint,
    refine_size,
    uniform_box_probs,
)
from .workers import run_bounded


@dataclass(frozen=True)
class RankedList:
    items: tuple[Hashable, ...]
    scores: tuple[float, ...]
    zero_evidence: bool = False

    @classmethod
    def from_scores(cls, pairs: Iterable[tuple[Hashable, float]], zero_evidence: bool = False) -> "RankedList":
        ordered = sorted(((item, float(score)) for item, score in pairs), key=lambda p: (-p[1], p[0]))
        return cls(tuple(p[0] for p in ordered), tuple(p[1] for p in ordered), zero_evidence)

    def __len__(self) -> int:
        return len(self.items)

    def top(self, k: int) -> "RankedList":
        return RankedList(self.items[:k], self.scores[:k], self.zero_evidence)

    def rank_of(self, item: Hashable) -> int:
        """0-based position of item."""
        return self.items.index(item)

    def to_dict(self) -> list[dict]:
        return [{"item": item, "score": score} for item, score in zip(self.items, self.scores)]


@dataclass(frozen=True, eq=False)
class BoxPrediction:
    category: str
    box: BBox | None        # None when the image is smaller than every window
    probability: float
    box_probs: np.ndarray
    zero_evidence: bool = False


def objects_from_matrix(sm: ScoreMatrix) -> RankedList:
    try:
        normalized = sm if sm.normalized else normalize_joint(sm)
    except ZeroEvidenceError:
        n = len(sm.categories)
        logger.warning("No context evidence; falling back to a uniform category ranking")
        return RankedList.from_scores(((c, 1.0 / n) for c in sm.categories), zero_evidence=True)
    return RankedList.from_scores(zip(normalized.categories, marginal_category(normalized)))


def boxes_from_matrix(sm: ScoreMatrix, category: str) -> RankedList:
    probs = conditional_box(sm, category)
    return RankedList.from_scores(enumerate(probs))


def rank_objects(scene: SceneDetections, model: ContextModel, grid: CandidateGrid | None = None) -> RankedList:
    grid = grid if grid is not None else grid_for(scene, model.scoring)
    return objects_from_matrix(joint_score(scene, grid, model))


def scene_category_scores(scene: SceneDetections, model: ContextModel) -> np.ndarray:
    """P(C | I) over insertable categories, or raw column sums when per-image normalization is off.

    A scene without context evidence scores zero everywhere.
    """
    sm = joint_score(scene, grid_for(scene, model.scoring), model)
    column_sums = marginal_category(sm)
    if not model.scoring.normalize_per_image:
        return column_sums * np.exp(sm.log_scale)
    z = sm.z
    return column_sums / z if z > 0 else np.zeros_like(column_sums)


def rank_scenes(category: str, scene_scores: Mapping[str, np.ndarray], vocab: Vocabulary) -> RankedList:
    col = vocab.insertable_index(category)
    return RankedList.from_scores((image_id, scores[col]) for image_id, scores in scene_scores.items())


def retrieve_scenes(
    category: str,
    scenes: Sequence[SceneDetections],
    model: ContextModel,
    threads: int = 1,
) -> RankedList:
    if not scenes:
        raise ValueError("scene retrieval needs at least one scene")
    model.vocab.insertable_index(category)
    scores = run_bounded(
        lambda scene: scene_category_scores(scene, model),
        scenes,
        threads,
        label=f"Scoring scenes for {category}",
    )
    return rank_scenes(category, {s.image_id: v for s, v in zip(scenes, scores)}, model.vocab)


def rank_boxes(scene: SceneDetections, model: ContextModel, grid: CandidateGrid, category: str) -> RankedList:
    return boxes_from_matrix(joint_score(scene, grid, model), category)


def predict_box(
    scene: SceneDetections,
    model: ContextModel,
    category: str,
    *,
    grid: CandidateGrid | None = None,
    sm: ScoreMatrix | None = None,
    refine: bool = False,
) -> BoxPrediction:
    """Best box for (scene, category), with the conditional distribution over candidates."""
    model.vocab.insertable_index(category)
    grid = grid if grid is not None else grid_for(scene, model.scoring)
    if len(grid) == 0:
        logger.warning(f"Image {scene.image_id} is too small for any candidate box; no {category} box predicted")
        return BoxPrediction(category, None, 0.0, np.zeros(0), zero_evidence=True)
    sm = sm if sm is not None else joint_score(scene, grid, model)
    zero_evidence = False
    try:
        probs = conditional_box(sm, category)
    except ZeroEvidenceError:
        logger.warning(f"No context evidence for {category} in {scene.image_id}; using uniform box scores")
        probs = uniform_box_probs(len(grid))
        zero_evidence = True

    best_index = RankedList.from_scores(enumerate(probs)).items[0]
    box = grid.box(best_index)
    if refine and not zero_evidence:
        box = refine_size(scene, model, category, box)
    return BoxPrediction(category, box, float(probs[best_index]), probs, zero_evidence)


def boc_scores(scene: SceneDetections, counts: CountTables, vocab: Vocabulary, threshold: float) -> np.ndarray:
    labels = [vocab.context[d.label_index] for d in scene.detections if d.max_score >= threshold]
    # duplicate labels count once per detection
    return np.array([float(sum(counts.pair(c, label) for label in labels)) for c in vocab.insertable])


def boc_rank_objects(scene: SceneDetections, counts: CountTables, vocab: Vocabulary, threshold: float) -> RankedList:
    scores = boc_scores(scene, counts, vocab, threshold)
    return RankedList.from_scores(zip(vocab.insertable, scores), zero_evidence=not scores.any())


def boc_retrieve_scenes(
    category: str,
    scenes: Sequence[SceneDetections],
    counts: CountTables,
    vocab: Vocabulary,
    threshold: float,
) -> RankedList:
    col = vocab.insertable_index(category)
    return RankedList.from_scores(
        (scene.image_id, boc_scores(scene, counts, vocab, threshold)[col]) for scene in scenes
    )


__all__ = [
    "BoxPrediction",
    "RankedList",
    "boc_rank_objects",
    "boc_retrieve_scenes",
    "boc_scores",
    "boxes_from_matrix",
    "objects_from_matrix",
    "predict_box",
    "rank_boxes",
    "rank_objects",
    "rank_scenes",
    "retrieve_scenes",
    "scene_category_scores",
]
