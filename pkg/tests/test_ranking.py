import dataclasses

import numpy as np
import pytest
from conftest import scene_with, single_gaussian

from context_insert.corpus_stats import CountTables
from context_insert.errors import UnknownCategoryError
from context_insert.ranking import (
    RankedList,
    boc_rank_objects,
    boc_retrieve_scenes,
    boc_scores,
    boxes_from_matrix,
    objects_from_matrix,
    predict_box,
    rank_boxes,
    rank_objects,
    retrieve_scenes,
    scene_category_scores,
)
from context_insert.scene_model import BBox, SceneDetections, Vocabulary
from context_insert.scorer import ContextModel, ScoreMatrix, grid_for


@pytest.fixture
def clock_model() -> ContextModel:
    vocab = Vocabulary(insertable=("clock", "cup"), context=("wall",), relations=("on",))
    counts = CountTables(count_cat={"wall": 4}, count_triple={("clock", "on", "wall"): 3})
    return ContextModel(
        vocab=vocab, counts=counts, gmms={("clock", "on", "wall"): single_gaussian([0.4, 0.5, 0.2, 0.2])}
    )


def wall_at(model, image_id="a", score=0.9, box=BBox(200, 150, 200, 200)):
    return scene_with(model.vocab, image_id=image_id, detections=[(box, {"wall": score})])


def test_ranked_list_breaks_ties_by_item():
    ranked = RankedList.from_scores({"b": 1.0, "a": 1.0, "c": 2.0}.items())
    assert ranked.items == ("c", "a", "b")
    assert ranked.rank_of("b") == 2
    assert ranked.top(2).items == ("c", "a")
    assert ranked.to_dict()[0] == {"item": "c", "score": 2.0}


def test_single_triple_ranks_its_category_first(clock_model):
    ranked = rank_objects(wall_at(clock_model), clock_model)
    assert ranked.items == ("clock", "cup")
    assert ranked.scores[0] == pytest.approx(1.0)
    assert not ranked.zero_evidence


def test_zero_detections_fall_back_to_uniform(clock_model):
    ranked = rank_objects(SceneDetections("empty", 640, 480), clock_model)
    assert ranked.zero_evidence
    assert ranked.items == ("clock", "cup")
    assert ranked.scores == (0.5, 0.5)


def test_object_ranking_ignores_score_scale(model, vocab):
    detections = [
        (BBox(200, 150, 220, 180), {"wall": 0.3, "table": 0.1}),
        (BBox(50, 20, 300, 90), {"table": 0.2, "wall": 0.05}),
    ]
    tripled = [(box, {k: 3 * v for k, v in scores.items()}) for box, scores in detections]
    base = rank_objects(scene_with(vocab, detections=detections), model)
    scaled = rank_objects(scene_with(vocab, detections=tripled), model)
    assert base.items == scaled.items
    assert base.scores == pytest.approx(scaled.scores, rel=1e-9)


def test_evidence_bearing_scene_ranks_first(clock_model):
    scenes = [SceneDetections("a_empty", 640, 480), wall_at(clock_model, "b_wall")]
    ranked = retrieve_scenes("clock", scenes, clock_model)
    assert ranked.items == ("b_wall", "a_empty")
    assert ranked.scores[1] == 0.0


def test_duplicate_scenes_are_adjacent(clock_model):
    scenes = [
        wall_at(clock_model, "dup_b"),
        SceneDetections("c_empty", 640, 480),
        wall_at(clock_model, "dup_a"),
    ]
    ranked = retrieve_scenes("clock", scenes, clock_model, threads=2)
    assert ranked.items == ("dup_a", "dup_b", "c_empty")
    assert ranked.scores[0] == ranked.scores[1]


def test_raw_scene_scores_when_normalization_is_off(clock_model):
    raw = dataclasses.replace(
        clock_model, scoring=dataclasses.replace(clock_model.scoring, normalize_per_image=False)
    )
    scene = wall_at(clock_model)
    normalized = scene_category_scores(scene, clock_model)
    summed = scene_category_scores(scene, raw)
    assert normalized[0] == pytest.approx(1.0)
    assert summed[0] > 0 and summed[1] == 0.0


def test_scene_scores_without_evidence_are_zero(clock_model):
    assert not scene_category_scores(SceneDetections("e", 640, 480), clock_model).any()


def test_one_hot_joint_picks_that_box():
    values = np.zeros((5, 2))
    values[3, 0] = 2.0
    ranked = boxes_from_matrix(ScoreMatrix(values, ("clock", "cup")), "clock")
    assert ranked.items[0] == 3
    assert ranked.scores[0] == 1.0


def test_reversed_scores_reverse_the_box_ranking():
    column = np.array([[1.0], [2.0], [3.0], [4.0]])
    forward = boxes_from_matrix(ScoreMatrix(column, ("clock",)), "clock")
    backward = boxes_from_matrix(ScoreMatrix(column[::-1].copy(), ("clock",)), "clock")
    assert forward.items == (3, 2, 1, 0)
    assert backward.items == (0, 1, 2, 3)


def test_rank_boxes_and_predict_box_agree(clock_model):
    scene = wall_at(clock_model)
    grid = grid_for(scene, clock_model.scoring)
    ranked = rank_boxes(scene, clock_model, grid, "clock")
    prediction = predict_box(scene, clock_model, "clock", grid=grid)
    assert prediction.box == grid.box(ranked.items[0])
    assert prediction.probability == pytest.approx(ranked.scores[0])
    assert prediction.box_probs.sum() == pytest.approx(1.0)


def test_predict_box_without_evidence_is_flagged(clock_model):
    prediction = predict_box(wall_at(clock_model), clock_model, "cup", refine=True)
    assert prediction.zero_evidence
    np.testing.assert_allclose(prediction.box_probs, 1.0 / 878)


def test_boc_counts_duplicate_labels_twice():
    vocab = Vocabulary(insertable=("clock", "cup"), context=("table", "wall"), relations=("on",))
    counts = CountTables(count_pair={("clock", "wall"): 7, ("cup", "table"): 1})
    scene = scene_with(
        vocab,
        detections=[(BBox(0, 0, 10, 10), {"wall": 0.8}), (BBox(20, 0, 10, 10), {"wall": 0.6, "table": 0.3})],
    )
    np.testing.assert_array_equal(boc_scores(scene, counts, vocab, 0.4), [14.0, 0.0])
    assert boc_rank_objects(scene, counts, vocab, 0.4).items == ("clock", "cup")


def test_boc_without_confident_detections():
    vocab = Vocabulary(insertable=("cup", "clock"), context=("wall",), relations=("on",))
    counts = CountTables(count_pair={("clock", "wall"): 7})
    scene = scene_with(vocab, detections=[(BBox(0, 0, 10, 10), {"wall": 0.2})])
    ranked = boc_rank_objects(scene, counts, vocab, 0.4)
    assert ranked.items == ("clock", "cup")
    assert ranked.scores == (0.0, 0.0)
    assert ranked.zero_evidence


def test_boc_scene_retrieval_reuses_the_scorer():
    vocab = Vocabulary(insertable=("clock",), context=("table", "wall"), relations=("on",))
    counts = CountTables(count_pair={("clock", "wall"): 3, ("clock", "table"): 1})
    scenes = [
        scene_with(vocab, image_id="t", detections=[(BBox(0, 0, 5, 5), {"table": 0.9})]),
        scene_with(vocab, image_id="w", detections=[(BBox(0, 0, 5, 5), {"wall": 0.9})]),
    ]
    ranked = boc_retrieve_scenes("clock", scenes, counts, vocab, 0.4)
    assert ranked.items == ("w", "t")
    assert ranked.scores == (3.0, 1.0)


def test_unknown_category_is_rejected(clock_model):
    with pytest.raises(UnknownCategoryError):
        retrieve_scenes("lamp", [wall_at(clock_model)], clock_model)
    with pytest.raises(UnknownCategoryError):
        predict_box(wall_at(clock_model), clock_model, "lamp")


def test_image_smaller_than_every_window_has_no_box(clock_model):
    pano = scene_with(
        clock_model.vocab, image_id="pano", width=1000, height=50,
        detections=[(BBox(100, 10, 300, 30), {"wall": 0.9})],
    )
    prediction = predict_box(pano, clock_model, "clock", refine=True)
    assert prediction.box is None
    assert prediction.zero_evidence
    assert prediction.probability == 0.0
    assert len(prediction.box_probs) == 0
