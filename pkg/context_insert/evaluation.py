from typing import Sequence

from loguru import logger

from .config import NDCG_GAIN, OBJECT_NDCG_KS, SCENE_NDCG_KS
from .errors import UsageError
from .metrics import (
    AnnotationRecord,
    accuracy_loc,
    avg_ndcg_objects,
    avg_ndcg_scenes,
    heatmap_iou,
    iou_size,
    macro_mean,
)
from .ranking import (
    boc_rank_objects,
    boc_retrieve_scenes,
    objects_from_matrix,
    predict_box,
    rank_scenes,
    scene_category_scores,
)
from .scene_model import SceneDetections
from .scorer import ContextModel, grid_for, joint_score, prepare_scene, rasterize_heatmap
from .workers import run_bounded

TASKS = ("objects", "scenes", "boxes")
BASELINES = ("boc",)


def _annotated_scenes(scenes: Sequence[SceneDetections], annotations: Sequence[AnnotationRecord]) -> list[SceneDetections]:
    by_id = {s.image_id: s for s in scenes}
    annotated = sorted({rec.image_id for rec in annotations})
    missing = [i for i in annotated if i not in by_id]
    if missing:
        logger.warning(f"{len(missing)} annotated images have no detections; first: {missing[0]}")
    return [by_id[i] for i in annotated if i in by_id]


def _evaluate_objects(model, scenes, annotations, baseline, ks, gain, threads) -> dict:
    targets = _annotated_scenes(scenes, annotations)
    if baseline == "boc":
        threshold = model.scoring.det_threshold
        ranked = [boc_rank_objects(s, model.counts, model.vocab, threshold) for s in targets]
    else:
        ranked = run_bounded(
            lambda s: objects_from_matrix(joint_score(s, grid_for(s, model.scoring), model)),
            targets,
            threads,
            label="Ranking objects",
        )
    results = {s.image_id: r for s, r in zip(targets, ranked)}
    return {
        "n_images": len(results),
        "zero_evidence": sum(r.zero_evidence for r in ranked),
        "metrics": {f"ndcg@{k}": avg_ndcg_objects(results, annotations, k, gain) for k in ks},
    }


def _evaluate_scenes(model, scenes, annotations, baseline, ks, gain, threads) -> dict:
    categories = sorted({rec.category for rec in annotations if model.vocab.is_insertable(rec.category)})
    if baseline == "boc":
        threshold = model.scoring.det_threshold
        results = {c: boc_retrieve_scenes(c, scenes, model.counts, model.vocab, threshold) for c in categories}
    else:
        vectors = run_bounded(lambda s: scene_category_scores(s, model), scenes, threads, label="Scoring scenes")
        by_image = {s.image_id: v for s, v in zip(scenes, vectors)}
        results = {c: rank_scenes(c, by_image, model.vocab) for c in categories}
    return {
        "n_images": len(scenes),
        "n_categories": len(categories),
        "metrics": {f"ndcg@{k}": avg_ndcg_scenes(results, annotations, k, gain) for k in ks},
    }


def _predict_scene(scene: SceneDetections, categories: list[str], model: ContextModel, refine: bool) -> dict:
    grid = grid_for(scene, model.scoring)
    sm = joint_score(scene, grid, model)
    out = {}
    for category in categories:
        prediction = predict_box(scene, model, category, grid=grid, sm=sm, refine=refine)
        heatmap = rasterize_heatmap(
            grid, prediction.box_probs, scene.width, scene.height, category=category, image_id=scene.image_id
        )
        out[category] = (prediction, heatmap)
    return out


def _evaluate_boxes(model, scenes, annotations, refine, threads) -> dict:
    targets = _annotated_scenes(scenes, annotations)
    wanted: dict[str, list[str]] = {}
    for rec in annotations:
        if model.vocab.is_insertable(rec.category):
            wanted.setdefault(rec.image_id, [])
            if rec.category not in wanted[rec.image_id]:
                wanted[rec.image_id].append(rec.category)
    targets = [s for s in targets if s.image_id in wanted]

    per_scene = run_bounded(
        lambda s: _predict_scene(s, sorted(wanted[s.image_id]), model, refine),
        targets,
        threads,
        label="Predicting boxes",
    )
    sizes, boxes, heatmaps = {}, {}, {}
    zero_evidence = no_candidates = 0
    for scene, predictions in zip(targets, per_scene):
        for category, (prediction, heatmap) in predictions.items():
            if prediction.box is None:
                no_candidates += 1
                continue
            key = (scene.image_id, category)
            sizes[key] = prediction.box.longer_side
            boxes[key] = prediction.box
            heatmaps[key] = heatmap
            zero_evidence += prediction.zero_evidence

    image_sizes = {s.image_id: (s.width, s.height) for s in targets}
    per_metric = {
        "iou_size": iou_size(annotations, sizes),
        "accuracy_loc": accuracy_loc(annotations, boxes, strict=False, image_sizes=image_sizes),
        "accuracy_loc_strict": accuracy_loc(annotations, boxes, strict=True, image_sizes=image_sizes),
        "heatmap_iou": heatmap_iou(annotations, heatmaps),
    }
    return {
        "n_images": len(targets),
        "n_predictions": len(sizes),
        "zero_evidence": zero_evidence,
        "no_candidates": no_candidates,
        "metrics": {
            name: {"mean": macro_mean(values), "per_category": values} for name, values in per_metric.items()
        },
    }


def evaluate(
    task: str,
    model: ContextModel,
    scenes: Sequence[SceneDetections],
    annotations: Sequence[AnnotationRecord],
    *,
    baseline: str | None = None,
    ks: Sequence[int] | None = None,
    gain: str = NDCG_GAIN,
    refine: bool = True,
    threads: int = 1,
) -> dict:
    if task not in TASKS:
        raise UsageError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    if baseline is not None and baseline not in BASELINES:
        raise UsageError(f"unknown baseline {baseline!r}")
    if baseline is not None and task == "boxes":
        raise UsageError("the bag-of-categories baseline predicts no boxes")

    scenes = [prepare_scene(s, model.scoring) for s in scenes]
    logger.info(f"Evaluating {task} on {len(scenes)} scenes and {len(annotations)} annotations")

    if task == "objects":
        report = _evaluate_objects(model, scenes, annotations, baseline, ks or OBJECT_NDCG_KS, gain, threads)
    elif task == "scenes":
        report = _evaluate_scenes(model, scenes, annotations, baseline, ks or SCENE_NDCG_KS, gain, threads)
    else:
        report = _evaluate_boxes(model, scenes, annotations, refine, threads)

    return {"task": task, "model": baseline or "context", "gain": gain, **report}


__all__ = ["BASELINES", "TASKS", "evaluate"]
