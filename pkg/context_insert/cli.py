"""Command-line surface. Each command prints one JSON document on stdout."""

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from loguru import logger

from .config import (
    DEFAULT_INSERTABLE,
    DEFAULT_LOG_LEVEL,
    DEFAULT_THREADS,
    GMM_COMPONENTS,
    GMM_MAX_ITER,
    GMM_N_INIT,
    GMM_REG_COVAR,
    GMM_SEED,
    GMM_TOL,
    LOG_ENV_VAR,
    NDCG_GAIN,
    SYNTH_ANNOTATORS,
    SYNTH_NOISE,
    SYNTH_SAMPLES_PER_TRIPLE,
    SYNTH_TEST_SCENES,
    TOP_CONTEXT,
    TOP_RELATIONS,
)
from .errors import (
    EXIT_INTERNAL,
    EXIT_OK,
    ContextInsertError,
    DataValidationError,
    UnknownCategoryError,
    UsageError,
)
from .evaluation import BASELINES, TASKS, evaluate
from .gmm import FitConfig
from .io_formats import IngestReport, load_annotations, load_corpus, load_detections, write_heatmap
from .model_store import load_model, save_model
from .ranking import RankedList, objects_from_matrix, predict_box, retrieve_scenes
from .scene_model import BBox, SceneDetections, to_topleft_coords
from .scorer import ContextModel, ScoringConfig, grid_for, joint_score, prepare_scene, rasterize_heatmap
from .synth import default_spec, gen_synthetic, write_fixture
from .trainer import train_model

LOG_LEVELS = ("TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def configure_logging() -> None:
    level = os.environ.get(LOG_ENV_VAR, DEFAULT_LOG_LEVEL).upper()
    if level not in LOG_LEVELS:
        level = DEFAULT_LOG_LEVEL
    logger.remove()
    logger.add(sys.stderr, level=level)


def _emit(document: dict, out: str | None = None) -> None:
    text = json.dumps(document, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _comma_list(value: str) -> list[str]:
    items = list(dict.fromkeys(v.strip() for v in value.split(",") if v.strip()))
    if not items:
        raise argparse.ArgumentTypeError("expected a comma separated list")
    return items


def _int_list(value: str) -> list[int]:
    try:
        ks = [int(v) for v in _comma_list(value)]
    except ValueError as ex:
        raise argparse.ArgumentTypeError(f"expected integers: {value}") from ex
    if any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("cutoffs must be >= 1")
    return ks


def _box_json(box: BBox | None, height: int) -> list[float] | None:
    if box is None:
        return None
    return [round(float(v), 6) for v in to_topleft_coords(box, height)]


def _add_scoring_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--det-threshold", type=float, default=None)
    p.add_argument("--max-context", type=int, default=None)
    p.add_argument("--refine-values", type=int, default=None)
    p.add_argument("--no-normalize", action="store_true", help="rank scenes by raw score sums")


def _scoring_overrides(args, base: ScoringConfig) -> ScoringConfig:
    changes = {}
    if args.det_threshold is not None:
        changes["det_threshold"] = args.det_threshold
    if args.max_context is not None:
        changes["max_context"] = args.max_context
    if args.refine_values is not None:
        changes["refine_values"] = args.refine_values
    if args.no_normalize:
        changes["normalize_per_image"] = False
    try:
        return dataclasses.replace(base, **changes)
    except ValueError as ex:
        raise UsageError(str(ex)) from ex


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=DEFAULT_THREADS)
    p.add_argument("--strict", action="store_true", help="fail on the first invalid record")


def _load_scoring_model(args) -> ContextModel:
    model = load_model(args.model)
    return dataclasses.replace(model, scoring=_scoring_overrides(args, model.scoring))


def _load_scenes(args, model: ContextModel) -> list[SceneDetections]:
    return load_detections(args.detections, model.vocab, strict=args.strict)


def _find_scene(scenes: Sequence[SceneDetections], image_id: str, path: str) -> SceneDetections:
    for scene in scenes:
        if scene.image_id == image_id:
            return scene
    raise DataValidationError(f"image id {image_id!r} not found", path=path)


def _check_category(model: ContextModel, category: str) -> None:
    if not model.vocab.is_insertable(category):
        raise UnknownCategoryError(f"{category!r} is not an insertable category of this model")


def cmd_train(args) -> dict:
    if args.top_context < 1 or args.top_relations < 1:
        raise UsageError("--top-context and --top-relations must be >= 1")
    report = IngestReport()
    corpus = load_corpus(args.corpus, strict=args.strict, report=report)
    try:
        fit_config = FitConfig(
            k=args.k,
            max_iter=args.max_iter,
            tol=args.tol,
            reg_covar=args.reg_covar,
            seed=args.seed,
            n_init=args.n_init,
        )
    except ValueError as ex:
        raise UsageError(str(ex)) from ex
    model = train_model(
        corpus,
        insertable=args.insertable,
        top_context=args.top_context,
        top_relations=args.top_relations,
        fit_config=fit_config,
        scoring=_scoring_overrides(args, ScoringConfig()),
        threads=args.threads,
    )
    save_model(model, args.out)
    return {
        "model": str(args.out),
        "vocab": model.vocab.to_dict(),
        "n_mixtures": len(model.gmms),
        "corpus": report.to_dict(),
    }


def cmd_recommend(args) -> dict:
    model = _load_scoring_model(args)
    scene = prepare_scene(_find_scene(_load_scenes(args, model), args.image_id, args.detections), model.scoring)
    grid = grid_for(scene, model.scoring)
    sm = joint_score(scene, grid, model)
    ranked = objects_from_matrix(sm).top(args.topk)
    recommendations = []
    for category, score in zip(ranked.items, ranked.scores):
        prediction = predict_box(scene, model, category, grid=grid, sm=sm, refine=args.refine)
        recommendations.append(
            {
                "category": category,
                "score": score,
                "box": _box_json(prediction.box, scene.height),
                "box_probability": prediction.probability,
            }
        )
    return {"image_id": scene.image_id, "zero_evidence": ranked.zero_evidence, "recommendations": recommendations}


def cmd_retrieve(args) -> dict:
    model = _load_scoring_model(args)
    _check_category(model, args.category)
    scenes = [prepare_scene(s, model.scoring) for s in _load_scenes(args, model)]
    if not scenes:
        raise DataValidationError("no scenes to retrieve from", path=args.detections)
    ranked: RankedList = retrieve_scenes(args.category, scenes, model, threads=args.threads).top(args.topk)
    by_id = {s.image_id: s for s in scenes}
    results = []
    for image_id, score in zip(ranked.items, ranked.scores):
        scene = by_id[image_id]
        prediction = predict_box(scene, model, args.category, refine=args.refine)
        results.append(
            {
                "image_id": image_id,
                "score": score,
                "box": _box_json(prediction.box, scene.height),
                "zero_evidence": prediction.zero_evidence,
            }
        )
    return {"category": args.category, "results": results}


def cmd_predict_box(args) -> dict:
    model = _load_scoring_model(args)
    _check_category(model, args.category)
    scene = prepare_scene(_find_scene(_load_scenes(args, model), args.image_id, args.detections), model.scoring)
    prediction = predict_box(scene, model, args.category, refine=args.refine)
    return {
        "image_id": scene.image_id,
        "category": args.category,
        "box": _box_json(prediction.box, scene.height),
        "probability": prediction.probability,
        "refined": args.refine,
        "zero_evidence": prediction.zero_evidence,
    }


def cmd_heatmap(args) -> dict:
    model = _load_scoring_model(args)
    _check_category(model, args.category)
    scene = prepare_scene(_find_scene(_load_scenes(args, model), args.image_id, args.detections), model.scoring)
    grid = grid_for(scene, model.scoring)
    prediction = predict_box(scene, model, args.category, grid=grid)
    heatmap = rasterize_heatmap(
        grid, prediction.box_probs, scene.width, scene.height, category=args.category, image_id=scene.image_id
    )
    sidecar = write_heatmap(heatmap, args.out)
    return {
        "image_id": scene.image_id,
        "category": args.category,
        "heatmap": str(args.out),
        "sidecar": str(sidecar),
        "max": float(heatmap.raster.max()),
        "zero_evidence": prediction.zero_evidence,
    }


def cmd_evaluate(args) -> dict:
    model = _load_scoring_model(args)
    scenes = _load_scenes(args, model)
    annotations = load_annotations(args.annotations, model.vocab, strict=args.strict)
    report = evaluate(
        args.task,
        model,
        scenes,
        annotations,
        baseline=args.baseline,
        ks=args.k,
        gain=args.gain,
        refine=not args.no_refine,
        threads=args.threads,
    )
    if args.out:
        _emit(report, args.out)
        return {"report": str(args.out), "task": args.task}
    return report


def cmd_synth(args) -> dict:
    spec = default_spec(
        args.seed,
        samples_per_triple=args.n_train_per_triple,
        n_test_scenes=args.n_test,
        noise=args.noise,
        n_annotators=args.annotators,
    )
    fixture = gen_synthetic(spec)
    out = write_fixture(fixture, args.out)
    return {
        "out": str(out),
        "seed": spec.seed,
        "insertable": list(spec.insertable),
        "n_train_images": len(fixture.corpus),
        "n_test_scenes": len(fixture.scenes),
        "n_annotations": len(fixture.annotations),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="context-insert", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit co-occurrence counts and per-triple mixtures")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=GMM_SEED)
    p.add_argument("--insertable", type=_comma_list, default=list(DEFAULT_INSERTABLE))
    p.add_argument("--k", type=int, default=GMM_COMPONENTS)
    p.add_argument("--top-context", type=int, default=TOP_CONTEXT)
    p.add_argument("--top-relations", type=int, default=TOP_RELATIONS)
    p.add_argument("--max-iter", type=int, default=GMM_MAX_ITER)
    p.add_argument("--tol", type=float, default=GMM_TOL)
    p.add_argument("--reg-covar", type=float, default=GMM_REG_COVAR)
    p.add_argument("--n-init", type=int, default=GMM_N_INIT)
    _add_common(p)
    _add_scoring_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("recommend", help="rank insertable categories for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--image-id", required=True)
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--refine", action="store_true")
    _add_common(p)
    _add_scoring_flags(p)
    p.set_defaults(handler=cmd_recommend)

    p = sub.add_parser("retrieve", help="rank images for one category")
    p.add_argument("--model", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--category", required=True)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--refine", action="store_true")
    _add_common(p)
    _add_scoring_flags(p)
    p.set_defaults(handler=cmd_retrieve)

    for name, handler, text in (
        ("predict-box", cmd_predict_box, "best box for a category in one image"),
        ("heatmap", cmd_heatmap, "per-pixel insertion heatmap for a category in one image"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--model", required=True)
        p.add_argument("--detections", required=True)
        p.add_argument("--image-id", required=True)
        p.add_argument("--category", required=True)
        if name == "predict-box":
            p.add_argument("--refine", action="store_true")
        else:
            p.add_argument("--out", required=True, help="PGM path; a JSON sidecar is written next to it")
        _add_common(p)
        _add_scoring_flags(p)
        p.set_defaults(handler=handler)

    p = sub.add_parser("evaluate", help="score a model against human annotations")
    p.add_argument("--model", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--baseline", choices=BASELINES, default=None)
    p.add_argument("--k", type=_int_list, default=None, help="comma separated nDCG cutoffs")
    p.add_argument("--gain", choices=("linear", "exponential"), default=NDCG_GAIN)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--out", default=None)
    _add_common(p)
    _add_scoring_flags(p)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("synth", help="write a seeded synthetic fixture tree")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-train-per-triple", type=int, default=SYNTH_SAMPLES_PER_TRIPLE)
    p.add_argument("--n-test", type=int, default=SYNTH_TEST_SCENES)
    p.add_argument("--noise", type=float, default=SYNTH_NOISE)
    p.add_argument("--annotators", type=int, default=SYNTH_ANNOTATORS)
    p.set_defaults(handler=cmd_synth)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        if getattr(args, "topk", 1) < 1:
            raise UsageError("--topk must be >= 1")
        _emit(args.handler(args))
        return EXIT_OK
    except ContextInsertError as ex:
        logger.debug(f"{type(ex).__name__}: {ex}")
        sys.stderr.write(json.dumps(ex.to_dict(), sort_keys=True) + "\n")
        return ex.exit_code
    except Exception as ex:
        logger.exception(f"Unexpected failure: {ex}")
        error = {"error": "internal_error", "type": type(ex).__name__, "message": str(ex)}
        sys.stderr.write(json.dumps(error, sort_keys=True) + "\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
