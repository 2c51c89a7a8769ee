import json
import os
import sys

# Allow "python scripts/run_synth_pipeline.py" to find context_insert.*
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if BASE_DIR not in sys.path:
    sys.path.append(BASE_DIR)

from context_insert.config import DEFAULT_THREADS
from context_insert.evaluation import TASKS, evaluate
from context_insert.io_formats import load_annotations, load_corpus, load_detections
from context_insert.model_store import load_model, save_model
from context_insert.synth import default_spec, gen_synthetic, write_fixture
from context_insert.trainer import train_model
from loguru import logger


def main(out_dir: str = "synth_run", seed: int = 7):
    spec = default_spec(seed)
    fixture_dir = write_fixture(gen_synthetic(spec), out_dir)

    corpus = load_corpus(fixture_dir / "corpus.jsonl")
    model = train_model(corpus, insertable=spec.insertable, threads=DEFAULT_THREADS)
    save_model(model, fixture_dir / "model.json")
    model = load_model(fixture_dir / "model.json")

    scenes = load_detections(fixture_dir / "detections.jsonl", model.vocab)
    annotations = load_annotations(fixture_dir / "annotations.jsonl", model.vocab)

    reports = {}
    for task in TASKS:
        try:
            reports[task] = evaluate(task, model, scenes, annotations, threads=DEFAULT_THREADS)
            logger.info(f"{task}: {json.dumps(reports[task]['metrics'], sort_keys=True)}")
        except Exception as ex:
            logger.error(f"Evaluation of {task} failed: {ex}")

    (fixture_dir / "report.json").write_text(json.dumps(reports, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Report written to {fixture_dir / 'report.json'}")


if __name__ == "__main__":
    main(*sys.argv[1:2])


#python ./scripts/run_synth_pipeline.py synth_run
