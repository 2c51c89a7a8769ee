import os
import sys

import numpy as np
import pytest

# Allow "pytest" from the repository root to find context_insert.*
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if BASE_DIR not in sys.path:
    sys.path.append(BASE_DIR)

from context_insert.corpus_stats import CountTables
from context_insert.gmm import Gaussian, GmmModel
from context_insert.scene_model import BBox, DetectedObject, SceneDetections, Vocabulary
from context_insert.scorer import ContextModel


def single_gaussian(mean, std=0.1) -> GmmModel:
    std = np.broadcast_to(np.asarray(std, dtype=float), (4,))
    return GmmModel(np.array([1.0]), (Gaussian(np.asarray(mean, dtype=float), np.diag(std**2)),))


def two_gaussians(mean_a, mean_b, weight=0.5, std=0.15) -> GmmModel:
    cov = np.eye(4) * std**2
    return GmmModel(
        np.array([weight, 1.0 - weight]),
        (Gaussian(np.asarray(mean_a, dtype=float), cov), Gaussian(np.asarray(mean_b, dtype=float), cov)),
    )


@pytest.fixture
def vocab() -> Vocabulary:
    return Vocabulary(insertable=("clock", "cup"), context=("table", "wall"), relations=("near", "on"))


@pytest.fixture
def counts() -> CountTables:
    return CountTables(
        count_cat={"clock": 6, "cup": 9, "table": 20, "wall": 10},
        count_pair={("clock", "wall"): 6, ("cup", "table"): 9, ("cup", "wall"): 2},
        count_triple={("clock", "on", "wall"): 5, ("cup", "on", "table"): 8, ("cup", "near", "wall"): 2},
    )


@pytest.fixture
def model(vocab, counts) -> ContextModel:
    gmms = {
        ("clock", "on", "wall"): single_gaussian([0.3, 0.6, 0.2, 0.25]),
        ("cup", "on", "table"): two_gaussians([0.2, 0.9, 0.1, 0.15], [0.6, 1.0, 0.12, 0.1]),
        ("cup", "near", "wall"): single_gaussian([1.1, 0.0, 0.15, 0.2], std=0.2),
    }
    return ContextModel(vocab=vocab, counts=counts, gmms=gmms)


def scene_with(vocab: Vocabulary, image_id="img", width=640, height=480, detections=()) -> SceneDetections:
    """detections: iterable of (BBox, {context name: score})."""
    objs = []
    for box, scores in detections:
        objs.append(DetectedObject(box, tuple(scores.get(name, 0.0) for name in vocab.context)))
    return SceneDetections(image_id, width, height, tuple(objs))


@pytest.fixture
def wall_scene(vocab) -> SceneDetections:
    return scene_with(vocab, detections=[(BBox(200.0, 150.0, 220.0, 180.0), {"wall": 0.9})])
