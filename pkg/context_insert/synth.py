"""Seeded synthetic fixtures with planted per-triple mixtures."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from loguru import logger

from .config import (
    DEFAULT_INSERTABLE,
    SYNTH_ANNOTATORS,
    SYNTH_CONTEXT_NAMES,
    SYNTH_IMAGE_HEIGHT,
    SYNTH_IMAGE_WIDTH,
    SYNTH_NOISE,
    SYNTH_RELATION_NAMES,
    SYNTH_SAMPLES_PER_TRIPLE,
    SYNTH_TEST_SCENES,
)
from .corpus_stats import CorpusObject, CorpusRelation, CountTables, SceneGraphRecord, TripleKey
from .errors import InvalidSpecError
from .gmm import Gaussian, GmmModel, sample
from .io_formats import write_jsonl, write_mask
from .metrics import AnnotationRecord, RegionMask
from .scene_model import BBox, DetectedObject, SceneDetections, Vocabulary, to_topleft_coords
from .scorer import ContextModel, ScoringConfig

MIN_RATIO = 0.02


@dataclass(frozen=True, eq=False)
class PlantedTriple:
    subject: str
    relation: str
    context: str
    gmm: GmmModel

    @property
    def key(self) -> TripleKey:
        return (self.subject, self.relation, self.context)


@dataclass(frozen=True, eq=False)
class SynthSpec:
    seed: int
    triples: tuple[PlantedTriple, ...]
    samples_per_triple: int = SYNTH_SAMPLES_PER_TRIPLE
    n_test_scenes: int = SYNTH_TEST_SCENES
    noise: float = SYNTH_NOISE
    n_annotators: int = SYNTH_ANNOTATORS
    width: int = SYNTH_IMAGE_WIDTH
    height: int = SYNTH_IMAGE_HEIGHT

    def __post_init__(self) -> None:
        object.__setattr__(self, "triples", tuple(self.triples))
        if not self.triples:
            raise InvalidSpecError("synthetic spec plants no triples")
        if len(self.insertable) < 2 or len(self.contexts) < 2 or len(self.relations) < 1:
            raise InvalidSpecError("synthetic spec needs >= 2 insertables, >= 2 contexts and >= 1 relation")
        pairs = {(t.subject, t.context) for t in self.triples}
        if len({s for s, _ in pairs}) != len(pairs) or len({c for _, c in pairs}) != len(pairs):
            raise InvalidSpecError("each insertable must be planted with exactly one context category")
        if not (0.0 <= self.noise <= 1.0):
            raise InvalidSpecError(f"noise level {self.noise} outside [0, 1]")
        if self.samples_per_triple < 1 or self.n_test_scenes < 0 or self.n_annotators < 1:
            raise InvalidSpecError("sample, scene and annotator counts must be positive")

    @property
    def insertable(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(t.subject for t in self.triples))

    @property
    def contexts(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(t.context for t in self.triples))

    @property
    def relations(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(t.relation for t in self.triples))

    @property
    def n_train_images(self) -> int:
        return self.samples_per_triple * len(self.triples)

    def partner(self, context: str) -> str:
        return next(t.subject for t in self.triples if t.context == context)


@dataclass(eq=False)
class SynthFixture:
    spec: SynthSpec
    corpus: list[SceneGraphRecord] = field(default_factory=list)
    scenes: list[SceneDetections] = field(default_factory=list)
    annotations: list[AnnotationRecord] = field(default_factory=list)
    planted_categories: dict[str, str] = field(default_factory=dict)

    @property
    def planted_gmms(self) -> dict[TripleKey, GmmModel]:
        return {t.key: t.gmm for t in self.spec.triples}

    def planted_model(self, vocab: Vocabulary, counts: CountTables, scoring: ScoringConfig = ScoringConfig()) -> ContextModel:
        """A model that scores with the planted mixtures instead of fitted ones."""
        return ContextModel(vocab=vocab, counts=counts, gmms=self.planted_gmms, scoring=scoring)

    def scenes_for(self, vocab: Vocabulary) -> list[SceneDetections]:
        """Test scenes with detection scores re-indexed to a model's context vocabulary."""
        contexts = self.spec.contexts
        out = []
        for scene in self.scenes:
            detections = []
            for d in scene.detections:
                by_name = dict(zip(contexts, d.scores))
                detections.append(DetectedObject(d.box, tuple(by_name.get(name, 0.0) for name in vocab.context)))
            out.append(scene.with_detections(detections))
        return out


def _planted_gmm(rng: np.random.Generator, inside: bool) -> GmmModel:
    lo, hi = (0.1, 0.6) if inside else (-0.3, 0.9)
    components = []
    for _ in range(2):
        ratio = rng.uniform(0.2, 0.45)
        mean = np.array([rng.uniform(lo, hi), rng.uniform(lo, hi), ratio, ratio * rng.uniform(0.9, 1.1)])
        cov = np.diag([0.08**2, 0.08**2, 0.04**2, 0.04**2])
        components.append(Gaussian(mean, cov))
    w = rng.uniform(0.35, 0.65)
    return GmmModel(np.array([w, 1.0 - w]), tuple(components))


def default_spec(
    seed: int,
    *,
    n_insertable: int = 2,
    n_relations: int = 2,
    samples_per_triple: int = SYNTH_SAMPLES_PER_TRIPLE,
    n_test_scenes: int = SYNTH_TEST_SCENES,
    noise: float = SYNTH_NOISE,
    n_annotators: int = SYNTH_ANNOTATORS,
) -> SynthSpec:
    if n_insertable > min(len(DEFAULT_INSERTABLE), len(SYNTH_CONTEXT_NAMES)):
        raise InvalidSpecError(f"at most {len(SYNTH_CONTEXT_NAMES)} planted insertables are supported")
    if n_relations > len(SYNTH_RELATION_NAMES):
        raise InvalidSpecError(f"at most {len(SYNTH_RELATION_NAMES)} planted relations are supported")
    rng = np.random.default_rng(seed)
    triples = []
    for i in range(n_insertable):
        for r in range(n_relations):
            triples.append(
                PlantedTriple(
                    subject=DEFAULT_INSERTABLE[i],
                    relation=SYNTH_RELATION_NAMES[r],
                    context=SYNTH_CONTEXT_NAMES[i],
                    gmm=_planted_gmm(rng, inside=(r == 0)),
                )
            )
    return SynthSpec(
        seed=seed,
        triples=tuple(triples),
        samples_per_triple=samples_per_triple,
        n_test_scenes=n_test_scenes,
        noise=noise,
        n_annotators=n_annotators,
    )


def _context_box(rng: np.random.Generator, width: int, height: int) -> BBox:
    w = rng.uniform(0.3, 0.5) * width
    h = rng.uniform(0.3, 0.5) * height
    x = rng.uniform(0.15 * width, 0.85 * width - w)
    y = rng.uniform(0.15 * height, 0.85 * height - h)
    return BBox(x, y, w, h)


def _draw_feature(gmm: GmmModel, rng: np.random.Generator) -> np.ndarray:
    while True:
        v = sample(gmm, 1, rng)[0]
        if v[2] > MIN_RATIO and v[3] > MIN_RATIO:
            return v


def _training_record(triple: PlantedTriple, index: int, spec: SynthSpec, rng: np.random.Generator) -> SceneGraphRecord:
    ctx = _context_box(rng, spec.width, spec.height)
    v = _draw_feature(triple.gmm, rng)
    subject = BBox(ctx.x + v[0] * ctx.w, ctx.y + v[1] * ctx.h, v[2] * ctx.w, v[3] * ctx.h)
    return SceneGraphRecord(
        image_id=f"train_{triple.subject}_{triple.relation}_{index:05d}".replace(" ", "-"),
        width=spec.width,
        height=spec.height,
        objects=(CorpusObject("1", triple.subject, subject), CorpusObject("2", triple.context, ctx)),
        relations=(CorpusRelation("1", triple.relation, "2"),),
    )


def _planted_region(triples: Sequence[PlantedTriple], ctx: BBox, width: int, height: int) -> RegionMask:
    """Pixels within two standard deviations of a planted box center."""
    px = np.arange(width) + 0.5
    py = np.arange(height) + 0.5
    mask = np.zeros((height, width), dtype=bool)
    for triple in triples:
        for comp in triple.gmm.components:
            m, c = comp.mean, comp.covariance
            cx = ctx.x + (m[0] + m[2] / 2) * ctx.w
            cy = ctx.y + (m[1] + m[3] / 2) * ctx.h
            sx = ctx.w * np.sqrt(c[0, 0] + c[0, 2] + c[2, 2] / 4)
            sy = ctx.h * np.sqrt(c[1, 1] + c[1, 3] + c[3, 3] / 4)
            mask |= ((px[None, :] - cx) / sx) ** 2 + ((py[:, None] - cy) / sy) ** 2 <= 4.0
    return RegionMask(mask)


def _planted_size(triples: Sequence[PlantedTriple], ctx: BBox) -> float:
    sizes = [
        sum(w * max(comp.mean[2] * ctx.w, comp.mean[3] * ctx.h) for w, comp in zip(t.gmm.weights, t.gmm.components))
        for t in triples
    ]
    return float(np.mean(sizes))


def gen_synthetic(spec: SynthSpec) -> SynthFixture:
    rng = np.random.default_rng(spec.seed)
    fixture = SynthFixture(spec)

    for triple in spec.triples:
        for s in range(spec.samples_per_triple):
            fixture.corpus.append(_training_record(triple, s, spec, rng))

    contexts = spec.contexts
    for n in range(spec.n_test_scenes):
        context = contexts[n % len(contexts)]
        category = spec.partner(context)
        image_id = f"scene_{n:04d}"
        ctx = _context_box(rng, spec.width, spec.height)
        scores = {name: float(spec.noise * rng.uniform()) for name in contexts}
        scores[context] = min(1.0, (1.0 - spec.noise) + scores[context])
        fixture.scenes.append(
            SceneDetections(
                image_id,
                spec.width,
                spec.height,
                (DetectedObject(ctx, tuple(scores[name] for name in contexts)),),
            )
        )
        fixture.planted_categories[image_id] = category

        planted = [t for t in spec.triples if t.subject == category and t.context == context]
        region = _planted_region(planted, ctx, spec.width, spec.height)
        size = _planted_size(planted, ctx)
        for a in range(spec.n_annotators):
            fixture.annotations.append(
                AnnotationRecord(
                    image_id=image_id,
                    annotator_id=f"a{a}",
                    category=category,
                    preference=2,
                    box_size=size * float(rng.uniform(0.95, 1.05)),
                    region=region,
                )
            )

    logger.info(
        f"Generated {len(fixture.corpus)} training images and {len(fixture.scenes)} test scenes (seed {spec.seed})"
    )
    return fixture


def _box_row(box: BBox, height: int) -> list[float]:
    return [float(v) for v in to_topleft_coords(box, height)]


def write_fixture(fixture: SynthFixture, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = fixture.spec
    contexts = spec.contexts

    write_jsonl(
        out / "corpus.jsonl",
        (
            {
                "image_id": rec.image_id,
                "width": rec.width,
                "height": rec.height,
                "objects": [
                    {"object_id": o.object_id, "category": o.category, "box": _box_row(o.box, rec.height)}
                    for o in rec.objects
                ],
                "relations": [
                    {"subject": r.subject, "predicate": r.predicate, "object": r.object} for r in rec.relations
                ],
            }
            for rec in fixture.corpus
        ),
    )
    write_jsonl(
        out / "detections.jsonl",
        (
            {
                "image_id": scene.image_id,
                "width": scene.width,
                "height": scene.height,
                "detections": [
                    {"box": _box_row(d.box, scene.height), "scores": dict(zip(contexts, d.scores))}
                    for d in scene.detections
                ],
            }
            for scene in fixture.scenes
        ),
    )

    rows = []
    written: set[str] = set()
    for rec in fixture.annotations:
        mask_name = f"masks/{rec.image_id}__{rec.category}.pgm"
        if mask_name not in written and rec.region is not None:
            write_mask(out / mask_name, rec.region)
            written.add(mask_name)
        rows.append(
            {
                "image_id": rec.image_id,
                "annotator_id": rec.annotator_id,
                "category": rec.category,
                "preference": rec.preference,
                "box_size": rec.box_size,
                "region": mask_name,
            }
        )
    write_jsonl(out / "annotations.jsonl", rows)

    planted = {
        "seed": spec.seed,
        "insertable": list(spec.insertable),
        "contexts": list(contexts),
        "relations": list(spec.relations),
        "scenes": dict(sorted(fixture.planted_categories.items())),
        "triples": [{"key": list(t.key), **t.gmm.to_dict()} for t in spec.triples],
    }
    (out / "planted.json").write_text(json.dumps(planted, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote synthetic fixture to {out}")
    return out


__all__ = [
    "PlantedTriple",
    "SynthFixture",
    "SynthSpec",
    "default_spec",
    "gen_synthetic",
    "write_fixture",
]
