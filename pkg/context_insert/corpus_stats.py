from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from loguru import logger

from .errors import DataValidationError, EmptyCorpusError
from .scene_model import BBox, PairFeature, Vocabulary, pair_feature

TripleKey = tuple[str, str, str]    # (insertable C, relation r, context Cj)


@dataclass(frozen=True)
class CorpusObject:
    object_id: str
    category: str
    box: BBox


@dataclass(frozen=True)
class CorpusRelation:
    subject: str
    predicate: str
    object: str


@dataclass(frozen=True)
class SceneGraphRecord:
    image_id: str
    width: int
    height: int
    objects: tuple[CorpusObject, ...] = ()
    relations: tuple[CorpusRelation, ...] = ()

    def objects_by_id(self) -> dict[str, CorpusObject]:
        return {o.object_id: o for o in self.objects}

    def validate(self) -> None:
        ids = self.objects_by_id()
        if len(ids) != len(self.objects):
            raise DataValidationError(f"image {self.image_id} repeats an object_id")
        for rel in self.relations:
            for endpoint in (rel.subject, rel.object):
                if endpoint not in ids:
                    raise DataValidationError(
                        f"image {self.image_id}: relation '{rel.predicate}' references missing object_id {endpoint}"
                    )


@dataclass
class CountTables:
    count_cat: dict[str, int] = field(default_factory=dict)
    count_pair: dict[tuple[str, str], int] = field(default_factory=dict)
    count_triple: dict[TripleKey, int] = field(default_factory=dict)

    def cat(self, c: str) -> int:
        return self.count_cat.get(c, 0)

    def pair(self, c: str, cj: str) -> int:
        return self.count_pair.get((c, cj), 0)

    def triple(self, c: str, r: str, cj: str) -> int:
        return self.count_triple.get((c, r, cj), 0)

    def to_dict(self) -> dict:
        return {
            "count_cat": {k: v for k, v in sorted(self.count_cat.items())},
            "count_pair": [[a, b, n] for (a, b), n in sorted(self.count_pair.items())],
            "count_triple": [[c, r, cj, n] for (c, r, cj), n in sorted(self.count_triple.items())],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CountTables":
        return cls(
            count_cat={str(k): int(v) for k, v in data["count_cat"].items()},
            count_pair={(str(a), str(b)): int(n) for a, b, n in data["count_pair"]},
            count_triple={(str(c), str(r), str(cj)): int(n) for c, r, cj, n in data["count_triple"]},
        )


def conditional_cooccurrence(counts: CountTables, c: str, cj: str) -> float:
    """P(C | Cj) approximated as count(C, Cj) / count(Cj)."""
    denom = counts.cat(cj)
    return counts.pair(c, cj) / denom if denom else 0.0


def relation_ratio(counts: CountTables, c: str, r: str, cj: str) -> float:
    """count(C, r, Cj) / count(Cj), the count factor that survives in the joint model."""
    denom = counts.cat(cj)
    return counts.triple(c, r, cj) / denom if denom else 0.0


@dataclass(frozen=True)
class TripleSamples:
    key: TripleKey
    features: tuple[PairFeature, ...]

    def as_array(self) -> np.ndarray:
        return np.asarray([f.v for f in self.features], dtype=float).reshape(-1, 4)


def _image_pairs(instances: Counter) -> Iterable[tuple[str, str]]:
    """Ordered category pairs co-occurring in one image.

    A category co-occurs with itself only when the image holds two instances.
    """
    present = sorted(instances)
    for a in present:
        for b in present:
            if a != b or instances[a] >= 2:
                yield a, b


class CorpusAccumulator:
    """Fold state over scene-graph records for a fixed vocabulary."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.categories = set(vocab.insertable) | set(vocab.context)
        self.count_cat: Counter = Counter()
        self.count_pair: Counter = Counter()
        self.count_triple: Counter = Counter()
        self.features: dict[TripleKey, list[tuple[float, float, float, float]]] = defaultdict(list)
        self.records = 0
        self.skipped = 0

    def add(self, record: SceneGraphRecord) -> bool:
        try:
            record.validate()
        except DataValidationError as ex:
            self.skipped += 1
            logger.warning(f"Skipping record: {ex}")
            return False

        self.records += 1
        instances = Counter(o.category for o in record.objects if o.category in self.categories)
        self.count_cat.update(instances)
        self.count_pair.update(_image_pairs(instances))

        objects = record.objects_by_id()
        for rel in record.relations:
            subject = objects[rel.subject]
            obj = objects[rel.object]
            if not (
                self.vocab.is_insertable(subject.category)
                and self.vocab.is_relation(rel.predicate)
                and self.vocab.is_context(obj.category)
            ):
                continue
            key = (subject.category, rel.predicate, obj.category)
            self.count_triple[key] += 1
            self.features[key].append(pair_feature(subject.box, obj.box).v)
        return True

    def add_all(self, corpus: Iterable[SceneGraphRecord]) -> "CorpusAccumulator":
        for record in corpus:
            self.add(record)
        if self.skipped:
            logger.warning(f"Skipped {self.skipped} malformed corpus records")
        return self

    def merge(self, other: "CorpusAccumulator") -> "CorpusAccumulator":
        if other.vocab != self.vocab:
            raise ValueError("cannot merge accumulators built for different vocabularies")
        self.count_cat.update(other.count_cat)
        self.count_pair.update(other.count_pair)
        self.count_triple.update(other.count_triple)
        for key, feats in other.features.items():
            self.features[key].extend(feats)
        self.records += other.records
        self.skipped += other.skipped
        return self

    def counts(self) -> CountTables:
        return CountTables(
            count_cat=dict(sorted(self.count_cat.items())),
            count_pair=dict(sorted(self.count_pair.items())),
            count_triple=dict(sorted(self.count_triple.items())),
        )

    def samples(self) -> dict[TripleKey, TripleSamples]:
        return {
            key: TripleSamples(key, tuple(PairFeature(v) for v in feats))
            for key, feats in sorted(self.features.items())
            if feats
        }


def select_vocabulary(
    corpus: Iterable[SceneGraphRecord],
    insertable: Sequence[str],
    top_context: int,
    top_relations: int,
) -> Vocabulary:
    if not insertable:
        raise ValueError("insertable categories must not be empty")
    if top_context < 1 or top_relations < 1:
        raise ValueError("top_context and top_relations must be at least 1")

    insertable_set = set(insertable)
    cooccurrence: Counter = Counter()
    relation_counts: Counter = Counter()
    n_records = 0

    for record in corpus:
        try:
            record.validate()
        except DataValidationError as ex:
            logger.warning(f"Skipping record: {ex}")
            continue
        n_records += 1

        instances = Counter(o.category for o in record.objects)
        for category in instances:
            cooccurrence[category] += 0
        for a, b in _image_pairs(instances):
            if a in insertable_set:
                cooccurrence[b] += 1

        objects = record.objects_by_id()
        for rel in record.relations:
            relation_counts[rel.predicate] += 0
            if objects[rel.subject].category in insertable_set:
                relation_counts[rel.predicate] += 1

    if n_records == 0:
        raise EmptyCorpusError("corpus holds no usable records")
    if not relation_counts:
        raise EmptyCorpusError("corpus holds no relation annotations")

    def ranked(counter: Counter, n: int) -> list[str]:
        return [name for name, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:n]]

    vocab = Vocabulary(
        insertable=tuple(insertable),
        context=tuple(ranked(cooccurrence, top_context)),
        relations=tuple(ranked(relation_counts, top_relations)),
    )
    logger.info(
        f"Vocabulary from {n_records} records: {len(vocab.insertable)} insertable, "
        f"{len(vocab.context)} context, {len(vocab.relations)} relations"
    )
    return vocab


def build_counts(corpus: Iterable[SceneGraphRecord], vocab: Vocabulary) -> CountTables:
    return CorpusAccumulator(vocab).add_all(corpus).counts()


def collect_triple_samples(corpus: Iterable[SceneGraphRecord], vocab: Vocabulary) -> dict[TripleKey, TripleSamples]:
    return CorpusAccumulator(vocab).add_all(corpus).samples()


__all__ = [
    "CorpusAccumulator",
    "CorpusObject",
    "CorpusRelation",
    "CountTables",
    "SceneGraphRecord",
    "TripleKey",
    "TripleSamples",
    "build_counts",
    "collect_triple_samples",
    "conditional_cooccurrence",
    "relation_ratio",
    "select_vocabulary",
]
