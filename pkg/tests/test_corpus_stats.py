import pytest

from context_insert.corpus_stats import (
    CorpusAccumulator,
    CorpusObject,
    CorpusRelation,
    CountTables,
    SceneGraphRecord,
    build_counts,
    collect_triple_samples,
    conditional_cooccurrence,
    relation_ratio,
    select_vocabulary,
)
from context_insert.errors import DataValidationError, EmptyCorpusError
from context_insert.scene_model import BBox, Vocabulary, pair_feature


def record(image_id, objects, relations=()):
    return SceneGraphRecord(
        image_id=image_id,
        width=100,
        height=100,
        objects=tuple(CorpusObject(oid, cat, BBox(*box)) for oid, cat, box in objects),
        relations=tuple(CorpusRelation(*rel) for rel in relations),
    )


@pytest.fixture
def two_image_corpus():
    return [
        record(
            "img1",
            [("1", "wall", (0, 50, 100, 50)), ("2", "table", (10, 0, 50, 30)), ("3", "clock", (40, 70, 10, 10))],
            [("3", "on", "1")],
        ),
        record("img2", [("1", "table", (0, 0, 40, 20))]),
    ]


def test_select_vocabulary_tie_goes_to_the_lexicographically_first(two_image_corpus):
    vocab = select_vocabulary(two_image_corpus, ["clock"], top_context=1, top_relations=1)
    assert vocab.context == ("table",)
    assert vocab.relations == ("on",)
    assert vocab.insertable == ("clock",)


def test_select_vocabulary_orders_by_count(two_image_corpus):
    extra = record(
        "img3",
        [("1", "wall", (0, 0, 10, 10)), ("2", "clock", (0, 0, 2, 2))],
        [("2", "near", "1")],
    )
    vocab = select_vocabulary(two_image_corpus + [extra], ["clock"], top_context=5, top_relations=5)
    assert vocab.context == ("wall", "table", "clock")
    assert vocab.relations == ("near", "on")


def test_select_vocabulary_on_empty_corpus():
    with pytest.raises(EmptyCorpusError):
        select_vocabulary([], ["clock"], 20, 10)


def test_select_vocabulary_without_relations():
    with pytest.raises(EmptyCorpusError):
        select_vocabulary([record("a", [("1", "wall", (0, 0, 1, 1))])], ["clock"], 20, 10)


def test_counts_by_hand():
    vocab = Vocabulary(insertable=("clock",), context=("wall",), relations=("on",))
    corpus = [
        record(
            "a",
            [("1", "wall", (0, 0, 50, 50)), ("2", "wall", (50, 0, 50, 50)), ("3", "clock", (10, 10, 5, 5))],
            [("3", "on", "1")],
        )
    ]
    counts = build_counts(corpus, vocab)
    assert counts.cat("wall") == 2
    assert counts.cat("clock") == 1
    assert counts.pair("clock", "wall") == 1
    assert counts.pair("wall", "clock") == 1
    assert counts.triple("clock", "on", "wall") == 1


def test_self_cooccurrence_needs_two_instances():
    vocab = Vocabulary(insertable=("clock",), context=("wall",), relations=("on",))
    one = record("a", [("1", "wall", (0, 0, 5, 5))])
    two = record("b", [("1", "wall", (0, 0, 5, 5)), ("2", "wall", (5, 0, 5, 5))])
    assert build_counts([one], vocab).pair("wall", "wall") == 0
    assert build_counts([one, two], vocab).pair("wall", "wall") == 1


def test_pair_counts_are_per_image():
    vocab = Vocabulary(insertable=("cup",), context=("table",), relations=("on",))
    corpus = [
        record("a", [("1", "cup", (0, 0, 1, 1)), ("2", "cup", (2, 0, 1, 1)), ("3", "table", (0, 0, 9, 9))]),
        record("b", [("1", "cup", (0, 0, 1, 1)), ("2", "table", (0, 0, 9, 9)), ("3", "table", (0, 0, 8, 8))]),
    ]
    counts = build_counts(corpus, vocab)
    assert counts.pair("cup", "table") == 2
    assert counts.cat("cup") == 3


def test_corpus_without_relations_has_no_triples():
    vocab = Vocabulary(insertable=("cup",), context=("table",), relations=("on",))
    counts = build_counts([record("a", [("1", "cup", (0, 0, 1, 1)), ("2", "table", (0, 0, 9, 9))])], vocab)
    assert counts.count_triple == {}


def test_single_relation_gives_one_sample():
    vocab = Vocabulary(insertable=("clock",), context=("wall",), relations=("on",))
    b1, b2 = (40, 70, 10, 10), (0, 50, 100, 50)
    corpus = [record("a", [("1", "clock", b1), ("2", "wall", b2)], [("1", "on", "2")])]
    samples = collect_triple_samples(corpus, vocab)
    assert list(samples) == [("clock", "on", "wall")]
    assert samples[("clock", "on", "wall")].features == (pair_feature(BBox(*b1), BBox(*b2)),)


def test_relation_outside_vocabulary_is_ignored():
    vocab = Vocabulary(insertable=("clock",), context=("wall",), relations=("on",))
    corpus = [record("a", [("1", "clock", (1, 1, 1, 1)), ("2", "wall", (0, 0, 9, 9))], [("1", "above", "2")])]
    assert collect_triple_samples(corpus, vocab) == {}
    assert build_counts(corpus, vocab).count_triple == {}


def test_dangling_relation_skips_the_record():
    vocab = Vocabulary(insertable=("clock",), context=("wall",), relations=("on",))
    bad = record("a", [("1", "clock", (1, 1, 1, 1))], [("1", "on", "7")])
    with pytest.raises(DataValidationError):
        bad.validate()
    acc = CorpusAccumulator(vocab)
    assert acc.add(bad) is False
    assert acc.skipped == 1
    assert acc.counts().count_cat == {}


def test_duplicate_object_id_is_invalid():
    with pytest.raises(DataValidationError):
        record("a", [("1", "clock", (1, 1, 1, 1)), ("1", "wall", (0, 0, 9, 9))]).validate()


def test_merged_shards_match_a_single_pass(two_image_corpus):
    vocab = Vocabulary(insertable=("clock",), context=("table", "wall"), relations=("on",))
    whole = CorpusAccumulator(vocab).add_all(two_image_corpus)
    merged = CorpusAccumulator(vocab).add_all(two_image_corpus[:1]).merge(
        CorpusAccumulator(vocab).add_all(two_image_corpus[1:])
    )
    assert merged.counts() == whole.counts()
    assert merged.samples() == whole.samples()
    assert merged.records == 2


def test_count_ratios():
    counts = CountTables(
        count_cat={"wall": 4},
        count_pair={("clock", "wall"): 2},
        count_triple={("clock", "on", "wall"): 1},
    )
    assert conditional_cooccurrence(counts, "clock", "wall") == 0.5
    assert relation_ratio(counts, "clock", "on", "wall") == 0.25
    assert relation_ratio(counts, "clock", "on", "table") == 0.0


def test_count_tables_serialize_tuple_keys(counts):
    data = counts.to_dict()
    assert ["clock", "on", "wall", 5] in data["count_triple"]
    assert CountTables.from_dict(data) == counts
