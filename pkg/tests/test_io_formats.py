import json

import numpy as np
import pytest

from context_insert.errors import ContractViolationError, DataValidationError, UnknownCategoryError
from context_insert.io_formats import (
    IngestReport,
    heatmap_sidecar,
    load_annotations,
    load_corpus,
    load_detections,
    read_heatmap,
    read_mask,
    read_pgm,
    write_heatmap,
    write_jsonl,
    write_mask,
    write_pgm,
)
from context_insert.metrics import RegionMask
from context_insert.scene_model import BBox
from context_insert.scorer import Heatmap


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_detection_line_converts_coordinates(tmp_path, vocab):
    path = write_lines(
        tmp_path / "det.jsonl",
        ['{"image_id":"a","width":640,"height":480,"detections":[{"box":[10,20,30,40],"scores":{"wall":0.9}}]}'],
    )
    scenes = load_detections(path, vocab)
    assert len(scenes) == 1
    det = scenes[0].detections[0]
    assert det.box == BBox(10, 420, 30, 40)
    assert det.scores == (0.0, 0.9)


def test_empty_file_is_an_empty_stream(tmp_path, vocab):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    assert load_detections(path, vocab) == []
    assert load_corpus(path) == []
    assert load_annotations(path) == []


def test_truncated_json_names_the_line(tmp_path):
    good = '{"image_id":"a","width":10,"height":10}'
    path = write_lines(tmp_path / "corpus.jsonl", [good, good.replace('"a"', '"b"'), '{"image_id": "c", "wid'])
    with pytest.raises(DataValidationError) as info:
        load_corpus(path)
    assert info.value.line == 3
    assert info.value.to_dict()["line"] == 3


def test_unknown_category_strict_and_lenient(tmp_path, vocab):
    path = write_lines(
        tmp_path / "det.jsonl",
        ['{"image_id":"a","width":64,"height":64,"detections":[{"box":[0,0,8,8],"scores":{"lamp":0.7,"wall":0.2}}]}'],
    )
    with pytest.raises(UnknownCategoryError) as info:
        load_detections(path, vocab, strict=True)
    assert info.value.line == 1

    report = IngestReport()
    scenes = load_detections(path, vocab, report=report)
    assert scenes[0].detections[0].scores == (0.0, 0.2)
    assert report.reasons["unknown_category"] == 1
    assert report.kept == 1


def test_detection_boxes_are_clamped(tmp_path, vocab):
    path = write_lines(
        tmp_path / "det.jsonl",
        ['{"image_id":"a","width":100,"height":100,"detections":[{"box":[-10,90,50,20],"scores":{"wall":0.9}}]}'],
    )
    assert load_detections(path, vocab)[0].detections[0].box == BBox(0, 0, 40, 10)


def test_duplicate_image_ids_are_rejected(tmp_path, vocab):
    line = '{"image_id":"a","width":10,"height":10,"detections":[]}'
    path = write_lines(tmp_path / "det.jsonl", [line, line])
    report = IngestReport()
    assert len(load_detections(path, vocab, report=report)) == 1
    assert report.skipped == 1
    with pytest.raises(DataValidationError):
        load_detections(path, vocab, strict=True)


def test_scores_outside_unit_interval(tmp_path, vocab):
    path = write_lines(
        tmp_path / "det.jsonl",
        ['{"image_id":"a","width":10,"height":10,"detections":[{"box":[0,0,2,2],"scores":{"wall":1.5}}]}'],
    )
    with pytest.raises(DataValidationError):
        load_detections(path, vocab, strict=True)


def test_corpus_loader(tmp_path):
    rows = [
        {
            "image_id": "vg_1",
            "width": 100,
            "height": 80,
            "objects": [
                {"object_id": 1, "category": "clock", "box": [40, 10, 10, 10]},
                {"object_id": 2, "category": "wall", "box": [0, 0, 100, 40]},
            ],
            "relations": [{"subject": 1, "predicate": "on", "object": 2}],
        },
        {
            "image_id": "vg_2",
            "width": 100,
            "height": 80,
            "objects": [{"object_id": "1", "category": "clock", "box": [0, 0, 5, 5]}],
            "relations": [{"subject": "1", "predicate": "on", "object": "9"}],
        },
    ]
    write_jsonl(tmp_path / "corpus.jsonl", rows)
    report = IngestReport()
    records = load_corpus(tmp_path / "corpus.jsonl", report=report)
    assert [r.image_id for r in records] == ["vg_1"]
    clock = records[0].objects_by_id()["1"]
    assert clock.box == BBox(40, 60, 10, 10)
    assert report.to_dict()["skipped"] == 1

    with pytest.raises(DataValidationError) as info:
        load_corpus(tmp_path / "corpus.jsonl", strict=True)
    assert info.value.line == 2


def test_missing_file(tmp_path):
    with pytest.raises(DataValidationError):
        load_corpus(tmp_path / "nope.jsonl")


def test_annotations_resolve_masks_next_to_the_file(tmp_path, vocab):
    bitmap = np.zeros((4, 6), dtype=bool)
    bitmap[0, :3] = True
    write_mask(tmp_path / "masks" / "a.pgm", RegionMask(bitmap))
    write_jsonl(
        tmp_path / "ann.jsonl",
        [
            {"image_id": "a", "annotator_id": "u1", "category": "clock", "preference": 2, "box_size": 12,
             "region": "masks/a.pgm"},
            {"image_id": "a", "annotator_id": "u2", "category": "cup", "preference": 1, "box_size": 8},
        ],
    )
    records = load_annotations(tmp_path / "ann.jsonl", vocab)
    assert [r.category for r in records] == ["clock", "cup"]
    np.testing.assert_array_equal(records[0].region.bitmap, bitmap)
    assert records[1].region is None


def test_annotation_preference_must_be_one_or_two(tmp_path):
    write_jsonl(
        tmp_path / "ann.jsonl",
        [{"image_id": "a", "annotator_id": "u1", "category": "clock", "preference": 3, "box_size": 12}],
    )
    with pytest.raises(DataValidationError):
        load_annotations(tmp_path / "ann.jsonl", strict=True)
    assert load_annotations(tmp_path / "ann.jsonl") == []


def test_annotation_with_unknown_category(tmp_path, vocab):
    write_jsonl(
        tmp_path / "ann.jsonl",
        [{"image_id": "a", "annotator_id": "u1", "category": "lamp", "preference": 2, "box_size": 12}],
    )
    with pytest.raises(UnknownCategoryError):
        load_annotations(tmp_path / "ann.jsonl", vocab, strict=True)


def test_mask_rows_are_flipped_on_disk(tmp_path):
    bitmap = np.zeros((3, 2), dtype=bool)
    bitmap[0, 0] = True     # bottom-left pixel
    write_mask(tmp_path / "m.pgm", RegionMask(bitmap))
    on_disk = read_pgm(tmp_path / "m.pgm")
    assert on_disk[2, 0] == 255 and on_disk.sum() == 255
    np.testing.assert_array_equal(read_mask(tmp_path / "m.pgm").bitmap, bitmap)


def test_pgm_header_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n3 1\n255\n" + bytes([0, 128, 255]))
    np.testing.assert_array_equal(read_pgm(path), [[0, 128, 255]])


def test_non_image_and_16_bit_files_are_rejected(tmp_path):
    (tmp_path / "t.pgm").write_text("not an image", encoding="utf-8")
    with pytest.raises(DataValidationError):
        read_pgm(tmp_path / "t.pgm")
    (tmp_path / "w.pgm").write_bytes(b"P5\n2 1\n65535\n" + bytes(4))
    with pytest.raises(DataValidationError):
        read_pgm(tmp_path / "w.pgm")


def test_written_pgm_is_binary_graymap(tmp_path):
    write_pgm(tmp_path / "g.pgm", np.array([[0, 7], [200, 255]]))
    data = (tmp_path / "g.pgm").read_bytes()
    assert data.startswith(b"P5")
    assert data.endswith(bytes([0, 7, 200, 255]))
    np.testing.assert_array_equal(read_pgm(tmp_path / "g.pgm"), [[0, 7], [200, 255]])


def test_short_pgm_is_rejected(tmp_path):
    path = tmp_path / "s.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(DataValidationError):
        read_pgm(path)


def test_write_pgm_needs_a_2d_array(tmp_path):
    with pytest.raises(ContractViolationError):
        write_pgm(tmp_path / "x.pgm", np.zeros(4))


def test_heatmap_is_max_scaled(tmp_path):
    write_heatmap(Heatmap(np.array([[0.0, 0.5]]), "cup", "a"), tmp_path / "h.pgm")
    np.testing.assert_array_equal(read_pgm(tmp_path / "h.pgm"), [[0, 255]])
    meta = json.loads(heatmap_sidecar(tmp_path / "h.pgm").read_text())
    assert meta["max"] == 0.5
    assert meta["scale"] == pytest.approx(0.5 / 255)
    assert (meta["width"], meta["height"]) == (2, 1)


def test_all_zero_heatmap(tmp_path):
    write_heatmap(Heatmap(np.zeros((3, 4)), "cup", "a"), tmp_path / "z.pgm")
    assert not read_pgm(tmp_path / "z.pgm").any()
    assert json.loads(heatmap_sidecar(tmp_path / "z.pgm").read_text())["scale"] == 0.0


def test_heatmap_quantization_bound(tmp_path):
    raster = np.random.default_rng(6).random((12, 9))
    write_heatmap(Heatmap(raster, "cup", "a"), tmp_path / "q.pgm")
    decoded = read_heatmap(tmp_path / "q.pgm")
    assert decoded.raster.shape == raster.shape
    assert (decoded.image_id, decoded.category) == ("a", "cup")
    error = np.abs(decoded.raster / raster.max() - raster / raster.max())
    assert error.max() <= 1 / 255


def test_empty_heatmap_cannot_be_written(tmp_path):
    with pytest.raises(ContractViolationError):
        write_heatmap(Heatmap(np.zeros((0, 0)), "cup", "a"), tmp_path / "e.pgm")
