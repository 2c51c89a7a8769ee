"""Dataset loaders and heatmap export. Rasters are flipped to top-row-first on disk."""

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np
from loguru import logger
from PIL import Image
from pydantic import ValidationError

from .corpus_stats import CorpusObject, CorpusRelation, SceneGraphRecord
from .errors import (
    ContextInsertError,
    ContractViolationError,
    DataValidationError,
    InvalidGeometryError,
    UnknownCategoryError,
)
from .metrics import AnnotationRecord, RegionMask
from .scene_model import DetectedObject, SceneDetections, Vocabulary, clamp_box, to_internal_coords
from .schemas import AnnotationLine, CorpusLine, DetectionLine
from .scorer import Heatmap


@dataclass
class IngestReport:
    path: str = ""
    read: int = 0
    kept: int = 0
    skipped: int = 0
    reasons: Counter = field(default_factory=Counter)

    def skip(self, reason: str, ex: Exception) -> None:
        self.skipped += 1
        self.reasons[reason] += 1
        logger.warning(f"Skipping in {self.path}: {ex}")

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "read": self.read,
            "kept": self.kept,
            "skipped": self.skipped,
            "reasons": dict(sorted(self.reasons.items())),
        }


def _iter_json_lines(path: Path) -> Iterator[tuple[int, Any]]:
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as ex:
                raise DataValidationError(f"invalid JSON: {ex.msg}", path=str(path), line=lineno) from ex


def _parse(model, obj: Any, path: Path, lineno: int):
    try:
        return model.model_validate(obj)
    except ValidationError as ex:
        first = ex.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise DataValidationError(f"{loc}: {first['msg']}", path=str(path), line=lineno) from ex


def _open(path: str | Path, report: IngestReport | None) -> tuple[Path, IngestReport]:
    path = Path(path)
    if not path.exists():
        raise DataValidationError("no such file", path=str(path))
    report = report if report is not None else IngestReport()
    report.path = str(path)
    return path, report


def _located(ex: ContextInsertError, path: Path, lineno: int) -> DataValidationError:
    if isinstance(ex, DataValidationError) and ex.line is not None:
        return ex
    cls = UnknownCategoryError if isinstance(ex, UnknownCategoryError) else DataValidationError
    return cls(str(ex), path=str(path), line=lineno)


def _corpus_record(line: CorpusLine) -> SceneGraphRecord:
    record = SceneGraphRecord(
        image_id=line.image_id,
        width=line.width,
        height=line.height,
        objects=tuple(
            CorpusObject(o.object_id, o.category, to_internal_coords(o.box, line.height)) for o in line.objects
        ),
        relations=tuple(CorpusRelation(r.subject, r.predicate, r.object) for r in line.relations),
    )
    record.validate()
    return record


def load_corpus(path: str | Path, strict: bool = False, report: IngestReport | None = None) -> list[SceneGraphRecord]:
    path, report = _open(path, report)
    records = []
    for lineno, obj in _iter_json_lines(path):
        report.read += 1
        try:
            records.append(_corpus_record(_parse(CorpusLine, obj, path, lineno)))
            report.kept += 1
        except (DataValidationError, InvalidGeometryError) as ex:
            located = _located(ex, path, lineno)
            if strict:
                raise located from ex
            report.skip(type(ex).__name__, located)
    logger.info(f"Loaded {report.kept} corpus records from {path} ({report.skipped} skipped)")
    return records


def _detected_object(entry, line: DetectionLine, vocab: Vocabulary, strict: bool, report: IngestReport) -> DetectedObject:
    scores = [0.0] * len(vocab.context)
    for name, score in entry.scores.items():
        if not vocab.is_context(name):
            ex = UnknownCategoryError(f"unknown context category {name!r} in {line.image_id}")
            if strict:
                raise ex
            report.reasons["unknown_category"] += 1
            continue
        scores[vocab.context_index(name)] = score
    box = clamp_box(to_internal_coords(entry.box, line.height), line.width, line.height)
    return DetectedObject(box, tuple(scores))


def load_detections(
    path: str | Path,
    vocab: Vocabulary,
    strict: bool = False,
    report: IngestReport | None = None,
) -> list[SceneDetections]:
    path, report = _open(path, report)
    scenes: list[SceneDetections] = []
    seen: set[str] = set()
    for lineno, obj in _iter_json_lines(path):
        report.read += 1
        try:
            line = _parse(DetectionLine, obj, path, lineno)
            if line.image_id in seen:
                raise DataValidationError(f"duplicate image_id {line.image_id}")
            detections = []
            for entry in line.detections:
                try:
                    detections.append(_detected_object(entry, line, vocab, strict, report))
                except InvalidGeometryError as ex:
                    if strict:
                        raise
                    report.reasons["invalid_geometry"] += 1
                    logger.warning(f"Dropping detection in {line.image_id}: {ex}")
            scenes.append(SceneDetections(line.image_id, line.width, line.height, tuple(detections)))
            seen.add(line.image_id)
            report.kept += 1
        except (DataValidationError, InvalidGeometryError) as ex:
            located = _located(ex, path, lineno)
            if strict:
                raise located from ex
            report.skip(type(ex).__name__, located)
    logger.info(f"Loaded {report.kept} scenes from {path} ({report.skipped} skipped)")
    return scenes


def load_annotations(
    path: str | Path,
    vocab: Vocabulary | None = None,
    strict: bool = False,
    report: IngestReport | None = None,
) -> list[AnnotationRecord]:
    path, report = _open(path, report)
    records = []
    for lineno, obj in _iter_json_lines(path):
        report.read += 1
        try:
            line = _parse(AnnotationLine, obj, path, lineno)
            if vocab is not None and not vocab.is_insertable(line.category):
                raise UnknownCategoryError(f"unknown insertable category {line.category!r}")
            region = read_mask(path.parent / line.region) if line.region else None
            records.append(
                AnnotationRecord(
                    image_id=line.image_id,
                    annotator_id=line.annotator_id,
                    category=line.category,
                    preference=line.preference,
                    box_size=line.box_size,
                    region=region,
                )
            )
            report.kept += 1
        except DataValidationError as ex:
            located = _located(ex, path, lineno)
            if strict:
                raise located from ex
            report.skip(type(ex).__name__, located)
    logger.info(f"Loaded {report.kept} annotations from {path} ({report.skipped} skipped)")
    return records


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


PGM_MODES = ("L", "1")


def read_pgm(path: str | Path) -> np.ndarray:
    """8-bit grayscale image as an array whose first row is the top of the image."""
    path = Path(path)
    if not path.exists():
        raise DataValidationError("no such file", path=str(path))
    try:
        with Image.open(path) as image:
            image.load()
            mode = image.mode
            pixels = np.array(image.convert("L"), dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as ex:
        raise DataValidationError(f"unreadable image: {ex}", path=str(path)) from ex
    if mode not in PGM_MODES:
        raise DataValidationError(f"expected an 8-bit grayscale image, got mode {mode}", path=str(path))
    return pixels


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.size == 0:
        raise ContractViolationError(f"cannot write a PGM from shape {pixels.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.clip(pixels, 0, 255).astype(np.uint8)).save(path, format="PPM")


def read_mask(path: str | Path) -> RegionMask:
    return RegionMask(np.flipud(read_pgm(path) > 0))


def write_mask(path: str | Path, mask: RegionMask) -> None:
    write_pgm(path, np.flipud(mask.bitmap).astype(np.uint8) * 255)


def heatmap_sidecar(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def write_heatmap(h: Heatmap, path: str | Path) -> Path:
    """Writes the heatmap as a max-scaled 8-bit PGM plus a JSON sidecar; returns the sidecar path."""
    if h.raster.size == 0:
        raise ContractViolationError("cannot export an empty heatmap")
    peak = float(h.raster.max())
    pixels = np.zeros(h.raster.shape, dtype=np.uint8)
    if peak > 0:
        pixels = np.rint(h.raster / peak * 255).astype(np.uint8)
    write_pgm(path, np.flipud(pixels))
    sidecar = heatmap_sidecar(path)
    sidecar.write_text(
        json.dumps(
            {
                "image_id": h.image_id,
                "category": h.category,
                "width": h.width,
                "height": h.height,
                "max": peak,
                "scale": peak / 255,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return sidecar


def read_heatmap(path: str | Path) -> Heatmap:
    meta = json.loads(heatmap_sidecar(path).read_text(encoding="utf-8"))
    raster = np.flipud(read_pgm(path)).astype(float) * meta["scale"]
    return Heatmap(raster, meta["category"], meta["image_id"])


__all__ = [
    "IngestReport",
    "heatmap_sidecar",
    "load_annotations",
    "load_corpus",
    "load_detections",
    "read_heatmap",
    "read_mask",
    "read_pgm",
    "write_heatmap",
    "write_jsonl",
    "write_mask",
    "write_pgm",
]
