"""Line schemas for the JSON Lines datasets.

Boxes are [x, y, w, h] with the top-left origin and y pointing down.

corpus.jsonl
    {"image_id": "vg_1", "width": 640, "height": 480,
     "objects": [{"object_id": 1, "category": "clock", "box": [10, 20, 30, 30]}, ...],
     "relations": [{"subject": 1, "predicate": "on", "object": 2}, ...]}

detections.jsonl
    {"image_id": "a", "width": 640, "height": 480,
     "detections": [{"box": [10, 20, 30, 40], "scores": {"wall": 0.9, "table": 0.05}}]}

annotations.jsonl
    {"image_id": "a", "annotator_id": "u1", "category": "clock", "preference": 2,
     "box_size": 64, "region": "masks/a__u1__clock.pgm"}
"""

from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

Box = Annotated[list[float], Field(min_length=4, max_length=4)]
Identifier = Annotated[str, Field(min_length=1)]


class _Line(BaseModel):
    model_config = ConfigDict(extra="ignore", allow_inf_nan=False, coerce_numbers_to_str=True)


class CorpusObjectLine(_Line):
    object_id: Identifier
    category: Identifier
    box: Box


class CorpusRelationLine(_Line):
    subject: Identifier
    predicate: Identifier
    object: Identifier


class CorpusLine(_Line):
    image_id: Identifier
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    objects: list[CorpusObjectLine] = Field(default_factory=list)
    relations: list[CorpusRelationLine] = Field(default_factory=list)


class DetectionEntryLine(_Line):
    box: Box
    scores: dict[str, float]

    @field_validator("scores")
    @classmethod
    def scores_are_probabilities(cls, value: dict[str, float]) -> dict[str, float]:
        for name, score in value.items():
            if not (0.0 <= score <= 1.0):
                raise ValueError(f"score for {name!r} is {score}, outside [0, 1]")
        return value


class DetectionLine(_Line):
    image_id: Identifier
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    detections: list[DetectionEntryLine] = Field(default_factory=list)


class AnnotationLine(_Line):
    image_id: Identifier
    annotator_id: Identifier
    category: Identifier
    preference: Literal[1, 2]
    box_size: float = Field(gt=0)
    region: str | None = None


__all__ = [
    "AnnotationLine",
    "CorpusLine",
    "CorpusObjectLine",
    "CorpusRelationLine",
    "DetectionEntryLine",
    "DetectionLine",
]
