import hashlib
import json
from dataclasses import asdict
from pathlib import Path

from loguru import logger

from .config import MODEL_FORMAT_VERSION
from .corpus_stats import CountTables
from .errors import ContextInsertError, CorruptModelError, UnsupportedVersionError
from .gmm import FitConfig, GmmModel
from .scene_model import Vocabulary
from .scorer import ContextModel, ScoringConfig


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def checksum(payload: dict) -> str:
    return hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()


def model_payload(model: ContextModel) -> dict:
    return {
        "vocab": model.vocab.to_dict(),
        "counts": model.counts.to_dict(),
        "gmms": [
            {"key": list(key), **gmm.to_dict()}
            for key, gmm in sorted(model.gmms.items())
        ],
        "fit_config": asdict(model.fit_config),
        "scoring": model.scoring.to_dict(),
    }


def model_from_payload(payload: dict) -> ContextModel:
    vocab = Vocabulary(**payload["vocab"])
    return ContextModel(
        vocab=vocab,
        counts=CountTables.from_dict(payload["counts"]),
        gmms={tuple(entry["key"]): GmmModel.from_dict(entry) for entry in payload["gmms"]},
        fit_config=FitConfig(**payload["fit_config"]),
        scoring=ScoringConfig.from_dict(payload["scoring"]),
    )


def save_model(model: ContextModel, path: str | Path) -> None:
    payload = model_payload(model)
    document = {
        "format_version": MODEL_FORMAT_VERSION,
        "checksum": checksum(payload),
        "payload": payload,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    logger.info(f"Saved model with {len(model.gmms)} mixtures to {path}")


def load_model(path: str | Path) -> ContextModel:
    path = Path(path)
    if not path.exists():
        raise CorruptModelError(f"no model file at {path}")
    try:
        document = json.loads(path.read_bytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as ex:
        raise CorruptModelError(f"{path} is not a readable model file: {ex}") from ex
    if not isinstance(document, dict):
        raise CorruptModelError(f"{path} does not hold a model document")

    version = document.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path} has format_version {version!r}; supported: {MODEL_FORMAT_VERSION}")

    payload = document.get("payload")
    if not isinstance(payload, dict) or checksum(payload) != document.get("checksum"):
        raise CorruptModelError(f"checksum mismatch in {path}")

    try:
        model = model_from_payload(payload)
    except ContextInsertError as ex:
        raise CorruptModelError(f"{path} holds an invalid model: {ex}") from ex
    except (KeyError, TypeError, ValueError) as ex:
        raise CorruptModelError(f"{path} holds an invalid model: {ex}") from ex
    logger.info(f"Loaded model with {len(model.gmms)} mixtures from {path}")
    return model


__all__ = ["checksum", "load_model", "model_from_payload", "model_payload", "save_model"]
