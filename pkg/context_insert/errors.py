"""Exception hierarchy shared by the library and the command line."""

from typing import Any

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class ContextInsertError(Exception):
    exit_code = EXIT_INTERNAL
    kind = "internal_error"

    def to_dict(self) -> dict[str, Any]:
        return {"error": self.kind, "type": type(self).__name__, "message": str(self)}


class InvalidGeometryError(ContextInsertError, ValueError):
    exit_code = EXIT_DATA
    kind = "data_error"


class EmptyCorpusError(ContextInsertError, ValueError):
    exit_code = EXIT_DATA
    kind = "data_error"


class NoSamplesError(ContextInsertError, ValueError):
    pass


class ZeroEvidenceError(ContextInsertError):
    """No trained triple fired: the score matrix (or one column of it) is all zero."""


class ContractViolationError(ContextInsertError, ValueError):
    pass


class DataValidationError(ContextInsertError, ValueError):
    exit_code = EXIT_DATA
    kind = "data_error"

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where = f"{where}{line}:"
        super().__init__(f"{where} {message}" if where else message)

    def to_dict(self) -> dict[str, Any]:
        out = super().to_dict()
        if self.path is not None:
            out["path"] = self.path
        if self.line is not None:
            out["line"] = self.line
        return out


class UnknownCategoryError(DataValidationError):
    pass


class ModelFileError(ContextInsertError):
    exit_code = EXIT_DATA
    kind = "data_error"


class CorruptModelError(ModelFileError):
    pass


class UnsupportedVersionError(ModelFileError):
    pass


class InvalidSpecError(ContextInsertError, ValueError):
    exit_code = EXIT_DATA
    kind = "data_error"


class UsageError(ContextInsertError):
    exit_code = EXIT_USAGE
    kind = "usage_error"


__all__ = [
    "ContextInsertError",
    "ContractViolationError",
    "CorruptModelError",
    "DataValidationError",
    "EXIT_DATA",
    "EXIT_INTERNAL",
    "EXIT_OK",
    "EXIT_USAGE",
    "EmptyCorpusError",
    "InvalidGeometryError",
    "InvalidSpecError",
    "ModelFileError",
    "NoSamplesError",
    "UnknownCategoryError",
    "UnsupportedVersionError",
    "UsageError",
    "ZeroEvidenceError",
]
