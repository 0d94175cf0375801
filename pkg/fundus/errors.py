"""Exception hierarchy for fundus-engine.

ValueError / OSError stay in the MRO so callers that only know the builtins
still catch the right family. The CLI maps ValueError -> exit 1, OSError -> exit 2.
"""

from __future__ import annotations

from pathlib import Path


class FundusError(Exception):
    """Base for every error raised by this package."""


class ContractError(FundusError, ValueError):
    """An operation was called outside its preconditions."""


class ImageIOError(FundusError, OSError):
    """A file could not be read or written."""

    def __init__(self, message: str, path: str | Path | None = None) -> None:
        self.path = str(path) if path is not None else None
        super().__init__(f"{message}: {self.path}" if self.path else message)


class DecodeError(ImageIOError):
    """The file exists but is not a supported, intact raster."""


class PipelineConfigError(FundusError, ValueError):
    """Pipeline config could not be parsed or failed validation."""

    def __init__(
        self,
        message: str,
        *,
        line: int | None = None,
        step_index: int | None = None,
    ) -> None:
        self.line = line
        self.step_index = step_index
        prefix = ""
        if step_index is not None:
            prefix = f"step {step_index}: "
        elif line is not None:
            prefix = f"line {line}: "
        super().__init__(prefix + message)


class ManifestError(FundusError, ValueError):
    """A manifest row is invalid (bounds, duplicates, bad values)."""

    def __init__(self, message: str, *, row: int | None = None) -> None:
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class SchemaError(ManifestError):
    """The manifest is missing columns the dataset schema requires."""


class PredictionFileError(FundusError, ValueError):
    """A predictions file row is malformed."""

    def __init__(self, message: str, *, row: int | None = None) -> None:
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class UndefinedMetricError(FundusError, ValueError):
    """The metric has no value on this input (e.g. AUC with one class)."""


class TensorFileError(FundusError, ValueError):
    """A tensor text file is malformed."""

    def __init__(self, message: str, *, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
