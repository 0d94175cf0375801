"""Manifest ingestion and label validation for DR/DME datasets.

Manifest format (UTF-8, comma-delimited, header required):

    id,image_path,dr_grade,dme_grade,split

dme_grade is optional; split is TRAIN or TEST. image_path resolves
relative to the manifest's directory.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import pandas as pd

from fundus.errors import ImageIOError, ManifestError, SchemaError
from fundus.models import SplitCounts, SplitReport

logger = logging.getLogger("fundus.dataset")

REQUIRED_COLUMNS = ("id", "image_path", "dr_grade", "split")


class Split(str, Enum):
    TRAIN = "TRAIN"
    TEST = "TEST"


@dataclass(frozen=True)
class DatasetSchema:
    name: str
    dr_classes: int
    dme_classes: int | None = None

    def __post_init__(self) -> None:
        if self.dr_classes < 2:
            raise SchemaError(f"{self.name}: dr_classes must be >= 2, got {self.dr_classes}")
        if self.dme_classes is not None and self.dme_classes < 2:
            raise SchemaError(f"{self.name}: dme_classes must be >= 2, got {self.dme_classes}")

    @property
    def has_dme(self) -> bool:
        return self.dme_classes is not None


MESSIDOR = DatasetSchema("messidor", dr_classes=4, dme_classes=3)
IDRID = DatasetSchema("idrid", dr_classes=5, dme_classes=3)
DEEPDRID = DatasetSchema("deepdrid", dr_classes=5, dme_classes=None)

BUILTIN_SCHEMAS = {s.name: s for s in (MESSIDOR, IDRID, DEEPDRID)}


def schema_by_name(name: str) -> DatasetSchema:
    try:
        return BUILTIN_SCHEMAS[name.lower()]
    except KeyError:
        known = ", ".join(sorted(BUILTIN_SCHEMAS))
        raise SchemaError(f"unknown dataset schema {name!r} (known: {known})") from None


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    image_path: Path
    dr_grade: int
    split: Split
    dme_grade: int | None = None


# ---------------------------------------------------------------------------
# Load / write
# ---------------------------------------------------------------------------

def _parse_grade(raw: str, column: str, classes: int, row: int) -> int:
    try:
        grade = int(raw.strip())
    except ValueError:
        raise ManifestError(f"{column} {raw!r} is not an integer", row=row) from None
    if not 0 <= grade < classes:
        raise ManifestError(f"{column} {grade} out of range 0..{classes - 1}", row=row)
    return grade


def _read_table(path: Path) -> pd.DataFrame:
    if not path.is_file():
        raise ImageIOError("manifest not found", path)
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise SchemaError("manifest is empty (header row required)") from None
    except pd.errors.ParserError as exc:
        raise ManifestError(f"malformed manifest ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise ManifestError(f"manifest is not UTF-8 ({exc})") from exc
    except OSError as exc:
        raise ImageIOError(f"cannot read manifest ({exc})", path) from exc


def load_manifest(path: str | Path, schema: DatasetSchema) -> list[ManifestRecord]:
    """Read and validate a manifest. Row numbers in errors count the header as row 1."""
    p = Path(path)
    df = _read_table(p)
    df.columns = [c.strip() for c in df.columns]

    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"manifest missing column(s): {', '.join(missing)}")
    has_dme_column = "dme_grade" in df.columns
    if schema.has_dme and not has_dme_column:
        raise SchemaError(f"schema {schema.name} requires a dme_grade column")
    if has_dme_column and not schema.has_dme:
        logger.warning("Schema %s has no DME grades; ignoring dme_grade column", schema.name)

    base = p.parent
    records: list[ManifestRecord] = []
    seen: dict[str, int] = {}
    for idx, row in enumerate(df.to_dict("records")):
        line = idx + 2
        rid = row["id"].strip()
        if not rid:
            raise ManifestError("empty id", row=line)
        if rid in seen:
            raise ManifestError(f"duplicate id {rid!r} (first seen on row {seen[rid]})", row=line)
        seen[rid] = line

        split_raw = row["split"].strip()
        try:
            split = Split(split_raw)
        except ValueError:
            raise ManifestError(f"split {split_raw!r} must be TRAIN or TEST", row=line) from None

        dme = None
        if schema.has_dme:
            dme = _parse_grade(row["dme_grade"], "dme_grade", schema.dme_classes, line)

        image_path = Path(row["image_path"].strip())
        records.append(ManifestRecord(
            id=rid,
            image_path=image_path if image_path.is_absolute() else base / image_path,
            dr_grade=_parse_grade(row["dr_grade"], "dr_grade", schema.dr_classes, line),
            split=split,
            dme_grade=dme,
        ))

    logger.info("Loaded %d records from %s (schema %s)", len(records), p, schema.name)
    return records


def write_manifest(
    records: Sequence[ManifestRecord],
    path: str | Path,
    schema: DatasetSchema,
) -> Path:
    """Write records in manifest format; paths are written relative to the file when possible."""
    p = Path(path)
    base = p.parent.resolve()
    rows = []
    for r in records:
        try:
            image_path = r.image_path.resolve().relative_to(base)
        except ValueError:
            image_path = r.image_path
        row = {"id": r.id, "image_path": image_path.as_posix(), "dr_grade": r.dr_grade}
        if schema.has_dme:
            row["dme_grade"] = r.dme_grade
        row["split"] = r.split.value
        rows.append(row)

    columns = list(REQUIRED_COLUMNS[:3]) + (["dme_grade"] if schema.has_dme else []) + ["split"]
    try:
        pd.DataFrame(rows, columns=columns).to_csv(p, index=False, lineterminator="\n")
    except OSError as exc:
        raise ImageIOError(f"cannot write manifest ({exc})", p) from exc
    return p


def filter_split(records: Sequence[ManifestRecord], split: Split | str) -> list[ManifestRecord]:
    split = Split(split.upper() if isinstance(split, str) else split)
    return [r for r in records if r.split is split]


# ---------------------------------------------------------------------------
# Split summary
# ---------------------------------------------------------------------------

def _histogram(values: list[int], classes: int) -> list[int]:
    counts = Counter(values)
    return [counts.get(c, 0) for c in range(classes)]


def split_summary(records: Sequence[ManifestRecord], schema: DatasetSchema | None = None) -> SplitReport:
    """Per-split counts, percentages (2 dp) and grade histograms."""
    total = len(records)
    if schema is None:
        dr_classes = max((r.dr_grade for r in records), default=0) + 1
        dme_grades = [r.dme_grade for r in records if r.dme_grade is not None]
        dme_classes = max(dme_grades) + 1 if dme_grades else None
        name = "custom"
    else:
        dr_classes, dme_classes, name = schema.dr_classes, schema.dme_classes, schema.name

    splits: list[SplitCounts] = []
    warnings: list[str] = []
    for split in Split:
        members = [r for r in records if r.split is split]
        if not members:
            warnings.append(f"{split.value} split is empty")
        splits.append(SplitCounts(
            split=split.value,
            count=len(members),
            percent=round(100.0 * len(members) / total, 2) if total else 0.0,
            dr_histogram=_histogram([r.dr_grade for r in members], dr_classes),
            dme_histogram=(
                _histogram([r.dme_grade for r in members if r.dme_grade is not None], dme_classes)
                if dme_classes is not None else None
            ),
        ))

    for w in warnings:
        logger.warning("%s: %s", name, w)
    return SplitReport(dataset=name, total=total, splits=splits, warnings=warnings)
