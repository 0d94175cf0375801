"""DR/DME evaluation: confusion, Acc, Pre/Rec/F1, one-vs-rest AUC and Joint Accuracy.

Scores prediction files produced by any external classifier. Predicted class
is the argmax of the probability vector; ties go to the lowest class index.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from fundus.dataset import DatasetSchema
from fundus.errors import (
    ContractError,
    ImageIOError,
    PredictionFileError,
    UndefinedMetricError,
)
from fundus.models import (
    ClassScores,
    ComparisonRow,
    ComparisonTable,
    MetricsReport,
    TaskMetrics,
)

logger = logging.getLogger("fundus.metrics")

PROB_TOLERANCE = 1e-6
AVERAGES = ("macro", "micro")


class Task(str, Enum):
    DR = "dr"
    DME = "dme"


def check_distribution(prob: Sequence[float], what: str = "probability vector") -> None:
    p = np.asarray(prob, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ContractError(f"{what} must be a non-empty vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ContractError(f"{what} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > PROB_TOLERANCE:
        raise ContractError(f"{what} sums to {p.sum():.9f}, not 1")


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    true_dr: int
    prob_dr: tuple[float, ...]
    true_dme: int | None = None
    prob_dme: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        check_distribution(self.prob_dr, f"{self.id}: prob_dr")
        if not 0 <= self.true_dr < len(self.prob_dr):
            raise ContractError(f"{self.id}: true_dr {self.true_dr} out of range")
        if (self.true_dme is None) != (self.prob_dme is None):
            raise ContractError(f"{self.id}: true_dme and prob_dme must be given together")
        if self.prob_dme is not None:
            check_distribution(self.prob_dme, f"{self.id}: prob_dme")
            if not 0 <= self.true_dme < len(self.prob_dme):
                raise ContractError(f"{self.id}: true_dme {self.true_dme} out of range")

    def task(self, task: Task) -> tuple[int, tuple[float, ...]] | None:
        if task is Task.DR:
            return self.true_dr, self.prob_dr
        if self.prob_dme is None:
            return None
        return self.true_dme, self.prob_dme


def _task_arrays(records: Sequence[PredictionRecord], task: Task) -> tuple[np.ndarray, np.ndarray]:
    """(labels, probs) for one task; probs is (n, k)."""
    if not records:
        raise ContractError("no prediction records")
    pairs = [r.task(task) for r in records]
    if any(p is None for p in pairs):
        missing = next(r.id for r, p in zip(records, pairs) if p is None)
        raise ContractError(f"record {missing} has no {task.value} prediction")
    widths = {len(p[1]) for p in pairs}
    if len(widths) != 1:
        raise ContractError(f"{task.value} probability vectors differ in length: {sorted(widths)}")
    labels = np.array([p[0] for p in pairs], dtype=np.intp)
    probs = np.array([p[1] for p in pairs], dtype=np.float64)
    return labels, probs


def predicted_classes(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index
    return np.argmax(probs, axis=1)


# ---------------------------------------------------------------------------
# Confusion-based metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    k: int
    counts: np.ndarray = field(repr=False)  # (true, predicted)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self) -> np.ndarray:
        return np.diag(self.counts)

    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp()

    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp()


def confusion(records: Sequence[PredictionRecord], task: Task | str = Task.DR) -> ConfusionMatrix:
    labels, probs = _task_arrays(records, Task(task))
    k = probs.shape[1]
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels, predicted_classes(probs)), 1)
    return ConfusionMatrix(k=k, counts=counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ContractError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def _ratio(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


@dataclass(frozen=True)
class PRF:
    pre: float
    rec: float
    f1: float
    per_class: list[ClassScores]


def precision_recall_f1(cm: ConfusionMatrix, average: str = "macro") -> PRF:
    """One-vs-rest Pre/Rec/F1 per class plus the macro or micro average.

    A zero denominator yields 0 and sets the class's zero_division flag.
    """
    if average not in AVERAGES:
        raise ContractError(f"average must be one of {AVERAGES}, got {average!r}")
    if cm.total == 0:
        raise ContractError("precision/recall of an empty confusion matrix")
    tp, fp, fn = cm.tp(), cm.fp(), cm.fn()

    per_class = []
    for c in range(cm.k):
        pre, z1 = _ratio(tp[c], tp[c] + fp[c])
        rec, z2 = _ratio(tp[c], tp[c] + fn[c])
        f1, z3 = _ratio(2 * tp[c], 2 * tp[c] + fn[c] + fp[c])
        per_class.append(ClassScores(
            cls=c,
            pre=float(pre),
            rec=float(rec),
            f1=float(f1),
            support=int(tp[c] + fn[c]),
            predicted=int(tp[c] + fp[c]),
            zero_division=z1 or z2 or z3,
        ))

    if average == "micro":
        t, p, n = int(tp.sum()), int(fp.sum()), int(fn.sum())
        pre, _ = _ratio(t, t + p)
        rec, _ = _ratio(t, t + n)
        f1, _ = _ratio(2 * t, 2 * t + n + p)
        return PRF(pre=float(pre), rec=float(rec), f1=float(f1), per_class=per_class)

    return PRF(
        pre=float(np.mean([s.pre for s in per_class])),
        rec=float(np.mean([s.rec for s in per_class])),
        f1=float(np.mean([s.f1 for s in per_class])),
        per_class=per_class,
    )


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------

def binary_auc(positive: np.ndarray, scores: np.ndarray) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative samples")
    ranks = rankdata(scores, method="average")
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class AucResult:
    value: float
    per_class: dict[int, float]
    skipped: list[int]


def auc_ovr(
    records: Sequence[PredictionRecord],
    task: Task | str = Task.DR,
    average: str = "macro",
) -> AucResult:
    """One-vs-rest AUC. Macro skips (and reports) classes lacking positives or negatives."""
    if average not in AVERAGES:
        raise ContractError(f"average must be one of {AVERAGES}, got {average!r}")
    labels, probs = _task_arrays(records, Task(task))
    if len(np.unique(labels)) < 2:
        raise UndefinedMetricError(f"{Task(task).value} AUC needs at least 2 distinct true classes")

    k = probs.shape[1]
    per_class: dict[int, float] = {}
    skipped: list[int] = []
    for c in range(k):
        positive = labels == c
        if positive.all() or not positive.any():
            skipped.append(c)
            continue
        per_class[c] = binary_auc(positive, probs[:, c])

    if average == "micro":
        onehot = np.zeros_like(probs, dtype=bool)
        onehot[np.arange(len(labels)), labels] = True
        value = binary_auc(onehot.ravel(), probs.ravel())
    else:
        value = float(np.mean(list(per_class.values())))
    if skipped:
        logger.info("AUC skipped class(es) %s: no positives or no negatives", skipped)
    return AucResult(value=value, per_class=per_class, skipped=skipped)


def auc_ovr_macro(records: Sequence[PredictionRecord], task: Task | str = Task.DR) -> float:
    return auc_ovr(records, task, "macro").value


# ---------------------------------------------------------------------------
# Joint accuracy and report
# ---------------------------------------------------------------------------

def joint_accuracy(records: Sequence[PredictionRecord]) -> float:
    """Fraction of records with both DR and DME predicted correctly."""
    dr_true, dr_probs = _task_arrays(records, Task.DR)
    dme_true, dme_probs = _task_arrays(records, Task.DME)
    both = (predicted_classes(dr_probs) == dr_true) & (predicted_classes(dme_probs) == dme_true)
    return float(both.mean())


def task_metrics(records: Sequence[PredictionRecord], task: Task, average: str = "macro") -> TaskMetrics:
    cm = confusion(records, task)
    prf = precision_recall_f1(cm, average)
    try:
        auc = auc_ovr(records, task, average)
        auc_value, skipped = auc.value, auc.skipped
    except UndefinedMetricError as exc:
        logger.warning("%s", exc)
        auc_value, skipped = None, []
    return TaskMetrics(
        acc=accuracy(cm),
        auc=auc_value,
        pre=prf.pre,
        rec=prf.rec,
        f1=prf.f1,
        per_class=prf.per_class,
        auc_skipped_classes=skipped,
    )


def report(
    records: Sequence[PredictionRecord],
    schema: DatasetSchema,
    average: str = "macro",
) -> MetricsReport:
    """Joint Acc / Acc / AUC / Pre / Rec / F1 per task. DME fields are absent for DR-only schemas."""
    for r in records:
        if len(r.prob_dr) != schema.dr_classes:
            raise ContractError(f"{r.id}: {len(r.prob_dr)} DR probabilities, schema has {schema.dr_classes}")
    dr = task_metrics(records, Task.DR, average)
    if not schema.has_dme:
        return MetricsReport(dataset=schema.name, records=len(records), average=average, dr=dr)

    dme = task_metrics(records, Task.DME, average)
    return MetricsReport(
        dataset=schema.name,
        records=len(records),
        average=average,
        joint_acc=joint_accuracy(records),
        dr=dr,
        dme=dme,
    )


def render_report(rep: MetricsReport) -> str:
    """Stable JSON rendering (fixed key order, absent fields omitted)."""
    return rep.model_dump_json(exclude_none=True, indent=2) + "\n"


def compare_methods(reports: Mapping[str, MetricsReport], baseline: str | None = "none") -> ComparisonTable:
    """One row per enhancement method, with the Acc change against the baseline row."""
    base = reports.get(baseline) if baseline else None
    if baseline and base is None:
        logger.info("Baseline %r not among compared methods; deltas omitted", baseline)
    rows = []
    for method, rep in reports.items():
        dr_delta = dme_delta = None
        if base is not None:
            dr_delta = rep.dr.acc - base.dr.acc
            if rep.dme is not None and base.dme is not None:
                dme_delta = rep.dme.acc - base.dme.acc
        rows.append(ComparisonRow(
            method=method,
            joint_acc=rep.joint_acc,
            dr=rep.dr,
            dme=rep.dme,
            dr_acc_delta=dr_delta,
            dme_acc_delta=dme_delta,
        ))
    return ComparisonTable(baseline=baseline if base is not None else None, rows=rows)


# ---------------------------------------------------------------------------
# Predictions file
# ---------------------------------------------------------------------------

def _prob_columns(prefix: str, classes: int) -> list[str]:
    return [f"{prefix}_{j}" for j in range(classes)]


def _parse_float(raw: str, column: str, row: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise PredictionFileError(f"{column} {raw!r} is not a number", row=row) from None
    if not math.isfinite(value):
        raise PredictionFileError(f"{column} is not finite", row=row)
    return value


def _parse_label(raw: str, column: str, classes: int, row: int) -> int:
    try:
        label = int(raw.strip())
    except ValueError:
        raise PredictionFileError(f"{column} {raw!r} is not an integer", row=row) from None
    if not 0 <= label < classes:
        raise PredictionFileError(f"{column} {label} out of range 0..{classes - 1}", row=row)
    return label


def load_predictions(path: str | Path, schema: DatasetSchema) -> list[PredictionRecord]:
    """Parse id,true_dr,p_dr_0..,[true_dme,p_dme_0..]. Row numbers count the header as row 1."""
    p = Path(path)
    if not p.is_file():
        raise ImageIOError("predictions file not found", p)
    try:
        df = pd.read_csv(p, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise PredictionFileError("predictions file is empty (header row required)") from None
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise PredictionFileError(f"malformed predictions file ({exc})") from exc
    except OSError as exc:
        raise ImageIOError(f"cannot read predictions ({exc})", p) from exc
    df.columns = [c.strip() for c in df.columns]

    dr_cols = _prob_columns("p_dr", schema.dr_classes)
    needed = ["id", "true_dr", *dr_cols]
    dme_cols: list[str] = []
    if schema.has_dme:
        dme_cols = _prob_columns("p_dme", schema.dme_classes)
        needed += ["true_dme", *dme_cols]
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise PredictionFileError(f"missing column(s): {', '.join(missing)}", row=1)

    records: list[PredictionRecord] = []
    seen: set[str] = set()
    for idx, row in enumerate(df.to_dict("records")):
        line = idx + 2
        rid = row["id"].strip()
        if not rid:
            raise PredictionFileError("empty id", row=line)
        if rid in seen:
            raise PredictionFileError(f"duplicate id {rid!r}", row=line)
        seen.add(rid)

        prob_dr = tuple(_parse_float(row[c], c, line) for c in dr_cols)
        true_dr = _parse_label(row["true_dr"], "true_dr", schema.dr_classes, line)
        true_dme = prob_dme = None
        if schema.has_dme:
            prob_dme = tuple(_parse_float(row[c], c, line) for c in dme_cols)
            true_dme = _parse_label(row["true_dme"], "true_dme", schema.dme_classes, line)
        try:
            records.append(PredictionRecord(rid, true_dr, prob_dr, true_dme, prob_dme))
        except ContractError as exc:
            raise PredictionFileError(str(exc), row=line) from exc

    if not records:
        raise PredictionFileError("predictions file has no rows")
    logger.info("Loaded %d predictions from %s", len(records), p)
    return records
