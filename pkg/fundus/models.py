"""Pydantic models for fundus-engine report and record shapes."""

from __future__ import annotations

from pydantic import BaseModel, Field


# ---------------------------------------------------------------------------
# Batch runner
# ---------------------------------------------------------------------------

class FlipDecision(BaseModel):
    step: int  # index in the pipeline config
    kind: str
    applied: bool


class RunRecord(BaseModel):
    id: str
    status: str  # ok, failed
    output_path: str | None = None
    flips: list[FlipDecision] = []
    ms: float
    error: str | None = None


class RunSummary(BaseModel):
    total: int
    succeeded: int
    failed: int
    workers: int
    wall_seconds: float
    images_per_second: float
    mean_ms: float
    rss_mb: float


class RunReport(BaseModel):
    records: list[RunRecord]
    summary: RunSummary

    def failed_ids(self) -> list[str]:
        return [r.id for r in self.records if r.status != "ok"]


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

class SplitCounts(BaseModel):
    split: str
    count: int
    percent: float
    dr_histogram: list[int]
    dme_histogram: list[int] | None = None


class SplitReport(BaseModel):
    dataset: str
    total: int
    splits: list[SplitCounts]
    warnings: list[str] = []


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

class ClassScores(BaseModel):
    cls: int
    pre: float
    rec: float
    f1: float
    support: int
    predicted: int
    zero_division: bool  # a denominator was 0 and the convention value 0 was used


class TaskMetrics(BaseModel):
    acc: float
    auc: float | None = None
    pre: float
    rec: float
    f1: float
    per_class: list[ClassScores] = []
    auc_skipped_classes: list[int] = []


class MetricsReport(BaseModel):
    dataset: str
    records: int
    average: str = "macro"
    joint_acc: float | None = None
    dr: TaskMetrics
    dme: TaskMetrics | None = None


class ComparisonRow(BaseModel):
    method: str
    joint_acc: float | None = None
    dr: TaskMetrics
    dme: TaskMetrics | None = None
    dr_acc_delta: float | None = None
    dme_acc_delta: float | None = None


class ComparisonTable(BaseModel):
    baseline: str | None = None
    rows: list[ComparisonRow] = Field(default_factory=list)
