"""Declarative, seeded batch preprocessing runner.

A pipeline is a TOML document with a seed and an ordered [[steps]] list.
Random steps draw from a Philox generator keyed by (seed, image id, slot),
so a run's output depends only on the spec and the input bytes, never on
worker count or scheduling order.
"""

from __future__ import annotations

import asyncio
import hashlib
import logging
import math
import os
import re
import time

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Annotated, ClassVar, Literal, Sequence, Union

import numpy as np
import psutil
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from fundus.config import RunnerConfig
from fundus.enhance import (
    AUTO,
    BenParams,
    ClaheParams,
    ben_enhance,
    clahe,
    green_ben,
    green_clahe,
)
from fundus.errors import ContractError, ImageIOError, PipelineConfigError
from fundus.imagecore import (
    Depth,
    ImageBuffer,
    NormalizationParams,
    extract_green,
    flip_horizontal,
    flip_vertical,
    load_image,
    normalize,
    replicate_to_rgb,
    resize_bilinear,
    save_image,
)
from fundus.models import FlipDecision, RunRecord, RunReport, RunSummary

logger = logging.getLogger("fundus.pipeline")

_UNSAFE_CHARS_RE = re.compile(r"[^A-Za-z0-9._-]")
_TOML_LINE_RE = re.compile(r"line (\d+)")


# ---------------------------------------------------------------------------
# Step specs
# ---------------------------------------------------------------------------

class _Step(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    is_random: ClassVar[bool] = False

    def apply(self, img: ImageBuffer) -> ImageBuffer:
        raise NotImplementedError


class _BenFields(_Step):
    sigma: float | Literal["auto"] = AUTO
    alpha: float = 4.0
    beta: float = -4.0
    bias: float = 128.0

    @field_validator("sigma")
    @classmethod
    def _positive_sigma(cls, v: float | str) -> float | str:
        if v != AUTO and not 0 < v < math.inf:
            raise ValueError(f"sigma must be finite and > 0 or 'auto', got {v}")
        return v

    def ben_params(self) -> BenParams:
        return BenParams(sigma=self.sigma, alpha=self.alpha, beta=self.beta, bias=self.bias)


class _ClaheFields(_Step):
    tiles_x: int = Field(default=8, ge=1)
    tiles_y: int = Field(default=8, ge=1)
    clip_limit: float = Field(default=2.0, ge=1.0)

    def clahe_params(self) -> ClaheParams:
        return ClaheParams(tiles_x=self.tiles_x, tiles_y=self.tiles_y, clip_limit=self.clip_limit)


class ResizeStep(_Step):
    kind: Literal["resize"] = "resize"
    width: int = Field(ge=1)
    height: int = Field(ge=1)

    def apply(self, img: ImageBuffer) -> ImageBuffer:
        return resize_bilinear(img, self.width, self.height)


class RandomHFlipStep(_Step):
    kind: Literal["random_hflip"] = "random_hflip"
    probability: float = Field(default=0.5, ge=0.0, le=1.0)
    is_random: ClassVar[bool] = True

    def apply(self, img: ImageBuffer) -> ImageBuffer:
        return flip_horizontal(img)


class RandomVFlipStep(_Step):
    kind: Literal["random_vflip"] = "random_vflip"
    probability: float = Field(default=0.5, ge=0.0, le=1.0)
    is_random: ClassVar[bool] = True

    def apply(self, img: ImageBuffer) -> ImageBuffer:
        return flip_vertical(img)


class NormalizeStep(_Step):
    """mean/std default to ImageNet stats (green entry for 1-channel images)."""

    kind: Literal["normalize"] = "normalize"
    mean: tuple[float, ...] | None = None
    std: tuple[float, ...] | None = None

    @model_validator(mode="after")
    def _paired(self) -> NormalizeStep:
        if (self.mean is None) != (self.std is None):
            raise ValueError("mean and std must be given together")
        if self.mean is not None:
            NormalizationParams(mean=self.mean, std=self.std)
        return self

    def params_for(self, channels: int) -> NormalizationParams:
        if self.mean is None:
            return NormalizationParams.imagenet(channels)
        return NormalizationParams(mean=self.mean, std=self.std)

    def apply(self, img: ImageBuffer) -> ImageBuffer:
        return normalize(img, self.params_for(img.channels))


class GreenStep(_Step):
    kind: Literal["green"] = "green"

    def apply(self, img: ImageBuffer) -> ImageBuffer:
        return extract_green(img)


class BenStep(_BenFields):
    kind: Literal["ben"] = "ben"

    def apply(self, img: ImageBuffer) -> ImageBuffer:
        return ben_enhance(img, self.ben_params())


class ClaheStep(_ClaheFields):
    kind: Literal["clahe"] = "clahe"

    def apply(self, img: ImageBuffer) -> ImageBuffer:
        return clahe(img, self.clahe_params())


class GreenBenStep(_BenFields):
    kind: Literal["green_ben"] = "green_ben"
    replicate: bool = False

    def apply(self, img: ImageBuffer) -> ImageBuffer:
        return green_ben(img, self.ben_params(), self.replicate)


class GreenClaheStep(_ClaheFields):
    kind: Literal["green_clahe"] = "green_clahe"
    replicate: bool = False

    def apply(self, img: ImageBuffer) -> ImageBuffer:
        return green_clahe(img, self.clahe_params(), self.replicate)


class ReplicateStep(_Step):
    kind: Literal["replicate_rgb"] = "replicate_rgb"

    def apply(self, img: ImageBuffer) -> ImageBuffer:
        return replicate_to_rgb(img)


StepSpec = Annotated[
    Union[
        ResizeStep,
        RandomHFlipStep,
        RandomVFlipStep,
        NormalizeStep,
        GreenStep,
        BenStep,
        ClaheStep,
        GreenBenStep,
        GreenClaheStep,
        ReplicateStep,
    ],
    Field(discriminator="kind"),
]

_NEEDS_RGB = {"green", "green_ben", "green_clahe"}


class PipelineSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: list[StepSpec] = Field(min_length=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    output_depth: Depth | None = None

    @model_validator(mode="after")
    def _check_semantics(self) -> PipelineSpec:
        kinds = [s.kind for s in self.steps]
        for i, kind in enumerate(kinds):
            if kind == "normalize" and i != len(kinds) - 1:
                raise PipelineConfigError("normalize must be the last step", step_index=i)

        terminal = Depth.FLOAT if kinds[-1] == "normalize" else Depth.INT8
        if self.output_depth is None:
            object.__setattr__(self, "output_depth", terminal)
        elif self.output_depth is not terminal:
            raise PipelineConfigError(
                f"output_depth {self.output_depth.value} disagrees with the terminal step",
                step_index=len(kinds) - 1,
            )

        # channel count is unknown until a step pins it
        channels: int | None = None
        for i, step in enumerate(self.steps):
            if step.kind in _NEEDS_RGB:
                if channels == 1:
                    raise PipelineConfigError(f"{step.kind} needs a 3-channel image", step_index=i)
                channels = 3 if getattr(step, "replicate", False) else 1
            elif step.kind == "replicate_rgb":
                if channels == 3:
                    raise PipelineConfigError("replicate_rgb needs a 1-channel image", step_index=i)
                channels = 3
            elif isinstance(step, NormalizeStep) and step.mean is not None and channels is not None:
                if len(step.mean) != channels:
                    raise PipelineConfigError(
                        f"normalize has {len(step.mean)} channel(s), image has {channels}",
                        step_index=i,
                    )
        return self


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _from_validation_error(exc: ValidationError) -> PipelineConfigError:
    first = exc.errors()[0]
    original = (first.get("ctx") or {}).get("error")
    if isinstance(original, PipelineConfigError):
        return original
    loc = first["loc"]
    step_index = None
    where = loc
    if len(loc) >= 2 and loc[0] == "steps" and isinstance(loc[1], int):
        step_index = loc[1]
        where = loc[2:]
    field = ".".join(str(part) for part in where)
    message = f"{field}: {first['msg']}" if field else first["msg"]
    return PipelineConfigError(message, step_index=step_index)


def parse_pipeline(text: str) -> PipelineSpec:
    """Parse and validate a TOML pipeline document."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = _TOML_LINE_RE.search(str(exc))
            line = int(m.group(1)) if m else None
        raise PipelineConfigError(f"syntax error: {exc}", line=line) from exc
    try:
        return PipelineSpec.model_validate(doc)
    except ValidationError as exc:
        raise _from_validation_error(exc) from exc


def load_pipeline(path: str | Path) -> PipelineSpec:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ImageIOError(f"cannot read pipeline config ({exc})", p) from exc
    return parse_pipeline(text)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def draw_uniform(seed: int, image_id: str, slot: int) -> float:
    """Counter-based uniform draw in [0, 1) for one (seed, image, slot)."""
    digest = hashlib.blake2b(f"{seed}:{image_id}:{slot}".encode(), digest_size=16).digest()
    gen = np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))
    return float(gen.random())


def _run_steps(
    spec: PipelineSpec,
    img: ImageBuffer,
    image_id: str,
    *,
    force_random: bool = False,
    last_index: int | None = None,
) -> tuple[ImageBuffer, list[FlipDecision]]:
    flips: list[FlipDecision] = []
    slot = 0
    for i, step in enumerate(spec.steps):
        if last_index is not None and i > last_index:
            break
        if not step.is_random:
            img = step.apply(img)
            slot += 1
            continue
        # probability-0 steps are compiled out and take no slot
        if step.probability == 0.0 and not force_random:
            flips.append(FlipDecision(step=i, kind=step.kind, applied=False))
            continue
        applied = force_random or draw_uniform(spec.seed, image_id, slot) < step.probability
        slot += 1
        flips.append(FlipDecision(step=i, kind=step.kind, applied=applied))
        if applied:
            img = step.apply(img)
    return img, flips


def apply_pipeline(spec: PipelineSpec, img: ImageBuffer, image_id: str) -> tuple[ImageBuffer, list[FlipDecision]]:
    """Run every step on one image; returns the output and the random-step decisions."""
    return _run_steps(spec, img, image_id)


def preview_step(spec: PipelineSpec, step_index: int, img: ImageBuffer) -> ImageBuffer:
    """Output after steps[0..step_index] with every random step forced on."""
    if not 0 <= step_index < len(spec.steps):
        raise ContractError(f"step_index {step_index} out of range 0..{len(spec.steps) - 1}")
    out, _ = _run_steps(spec, img, "preview", force_random=True, last_index=step_index)
    return out


def output_stem(image_id: str) -> str:
    return _UNSAFE_CHARS_RE.sub("_", image_id)


def write_output(img: ImageBuffer, out_dir: Path, image_id: str) -> Path:
    stem = output_stem(image_id)
    if img.depth is Depth.INT8:
        path = out_dir / f"{stem}.png"
        save_image(img, path)
        return path
    path = out_dir / f"{stem}.npy"
    try:
        np.save(path, img.samples, allow_pickle=False)
    except OSError as exc:
        raise ImageIOError(f"cannot write tensor ({exc})", path) from exc
    return path


def process_image(spec: PipelineSpec, image_id: str, path: str | Path, out_dir: Path) -> RunRecord:
    """Load, transform and write one image. Failures become a failed record."""
    t0 = time.perf_counter()
    try:
        img = load_image(path)
        out, flips = apply_pipeline(spec, img, image_id)
        out_path = write_output(out, out_dir, image_id)
    except Exception as exc:
        ms = (time.perf_counter() - t0) * 1000.0
        logger.warning("Image %s failed: %s: %s", image_id, type(exc).__name__, exc)
        return RunRecord(id=image_id, status="failed", ms=round(ms, 3), error=str(exc) or type(exc).__name__)
    ms = (time.perf_counter() - t0) * 1000.0
    return RunRecord(id=image_id, status="ok", output_path=str(out_path), flips=flips, ms=round(ms, 3))


def _prepare_out_dir(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ImageIOError(f"cannot create output directory ({exc})", out) from exc
    if not os.access(out, os.W_OK):
        raise ImageIOError("output directory is not writable", out)
    return out


async def run_pipeline(
    spec: PipelineSpec,
    inputs: Sequence[tuple[str, str | Path]],
    out_dir: str | Path,
    workers: int | None = None,
    progress_every: int | None = None,
) -> RunReport:
    """Process every (id, path) input; per-image failures never abort the batch."""
    config = RunnerConfig()
    workers = max(1, workers or config.workers)
    every = progress_every or config.progress_every

    stems = [output_stem(image_id) for image_id, _ in inputs]
    if len(set(stems)) != len(stems):
        raise ContractError("input ids must be unique (after filename sanitising)")
    out = _prepare_out_dir(out_dir)

    total = len(inputs)
    logger.info("Running %d-step pipeline on %d images with %d worker(s)", len(spec.steps), total, workers)
    sem = asyncio.Semaphore(workers)
    done = 0
    t0 = time.perf_counter()

    async def _one(image_id: str, path: str | Path) -> RunRecord:
        nonlocal done
        async with sem:
            record = await asyncio.to_thread(process_image, spec, image_id, path, out)
        done += 1
        if done % every == 0 or done == total:
            logger.info("Processed %d/%d", done, total)
        return record

    records = list(await asyncio.gather(*[_one(i, p) for i, p in inputs]))

    wall = time.perf_counter() - t0
    ok = sum(1 for r in records if r.status == "ok")
    mem = psutil.Process(os.getpid()).memory_info()
    summary = RunSummary(
        total=total,
        succeeded=ok,
        failed=total - ok,
        workers=workers,
        wall_seconds=round(wall, 3),
        images_per_second=round(total / wall, 2) if wall > 0 else 0.0,
        mean_ms=round(sum(r.ms for r in records) / total, 3) if total else 0.0,
        rss_mb=round(mem.rss / 1_048_576, 1),
    )
    logger.info("Pipeline done: %d ok, %d failed in %.2fs", ok, total - ok, wall)
    return RunReport(records=records, summary=summary)


def write_report(report: RunReport, path: str | Path) -> Path:
    """JSON lines, one record per image; the run summary goes to <stem>.summary.json."""
    p = Path(path)
    try:
        with open(p, "w", encoding="utf-8") as f:
            for record in report.records:
                f.write(record.model_dump_json() + "\n")
        p.with_suffix(".summary.json").write_text(report.summary.model_dump_json(indent=2) + "\n")
    except OSError as exc:
        raise ImageIOError(f"cannot write report ({exc})", p) from exc
    return p
