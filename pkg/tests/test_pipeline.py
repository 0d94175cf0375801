from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

import fundus.pipeline as pipeline_mod
from fundus.enhance import BenParams, green_ben
from fundus.errors import ContractError, ImageIOError, PipelineConfigError
from fundus.imagecore import (
    Depth,
    NormalizationParams,
    flip_horizontal,
    flip_vertical,
    load_image,
    normalize,
    resize_bilinear,
)
from fundus.pipeline import (
    NormalizeStep,
    apply_pipeline,
    draw_uniform,
    parse_pipeline,
    preview_step,
    run_pipeline,
    write_report,
)
from tests.conftest import fundus_like, write_png

PREPROCESS = """
seed = 7

[[steps]]
kind = "resize"
width = 224
height = 224

[[steps]]
kind = "random_hflip"
probability = 0.5

[[steps]]
kind = "random_vflip"
probability = 0.5

[[steps]]
kind = "normalize"
"""

GREENBEN_FIRST = """
seed = 11

[[steps]]
kind = "green_ben"
replicate = true

[[steps]]
kind = "resize"
width = 24
height = 24

[[steps]]
kind = "random_hflip"

[[steps]]
kind = "random_vflip"
"""


def _steps(*blocks: str, seed: int = 0) -> str:
    return f"seed = {seed}\n" + "".join(f"\n[[steps]]\n{b}\n" for b in blocks)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def test_parse_preprocessing_pipeline():
    spec = parse_pipeline(PREPROCESS)
    assert [s.kind for s in spec.steps] == ["resize", "random_hflip", "random_vflip", "normalize"]
    assert spec.seed == 7
    assert spec.output_depth is Depth.FLOAT


def test_parse_resize_then_green_ben():
    spec = parse_pipeline(_steps('kind = "resize"\nwidth = 224\nheight = 224', 'kind = "green_ben"'))
    assert len(spec.steps) == 2
    assert spec.output_depth is Depth.INT8
    assert spec.steps[1].ben_params() == BenParams()


def test_probability_on_resize_is_rejected():
    text = _steps('kind = "resize"\nwidth = 8\nheight = 8\nprobability = 0.5')
    with pytest.raises(PipelineConfigError) as exc:
        parse_pipeline(text)
    assert exc.value.step_index == 0


def test_normalize_must_be_last():
    text = _steps('kind = "normalize"', 'kind = "resize"\nwidth = 8\nheight = 8')
    with pytest.raises(PipelineConfigError) as exc:
        parse_pipeline(text)
    assert exc.value.step_index == 0
    assert "step 0" in str(exc.value)


def test_two_normalize_steps_rejected():
    with pytest.raises(PipelineConfigError):
        parse_pipeline(_steps('kind = "normalize"', 'kind = "normalize"'))


def test_syntax_error_carries_line():
    with pytest.raises(PipelineConfigError) as exc:
        parse_pipeline('seed = 1\n\n[[steps]]\nkind = = "resize"\n')
    assert exc.value.line == 4


def test_unknown_keys_rejected():
    with pytest.raises(PipelineConfigError):
        parse_pipeline("colour = 'red'\n" + _steps('kind = "green"'))
    with pytest.raises(PipelineConfigError) as exc:
        parse_pipeline(_steps('kind = "green"', 'kind = "blur"'))
    assert exc.value.step_index == 1


def test_empty_steps_rejected():
    with pytest.raises(PipelineConfigError):
        parse_pipeline("seed = 1\nsteps = []\n")


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_seed_must_be_u64(seed):
    with pytest.raises(PipelineConfigError):
        parse_pipeline(_steps('kind = "green"', seed=seed))


def test_output_depth_must_agree():
    with pytest.raises(PipelineConfigError):
        parse_pipeline('output_depth = "float"\n' + _steps('kind = "green"'))
    spec = parse_pipeline('output_depth = "int8"\n' + _steps('kind = "green"'))
    assert spec.output_depth is Depth.INT8


@pytest.mark.parametrize("block", ['kind = "ben"\nsigma = -1', 'kind = "clahe"\ntiles_x = 0',
                                   'kind = "random_vflip"\nprobability = 1.5',
                                   'kind = "ben"\nsigma = inf', 'kind = "ben"\nsigma = nan'])
def test_step_params_validated(block):
    with pytest.raises(PipelineConfigError) as exc:
        parse_pipeline(_steps(block))
    assert exc.value.step_index == 0


def test_channel_tracking_rejects_green_after_green():
    with pytest.raises(PipelineConfigError) as exc:
        parse_pipeline(_steps('kind = "green"', 'kind = "green_ben"'))
    assert exc.value.step_index == 1


def test_channel_tracking_rejects_replicate_on_rgb():
    with pytest.raises(PipelineConfigError) as exc:
        parse_pipeline(_steps('kind = "green_clahe"\nreplicate = true', 'kind = "replicate_rgb"'))
    assert exc.value.step_index == 1


def test_normalize_width_checked_against_tracked_channels():
    with pytest.raises(PipelineConfigError) as exc:
        parse_pipeline(_steps('kind = "green"', 'kind = "normalize"\nmean = [0.4, 0.4, 0.4]\nstd = [0.2, 0.2, 0.2]'))
    assert exc.value.step_index == 1


def test_normalize_needs_mean_and_std_together():
    with pytest.raises(PipelineConfigError):
        parse_pipeline(_steps('kind = "normalize"\nmean = [0.5]'))


def test_normalize_defaults_follow_channels():
    step = NormalizeStep()
    assert step.params_for(3) == NormalizationParams.imagenet(3)
    assert step.params_for(1) == NormalizationParams.imagenet(1)


# ---------------------------------------------------------------------------
# Per-image execution
# ---------------------------------------------------------------------------

def test_draws_are_keyed_and_in_range():
    a = draw_uniform(5, "img001", 2)
    assert a == draw_uniform(5, "img001", 2)
    assert 0.0 <= a < 1.0
    assert len({draw_uniform(5, "img001", s) for s in range(16)}) == 16
    assert draw_uniform(6, "img001", 2) != a


def test_certain_hflip_equals_direct_flip():
    img = fundus_like(20, seed=2)
    spec = parse_pipeline(_steps('kind = "random_hflip"\nprobability = 1.0'))
    out, flips = apply_pipeline(spec, img, "x")
    assert out == flip_horizontal(img)
    assert [f.applied for f in flips] == [True]


def test_zero_probability_step_is_byte_neutral():
    img = fundus_like(20, seed=4)
    with_zero = parse_pipeline(_steps(
        'kind = "random_vflip"\nprobability = 0.0',
        'kind = "random_hflip"',
        'kind = "random_vflip"',
        seed=3,
    ))
    without = parse_pipeline(_steps('kind = "random_hflip"', 'kind = "random_vflip"', seed=3))
    for i in range(30):
        a, fa = apply_pipeline(with_zero, img, f"id{i}")
        b, fb = apply_pipeline(without, img, f"id{i}")
        assert a == b
        assert [f.applied for f in fa[1:]] == [f.applied for f in fb]
        assert fa[0].applied is False


def test_flip_decisions_mix_across_ids():
    spec = parse_pipeline(_steps('kind = "random_hflip"', seed=1))
    img = fundus_like(8, seed=0)
    applied = [apply_pipeline(spec, img, f"id{i}")[1][0].applied for i in range(64)]
    assert 10 < sum(applied) < 54


def test_preview_last_step_forces_every_random_step():
    img = fundus_like(40, seed=5)
    spec = parse_pipeline(PREPROCESS)
    expected = normalize(
        flip_vertical(flip_horizontal(resize_bilinear(img, 224, 224))),
        NormalizationParams.imagenet(),
    )
    assert preview_step(spec, 3, img) == expected


def test_preview_first_step_is_resize_only():
    img = fundus_like(40, seed=5)
    spec = parse_pipeline(PREPROCESS)
    assert preview_step(spec, 0, img) == resize_bilinear(img, 224, 224)


def test_preview_green_ben_step_equals_direct_call():
    img = fundus_like(40, seed=6)
    spec = parse_pipeline(GREENBEN_FIRST)
    assert preview_step(spec, 0, img) == green_ben(img, BenParams(), replicate=True)


@pytest.mark.parametrize("index", [-1, 4])
def test_preview_out_of_range(index):
    with pytest.raises(ContractError):
        preview_step(parse_pipeline(GREENBEN_FIRST), index, fundus_like(8, seed=0))


# ---------------------------------------------------------------------------
# Batch runner
# ---------------------------------------------------------------------------

@pytest.fixture
def forty_images(tmp_path: Path) -> list[tuple[str, Path]]:
    d = tmp_path / "forty"
    d.mkdir()
    return [(f"f{i:02d}", write_png(d / f"f{i:02d}.png", fundus_like(32, seed=100 + i))) for i in range(40)]


def _output_bytes(out_dir: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir()) if p.suffix in (".png", ".npy")}


@pytest.mark.asyncio
async def test_run_is_deterministic_across_reruns_and_workers(tmp_path: Path, forty_images):
    spec = parse_pipeline(GREENBEN_FIRST)
    outputs = []
    for run, workers in enumerate([1, 1, 4, 8]):
        out = tmp_path / f"run{run}"
        rep = await run_pipeline(spec, forty_images, out, workers=workers)
        assert rep.summary.succeeded == 40
        assert rep.summary.workers == workers
        outputs.append(_output_bytes(out))
    assert len(outputs[0]) == 40
    assert all(o == outputs[0] for o in outputs[1:])


@pytest.mark.asyncio
async def test_flip_decisions_survive_input_permutation(tmp_path: Path, forty_images):
    spec = parse_pipeline(GREENBEN_FIRST)
    forward = await run_pipeline(spec, forty_images, tmp_path / "a", workers=3)
    backward = await run_pipeline(spec, list(reversed(forty_images)), tmp_path / "b", workers=5)
    decisions = lambda rep: {r.id: [f.applied for f in r.flips] for r in rep.records}  # noqa: E731
    assert decisions(forward) == decisions(backward)
    assert [r.id for r in backward.records] == [i for i, _ in reversed(forty_images)]


@pytest.mark.asyncio
async def test_corrupt_image_fails_alone(tmp_path: Path, image_dir):
    _, inputs = image_dir
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"definitely not a png")
    spec = parse_pipeline(GREENBEN_FIRST)
    rep = await run_pipeline(spec, [*inputs, ("bad", bad)], tmp_path / "out", workers=2)
    assert rep.summary.failed == 1
    assert rep.failed_ids() == ["bad"]
    failed = rep.records[-1]
    assert failed.status == "failed" and failed.output_path is None and failed.error
    assert all(r.status == "ok" for r in rep.records[:-1])


@pytest.mark.asyncio
async def test_unexpected_error_fails_alone(tmp_path: Path, image_dir, monkeypatch):
    real = pipeline_mod.apply_pipeline

    def flaky(spec, img, image_id):
        if image_id == "img003":
            raise MemoryError("Unable to allocate 447. GiB")
        return real(spec, img, image_id)

    monkeypatch.setattr(pipeline_mod, "apply_pipeline", flaky)
    _, inputs = image_dir
    rep = await run_pipeline(parse_pipeline(GREENBEN_FIRST), inputs, tmp_path / "out", workers=3)
    assert rep.failed_ids() == ["img003"]
    assert "447" in rep.records[3].error
    assert rep.summary.succeeded == len(inputs) - 1


@pytest.mark.asyncio
async def test_huge_sigma_runs_in_bounded_memory(tmp_path: Path, image_dir):
    _, inputs = image_dir
    spec = parse_pipeline(_steps('kind = "ben"\nsigma = 1e10', seed=1))
    rep = await run_pipeline(spec, inputs[:2], tmp_path / "out", workers=2)
    assert rep.summary.succeeded == 2


@pytest.mark.asyncio
async def test_png_output_matches_direct_processing(tmp_path: Path, image_dir):
    _, inputs = image_dir
    spec = parse_pipeline(GREENBEN_FIRST)
    rep = await run_pipeline(spec, inputs[:1], tmp_path / "out", workers=1)
    record = rep.records[0]
    expected, _ = apply_pipeline(spec, load_image(inputs[0][1]), inputs[0][0])
    assert load_image(record.output_path) == expected


@pytest.mark.asyncio
async def test_float_terminal_writes_npy(tmp_path: Path, image_dir):
    _, inputs = image_dir
    spec = parse_pipeline(PREPROCESS)
    rep = await run_pipeline(spec, inputs[:2], tmp_path / "out", workers=2)
    path = Path(rep.records[0].output_path)
    assert path.suffix == ".npy"
    arr = np.load(path, allow_pickle=False)
    assert arr.shape == (224, 224, 3) and arr.dtype == np.float64
    expected, _ = apply_pipeline(spec, load_image(inputs[0][1]), inputs[0][0])
    np.testing.assert_array_equal(arr, expected.samples)


@pytest.mark.asyncio
async def test_unwritable_out_dir_is_fatal(tmp_path: Path, image_dir):
    _, inputs = image_dir
    blocker = tmp_path / "blocker"
    blocker.write_text("x")
    with pytest.raises(ImageIOError):
        await run_pipeline(parse_pipeline(GREENBEN_FIRST), inputs, blocker / "out")


@pytest.mark.asyncio
async def test_duplicate_ids_rejected(tmp_path: Path, image_dir):
    _, inputs = image_dir
    with pytest.raises(ContractError):
        await run_pipeline(parse_pipeline(GREENBEN_FIRST), [inputs[0], inputs[0]], tmp_path / "out")


@pytest.mark.asyncio
async def test_write_report_lines_and_summary(tmp_path: Path, image_dir):
    _, inputs = image_dir
    rep = await run_pipeline(parse_pipeline(GREENBEN_FIRST), inputs, tmp_path / "out", workers=2)
    path = write_report(rep, tmp_path / "report.jsonl")
    lines = path.read_text().splitlines()
    assert len(lines) == len(inputs)
    first = json.loads(lines[0])
    assert set(first) >= {"id", "status", "output_path", "flips", "ms"}
    assert [f["step"] for f in first["flips"]] == [2, 3]
    summary = json.loads((tmp_path / "report.summary.json").read_text())
    assert summary["total"] == len(inputs) and summary["rss_mb"] > 0
