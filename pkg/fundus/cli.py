"""fundus: command-line surface for fundus-engine.

Commands:
  fundus enhance METHOD IN OUT       Enhance one image (green, ben, clahe, greenben, greenclahe)
  fundus pipeline CONFIG MANIFEST OUT_DIR
                                     Run a preprocessing pipeline over a manifest
  fundus dataset MANIFEST            Validate a manifest and print the split summary
  fundus metrics [PREDICTIONS]       Score a predictions file (or --compare several)
  fundus montage IN OUT METHOD...    Original + enhanced tiles side by side

Exit codes: 0 success, 1 validation/contract error, 2 I/O error.
Diagnostics go to stderr, summaries and data to stdout.
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys
import time
from pathlib import Path
from typing import NoReturn

from fundus import __version__
from fundus.config import RunnerConfig
from fundus.dataset import (
    DatasetSchema,
    filter_split,
    load_manifest,
    schema_by_name,
    split_summary,
)
from fundus.enhance import AUTO, BenParams, ClaheParams, Method, enhance_by_name
from fundus.errors import ContractError, ImageIOError
from fundus.imagecore import load_image, save_image
from fundus.metrics import compare_methods, load_predictions, render_report, report
from fundus.models import MetricsReport, TaskMetrics
from fundus.montage import build_montage
from fundus.pipeline import load_pipeline, run_pipeline, write_report

logger = logging.getLogger("fundus.cli")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2

ENHANCE_METHODS = [m.value for m in Method if m is not Method.NONE]


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors (exit 1), not argparse's default 2."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INVALID)


def _print_table(headers: list[str], rows: list[list[str]]) -> None:
    """Print a formatted table to stdout."""
    if not rows:
        print("  (no results)")
        return
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(str(cell)))
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    print(fmt.format(*headers))
    print(fmt.format(*["-" * w for w in widths]))
    for row in rows:
        print(fmt.format(*[str(c) for c in row]))


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.3f}"


# ---------------------------------------------------------------------------
# Flag parsing
# ---------------------------------------------------------------------------

def _sigma(raw: str) -> float | str:
    if raw.lower() == AUTO:
        return AUTO
    try:
        return float(raw)
    except ValueError:
        raise ContractError(f"--sigma must be 'auto' or a number, got {raw!r}") from None


def _tiles(raw: str) -> tuple[int, int]:
    try:
        x, y = raw.lower().split("x")
        return int(x), int(y)
    except ValueError:
        raise ContractError(f"--tiles must look like 8x8, got {raw!r}") from None


def _ben_params(args: argparse.Namespace) -> BenParams:
    return BenParams(sigma=_sigma(args.sigma), alpha=args.alpha, beta=args.beta, bias=args.bias)


def _clahe_params(args: argparse.Namespace) -> ClaheParams:
    tx, ty = _tiles(args.tiles)
    return ClaheParams(tiles_x=tx, tiles_y=ty, clip_limit=args.clip)


def _schema(args: argparse.Namespace) -> DatasetSchema:
    if args.schema == "custom":
        return DatasetSchema("custom", dr_classes=args.dr_classes, dme_classes=args.dme_classes)
    return schema_by_name(args.schema)


def _add_method_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("enhancement parameters")
    g.add_argument("--sigma", default=AUTO, help="Gaussian sigma or 'auto' = max(w,h)/30 (ben, greenben)")
    g.add_argument("--alpha", type=float, default=4.0, help="Original-image weight (default 4)")
    g.add_argument("--beta", type=float, default=-4.0, help="Blur weight (default -4)")
    g.add_argument("--bias", type=float, default=128.0, help="Additive offset in 8-bit levels (default 128)")
    g.add_argument("--tiles", default="8x8", help="CLAHE tile grid XxY (default 8x8)")
    g.add_argument("--clip", type=float, default=2.0, help="CLAHE clip limit (default 2.0)")


def _add_schema_flags(p: argparse.ArgumentParser, default: str = "custom") -> None:
    g = p.add_argument_group("dataset schema")
    g.add_argument("--schema", default=default, choices=["messidor", "idrid", "deepdrid", "custom"])
    g.add_argument("--dr-classes", type=int, default=5, help="DR classes for --schema custom (default 5)")
    g.add_argument("--dme-classes", type=int, default=None, help="DME classes for --schema custom (default none)")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_enhance(args: argparse.Namespace) -> int:
    """Enhance one image and write a PNG."""
    try:
        method = Method(args.method.lower())
    except ValueError:
        raise ContractError(f"unknown method {args.method!r} (choose from {', '.join(ENHANCE_METHODS)})") from None
    if method is Method.NONE:
        raise ContractError("enhance needs a method other than none")
    ben = _ben_params(args)
    clahe_params = _clahe_params(args)

    img = load_image(args.input)
    t0 = time.perf_counter()
    out = enhance_by_name(img, method, ben, clahe_params, args.replicate)
    ms = (time.perf_counter() - t0) * 1000.0
    save_image(out, args.output)

    if method in (Method.BEN, Method.GREENBEN):
        params = ben.describe()
    elif method in (Method.CLAHE, Method.GREENCLAHE):
        params = clahe_params.describe()
    else:
        params = "-"
    print(f"{method.value}  {params}  {img.width}x{img.height}x{out.channels}  {ms:.1f} ms  -> {args.output}")
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    """Run a pipeline over a manifest. Per-image failures do not change the exit code."""
    spec = load_pipeline(args.config)
    records = load_manifest(args.manifest, _schema(args))
    if args.split:
        records = filter_split(records, args.split)
    inputs = [(r.id, r.image_path) for r in records]

    out_dir = Path(args.out_dir)
    result = asyncio.run(run_pipeline(spec, inputs, out_dir, workers=args.workers))
    report_path = Path(args.report) if args.report else out_dir / "report.jsonl"
    write_report(result, report_path)

    s = result.summary
    print(f"{s.succeeded}/{s.total} ok, {s.failed} failed  "
          f"({s.wall_seconds:.2f}s, {s.images_per_second:.1f} img/s, {s.workers} workers)")
    for image_id in result.failed_ids():
        print(f"  failed: {image_id}")
    print(f"Report: {report_path}")
    return EXIT_OK


def cmd_dataset(args: argparse.Namespace) -> int:
    """Validate a manifest and summarise its splits."""
    schema = _schema(args)
    records = load_manifest(args.manifest, schema)
    rep = split_summary(records, schema)
    if args.json:
        print(rep.model_dump_json(indent=2))
        return EXIT_OK

    print(f"{rep.dataset}: {rep.total} records")
    rows = []
    for s in rep.splits:
        dme = " ".join(str(n) for n in s.dme_histogram) if s.dme_histogram is not None else "-"
        rows.append([s.split, str(s.count), f"{s.percent:.2f}%", " ".join(str(n) for n in s.dr_histogram), dme])
    _print_table(["SPLIT", "COUNT", "PERCENT", "DR HISTOGRAM", "DME HISTOGRAM"], rows)
    for w in rep.warnings:
        print(f"warning: {w}")
    return EXIT_OK


def _task_row(label: str, joint: float | None, m: TaskMetrics) -> list[str]:
    return [label, _fmt(joint), _fmt(m.acc), _fmt(m.auc), _fmt(m.pre), _fmt(m.rec), _fmt(m.f1)]


def _print_metrics(rep: MetricsReport) -> None:
    print(f"{rep.dataset}: {rep.records} records ({rep.average} average)")
    rows = [_task_row("DR", rep.joint_acc, rep.dr)]
    if rep.dme is not None:
        rows.append(_task_row("DME", rep.joint_acc, rep.dme))
    _print_table(["TASK", "JOINT ACC", "ACC", "AUC", "PRE", "REC", "F1"], rows)


def _parse_compare(items: list[str]) -> dict[str, Path]:
    out: dict[str, Path] = {}
    for item in items:
        method, sep, path = item.partition("=")
        if not sep or not method or not path:
            raise ContractError(f"--compare expects METHOD=FILE, got {item!r}")
        if method in out:
            raise ContractError(f"--compare lists {method!r} twice")
        out[method] = Path(path)
    return out


def cmd_metrics(args: argparse.Namespace) -> int:
    """Score one predictions file, or compare several enhancement methods."""
    schema = _schema(args)
    if args.compare:
        sources = _parse_compare(args.compare)
        reports = {m: report(load_predictions(p, schema), schema, args.average) for m, p in sources.items()}
        table = compare_methods(reports, args.baseline)
        rows = []
        for r in table.rows:
            row = [r.method, _fmt(r.joint_acc), _fmt(r.dr.acc), _fmt(r.dr.auc), _fmt(r.dr.f1), _fmt(r.dr_acc_delta)]
            if schema.has_dme:
                row += [_fmt(r.dme.acc), _fmt(r.dme.auc), _fmt(r.dme.f1), _fmt(r.dme_acc_delta)]
            rows.append(row)
        headers = ["METHOD", "JOINT ACC", "DR ACC", "DR AUC", "DR F1", "DR dACC"]
        if schema.has_dme:
            headers += ["DME ACC", "DME AUC", "DME F1", "DME dACC"]
        _print_table(headers, rows)
        text = table.model_dump_json(exclude_none=True, indent=2) + "\n"
    else:
        if not args.predictions:
            raise ContractError("metrics needs a predictions file or --compare METHOD=FILE")
        rep = report(load_predictions(args.predictions, schema), schema, args.average)
        _print_metrics(rep)
        text = render_report(rep)

    if args.out:
        try:
            Path(args.out).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise ImageIOError(f"cannot write metrics report ({exc})", args.out) from exc
        print(f"Report: {args.out}")
    return EXIT_OK


def cmd_montage(args: argparse.Namespace) -> int:
    """Write a labelled original + methods montage."""
    img = load_image(args.input)
    out = build_montage(img, args.methods, _ben_params(args), _clahe_params(args))
    save_image(out, args.output)
    print(f"montage  original {' '.join(m.lower() for m in args.methods)}  {out.width}x{out.height}  -> {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    config = RunnerConfig()
    parser = _Parser(prog="fundus", description="Fundus enhancement, preprocessing and DR/DME evaluation")
    parser.add_argument("--version", action="version", version=f"fundus-engine {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    # enhance
    p_enh = sub.add_parser("enhance", help="Enhance one image")
    p_enh.add_argument("method", help=", ".join(ENHANCE_METHODS))
    p_enh.add_argument("input")
    p_enh.add_argument("output")
    p_enh.add_argument("--replicate", action="store_true", help="Write 1-channel results as RGB")
    _add_method_flags(p_enh)

    # pipeline
    p_pipe = sub.add_parser("pipeline", help="Run a preprocessing pipeline over a manifest")
    p_pipe.add_argument("config", help="Pipeline TOML")
    p_pipe.add_argument("manifest", help="Manifest CSV")
    p_pipe.add_argument("out_dir")
    p_pipe.add_argument("--workers", type=int, default=None,
                        help=f"Concurrent images (default FE_WORKERS or cores, now {config.workers})")
    p_pipe.add_argument("--split", type=str.upper, choices=["TRAIN", "TEST"], default=None)
    p_pipe.add_argument("--report", default=None, help="Report path (default OUT_DIR/report.jsonl)")
    _add_schema_flags(p_pipe)

    # dataset
    p_ds = sub.add_parser("dataset", help="Validate a manifest and summarise splits")
    p_ds.add_argument("manifest")
    p_ds.add_argument("--json", action="store_true", help="Print the split report as JSON")
    _add_schema_flags(p_ds)

    # metrics
    p_met = sub.add_parser("metrics", help="Score predictions (Joint Acc, Acc, AUC, Pre, Rec, F1)")
    p_met.add_argument("predictions", nargs="?", default=None)
    p_met.add_argument("--average", choices=["macro", "micro"], default="macro")
    p_met.add_argument("--out", default=None, help="Write the JSON report here")
    p_met.add_argument("--compare", nargs="+", default=None, metavar="METHOD=FILE",
                       help="Compare predictions from several enhancement methods")
    p_met.add_argument("--baseline", default="none", help="Method the Acc deltas are taken against")
    _add_schema_flags(p_met)

    # montage
    p_mon = sub.add_parser("montage", help="Original + enhanced tiles side by side")
    p_mon.add_argument("input")
    p_mon.add_argument("output")
    p_mon.add_argument("methods", nargs="+", help=", ".join(ENHANCE_METHODS))
    _add_method_flags(p_mon)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        config = RunnerConfig()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=config.log_level, format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)

    args = build_parser().parse_args(argv)
    commands = {
        "enhance": cmd_enhance,
        "pipeline": cmd_pipeline,
        "dataset": cmd_dataset,
        "metrics": cmd_metrics,
        "montage": cmd_montage,
    }
    try:
        return commands[args.command](args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
