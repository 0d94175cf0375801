#!/usr/bin/env python3
"""Write a small synthetic fundus dataset for trying the CLI end to end.

Produces, under OUT_DIR:
    images/*.png          synthetic fundus photographs
    manifest.csv          Messidor-shaped manifest (DR 0-3, DME 0-2)
    pipeline.toml         GreenBen training preprocess
    head_weights.txt      zero-initialised attention head weights
    pred_none.csv         predictions from a weak model
    pred_greenben.csv     predictions from a stronger model

Usage:
    python scripts/make_fixtures.py demo/ --count 40 --seed 7
    fundus dataset demo/manifest.csv --schema messidor
    fundus pipeline demo/pipeline.toml demo/manifest.csv demo/out --schema messidor
    fundus metrics --schema messidor --compare none=demo/pred_none.csv greenben=demo/pred_greenben.csv
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from fundus.attnref import HeadWeights
from fundus.dataset import MESSIDOR, ManifestRecord, Split, write_manifest
from fundus.imagecore import ImageBuffer, save_image
from fundus.tensorio import save_tensors

PIPELINE_TOML = """\
# GreenBen then the usual training preprocess
seed = {seed}

[[steps]]
kind = "green_ben"
replicate = true

[[steps]]
kind = "resize"
width = {size}
height = {size}

[[steps]]
kind = "random_hflip"

[[steps]]
kind = "random_vflip"

[[steps]]
kind = "normalize"
"""


def synthetic_fundus(rng: np.random.Generator, size: int, grade: int) -> ImageBuffer:
    """Orange disc on black, a few dark vessels, and `grade` clusters of bright lesions."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    dist = np.hypot(yy - c, xx - c) / (size / 2.0)
    disc = np.clip(1.0 - dist, 0.0, 1.0) ** 0.4
    img = np.stack([210 * disc, 105 * disc, 45 * disc], axis=2)

    for _ in range(4):
        angle = rng.uniform(0, np.pi)
        offset = rng.uniform(-0.3, 0.3) * size
        d = np.abs((xx - c) * np.sin(angle) - (yy - c) * np.cos(angle) - offset)
        img *= 1.0 - 0.35 * np.exp(-(d ** 2) / (2.0 * (size / 90.0) ** 2))[..., None]

    for _ in range(grade * 3):
        cy, cx = rng.uniform(0.25, 0.75, size=2) * size
        spot = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * (size / 120.0) ** 2))
        img += np.array([40.0, 60.0, 20.0]) * spot[..., None] * disc[..., None]

    img += rng.normal(0.0, 2.0, size=img.shape)
    return ImageBuffer.from_array(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def noisy_predictions(rng: np.random.Generator, labels: np.ndarray, k: int, skill: float) -> np.ndarray:
    """Softmax rows whose true-class logit is boosted by `skill`."""
    logits = rng.normal(0.0, 1.0, size=(len(labels), k))
    logits[np.arange(len(labels)), labels] += skill
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def write_predictions(path: Path, records: list[ManifestRecord], rng: np.random.Generator, skill: float) -> None:
    dr = np.array([r.dr_grade for r in records])
    dme = np.array([r.dme_grade for r in records])
    p_dr = noisy_predictions(rng, dr, MESSIDOR.dr_classes, skill)
    p_dme = noisy_predictions(rng, dme, MESSIDOR.dme_classes, skill)

    df = pd.DataFrame({"id": [r.id for r in records], "true_dr": dr})
    for j in range(MESSIDOR.dr_classes):
        df[f"p_dr_{j}"] = p_dr[:, j]
    df["true_dme"] = dme
    for j in range(MESSIDOR.dme_classes):
        df[f"p_dme_{j}"] = p_dme[:, j]
    df.to_csv(path, index=False, float_format="%.10f", lineterminator="\n")


def main() -> int:
    parser = argparse.ArgumentParser(description="Write a synthetic fundus fixture set")
    parser.add_argument("out_dir")
    parser.add_argument("--count", type=int, default=40, help="Number of images (default 40)")
    parser.add_argument("--size", type=int, default=256, help="Image side in pixels (default 256)")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--channels", type=int, default=32, help="Attention head channels (default 32)")
    args = parser.parse_args()

    if args.count < 2:
        print("--count must be at least 2", file=sys.stderr)
        return 1

    out = Path(args.out_dir)
    images = out / "images"
    images.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    records = []
    n_test = max(1, args.count // 5)
    for i in range(args.count):
        dr = int(rng.integers(MESSIDOR.dr_classes))
        dme = int(rng.integers(MESSIDOR.dme_classes))
        image_id = f"syn{i:04d}"
        path = images / f"{image_id}.png"
        save_image(synthetic_fundus(rng, args.size, dr), path)
        split = Split.TEST if i >= args.count - n_test else Split.TRAIN
        records.append(ManifestRecord(id=image_id, image_path=path, dr_grade=dr, split=split, dme_grade=dme))
        if (i + 1) % 10 == 0:
            print(f"  {i + 1}/{args.count} images")

    write_manifest(records, out / "manifest.csv", MESSIDOR)
    (out / "pipeline.toml").write_text(PIPELINE_TOML.format(seed=args.seed, size=min(224, args.size)))

    head = HeadWeights.zeros(args.channels, reduction=min(16, args.channels))
    save_tensors(head.to_tensors(), out / "head_weights.txt")

    write_predictions(out / "pred_none.csv", records, rng, skill=1.0)
    write_predictions(out / "pred_greenben.csv", records, rng, skill=2.0)

    print(f"Wrote {args.count} images, manifest, pipeline, weights and predictions to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
