from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from fundus.imagecore import Depth, ImageBuffer


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240607)


def random_rgb(rng: np.random.Generator, h: int, w: int, channels: int = 3) -> ImageBuffer:
    return ImageBuffer.from_array(rng.integers(0, 256, size=(h, w, channels), dtype=np.uint8))


def fundus_like(size: int, seed: int) -> ImageBuffer:
    """Reddish disc on black with a darker vessel-ish band and a little noise."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    dist = np.hypot(yy - c, xx - c) / (size / 2.0)
    disc = np.clip(1.0 - dist, 0.0, 1.0) ** 0.5
    band = 0.25 * np.exp(-((yy - xx * 0.6 - size * 0.2) ** 2) / (2.0 * (size / 40.0) ** 2))
    base = np.stack([200 * disc, 110 * disc, 50 * disc], axis=2) * (1.0 - band[..., None])
    noisy = base + r.normal(0.0, 3.0, size=base.shape)
    return ImageBuffer.from_array(np.clip(np.rint(noisy), 0, 255).astype(np.uint8))


def write_png(path: Path, img: ImageBuffer) -> Path:
    arr = img.samples[:, :, 0] if img.channels == 1 else img.samples
    Image.fromarray(np.ascontiguousarray(arr)).save(path, format="PNG")
    return path


@pytest.fixture
def sample_rgb(rng: np.random.Generator) -> ImageBuffer:
    return random_rgb(rng, 16, 12)


@pytest.fixture
def image_dir(tmp_path: Path) -> tuple[Path, list[tuple[str, Path]]]:
    """Eight small fundus-like PNGs on disk, as (id, path) pairs."""
    d = tmp_path / "images"
    d.mkdir()
    inputs = []
    for i in range(8):
        image_id = f"img{i:03d}"
        inputs.append((image_id, write_png(d / f"{image_id}.png", fundus_like(32, seed=i))))
    return d, inputs


@pytest.fixture
def float_plane(rng: np.random.Generator) -> ImageBuffer:
    return ImageBuffer(samples=rng.random((9, 9, 1)), depth=Depth.FLOAT)
