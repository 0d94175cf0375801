"""Fundus enhancement methods: Gaussian blur, Ben, CLAHE, GreenBen, GreenClahe.

All ops are pure. INT8 results are rounded half away from zero exactly once,
at the end of each op; intermediate math is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Literal

import numpy as np
from scipy import ndimage

from fundus.errors import ContractError
from fundus.imagecore import (
    Depth,
    ImageBuffer,
    extract_green,
    replicate_to_rgb,
    round_half_away,
    to_int8,
)

AUTO: Literal["auto"] = "auto"
HIST_BINS = 256


class Method(str, Enum):
    NONE = "none"
    GREEN = "green"
    BEN = "ben"
    CLAHE = "clahe"
    GREENBEN = "greenben"
    GREENCLAHE = "greenclahe"


@dataclass(frozen=True)
class BenParams:
    """out = alpha * I + beta * blur(I, sigma) + bias, clamped.

    bias is in 8-bit levels; FLOAT inputs get bias / 255. sigma="auto"
    resolves to max(width, height) / 30.
    """

    sigma: float | Literal["auto"] = AUTO
    alpha: float = 4.0
    beta: float = -4.0
    bias: float = 128.0

    def __post_init__(self) -> None:
        if self.sigma != AUTO:
            if isinstance(self.sigma, str) or not 0 < self.sigma < math.inf:
                raise ContractError(f"sigma must be > 0 or 'auto', got {self.sigma!r}")

    def resolve_sigma(self, img: ImageBuffer) -> float:
        if self.sigma == AUTO:
            return max(img.width, img.height) / 30.0
        return float(self.sigma)

    def describe(self) -> str:
        return f"sigma={self.sigma} alpha={self.alpha:g} beta={self.beta:g} bias={self.bias:g}"


@dataclass(frozen=True)
class ClaheParams:
    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 2.0  # multiple of the uniform bin height

    def __post_init__(self) -> None:
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ContractError(f"tile grid must be >= 1x1, got {self.tiles_x}x{self.tiles_y}")
        if not self.clip_limit >= 1.0:
            raise ContractError(f"clip_limit must be >= 1, got {self.clip_limit}")

    def describe(self) -> str:
        return f"tiles={self.tiles_x}x{self.tiles_y} clip={self.clip_limit:g}"


# ---------------------------------------------------------------------------
# Gaussian blur
# ---------------------------------------------------------------------------

FOLD_CHUNK = 1 << 20
# Past this radius, and with sigma this many periods wide, the folded kernel
# is flat to within 1e-5 relative.
FLAT_FOLD_RADIUS = 1 << 22
FLAT_FOLD_PERIODS = 1024


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D kernel, radius ceil(3 sigma), L1-normalised.

    A sigma so small that sigma**2 underflows gives the identity kernel [1.0].
    """
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    total = w.sum()
    if radius == 0 or not np.isfinite(total):
        return np.ones(1)
    return w / total


def folded_weights(sigma: float, period: int) -> np.ndarray:
    """Kernel mass per offset residue modulo `period`, summed in bounded chunks."""
    radius = math.ceil(3.0 * sigma)
    if radius > FLAT_FOLD_RADIUS and sigma >= FLAT_FOLD_PERIODS * period:
        return np.full(period, 1.0 / period)
    acc = np.zeros(period)
    for start in range(-radius, radius + 1, FOLD_CHUNK):
        k = np.arange(start, min(start + FOLD_CHUNK, radius + 1), dtype=np.int64)
        x = k.astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.exp(-(x * x) / (2.0 * sigma * sigma))
        acc += np.bincount(k % period, weights=w, minlength=period)
    return acc / acc.sum()


def axis_kernel(sigma: float, n: int) -> np.ndarray:
    """Kernel for a line of n samples, never longer than 2n - 1 taps.

    Reflect-101 indexing repeats with period 2(n - 1), so offsets that agree
    modulo the period read the same sample and their weights can be summed.
    Folded onto offsets -(n-1)..n-1 the result is unchanged.
    """
    if n == 1:
        return np.ones(1)
    if math.ceil(3.0 * sigma) < n:
        return gaussian_kernel(sigma)
    residues = folded_weights(sigma, 2 * (n - 1))
    # offsets +(n-1) and -(n-1) share a residue; split it between both ends
    k = np.concatenate([residues[n - 1:], residues[:n]])
    k[0] *= 0.5
    k[-1] *= 0.5
    return k


def _blur_planes(samples: np.ndarray, sigma: float) -> np.ndarray:
    # "mirror" is reflect-101: the edge sample is not repeated
    h, w = samples.shape[:2]
    out = ndimage.correlate1d(samples.astype(np.float64), axis_kernel(sigma, w), axis=1, mode="mirror")
    return ndimage.correlate1d(out, axis_kernel(sigma, h), axis=0, mode="mirror")


def gaussian_blur(img: ImageBuffer, sigma: float) -> ImageBuffer:
    """Separable Gaussian blur, reflect-101 borders, per channel."""
    if not 0 < sigma < math.inf:
        raise ContractError(f"sigma must be finite and > 0, got {sigma}")
    out = _blur_planes(img.samples, sigma)
    if img.depth is Depth.INT8:
        return ImageBuffer(samples=to_int8(out), depth=Depth.INT8)
    return ImageBuffer(samples=out, depth=Depth.FLOAT)


# ---------------------------------------------------------------------------
# Ben enhancement
# ---------------------------------------------------------------------------

def ben_enhance(img: ImageBuffer, p: BenParams | None = None) -> ImageBuffer:
    p = p or BenParams()
    sigma = p.resolve_sigma(img)
    blurred = _blur_planes(img.samples, sigma)
    original = img.samples.astype(np.float64)
    if img.depth is Depth.INT8:
        out = p.alpha * original + p.beta * blurred + p.bias
        return ImageBuffer(samples=to_int8(out), depth=Depth.INT8)
    out = p.alpha * original + p.beta * blurred + p.bias / 255.0
    return ImageBuffer(samples=np.clip(out, 0.0, 1.0), depth=Depth.FLOAT)


# ---------------------------------------------------------------------------
# CLAHE
# ---------------------------------------------------------------------------

def tile_edges(length: int, tiles: int) -> np.ndarray:
    """Tile boundaries along one axis; the last tile absorbs the remainder."""
    base = length // tiles
    edges = np.arange(tiles + 1, dtype=np.intp) * base
    edges[-1] = length
    return edges


def tile_lut(tile: np.ndarray, clip_limit: float) -> np.ndarray:
    """Clipped-histogram equalisation lookup table for one tile (256 ints).

    Excess above the clip is spread uniformly over all bins in one pass;
    whatever lands above the clip again stays in the CDF mass.
    """
    n = tile.size
    hist = np.bincount(tile.ravel(), minlength=HIST_BINS).astype(np.float64)
    limit = clip_limit * n / HIST_BINS
    excess = np.maximum(hist - limit, 0.0).sum()
    hist = np.minimum(hist, limit) + excess / HIST_BINS
    cdf = np.cumsum(hist)
    return np.clip(round_half_away(255.0 * cdf / n), 0, 255)


def _interp_axis(length: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel (tile0, tile1, weight) between neighbouring tile centres."""
    centres = (edges[:-1] + edges[1:]) / 2.0 - 0.5
    pos = np.arange(length, dtype=np.float64)
    last = len(centres) - 1
    i0 = np.clip(np.searchsorted(centres, pos, side="right") - 1, 0, last)
    i1 = np.minimum(i0 + 1, last)
    span = centres[i1] - centres[i0]
    safe = np.where(span > 0, span, 1.0)
    f = np.where(span > 0, (pos - centres[i0]) / safe, 0.0)
    return i0, i1, np.clip(f, 0.0, 1.0)


def _clahe_plane(plane: np.ndarray, p: ClaheParams) -> np.ndarray:
    h, w = plane.shape
    ys = tile_edges(h, p.tiles_y)
    xs = tile_edges(w, p.tiles_x)
    luts = np.empty((p.tiles_y, p.tiles_x, HIST_BINS), dtype=np.float64)
    for ty in range(p.tiles_y):
        for tx in range(p.tiles_x):
            luts[ty, tx] = tile_lut(plane[ys[ty]:ys[ty + 1], xs[tx]:xs[tx + 1]], p.clip_limit)

    y0, y1, fy = _interp_axis(h, ys)
    x0, x1, fx = _interp_axis(w, xs)
    y0, y1, fy = y0[:, None], y1[:, None], fy[:, None]
    x0, x1, fx = x0[None, :], x1[None, :], fx[None, :]
    v = plane.astype(np.intp)

    top = (1.0 - fx) * luts[y0, x0, v] + fx * luts[y0, x1, v]
    bottom = (1.0 - fx) * luts[y1, x0, v] + fx * luts[y1, x1, v]
    return to_int8((1.0 - fy) * top + fy * bottom)


def clahe(img: ImageBuffer, p: ClaheParams | None = None) -> ImageBuffer:
    """Contrast-limited adaptive histogram equalisation, per channel."""
    p = p or ClaheParams()
    if img.depth is not Depth.INT8:
        raise ContractError("clahe needs an INT8 image")
    if img.width < p.tiles_x or img.height < p.tiles_y:
        raise ContractError(
            f"{p.tiles_x}x{p.tiles_y} tiles do not fit a {img.width}x{img.height} image"
        )
    planes = [_clahe_plane(img.samples[:, :, c], p) for c in range(img.channels)]
    return ImageBuffer(samples=np.stack(planes, axis=2), depth=Depth.INT8)


# ---------------------------------------------------------------------------
# Green-channel compositions
# ---------------------------------------------------------------------------

def _require_rgb8(img: ImageBuffer, name: str) -> None:
    if img.channels != 3 or img.depth is not Depth.INT8:
        raise ContractError(f"{name} needs a 3-channel INT8 image, got {img!r}")


def green_ben(img: ImageBuffer, p: BenParams | None = None, replicate: bool = False) -> ImageBuffer:
    _require_rgb8(img, "green_ben")
    out = ben_enhance(extract_green(img), p)
    return replicate_to_rgb(out) if replicate else out


def green_clahe(img: ImageBuffer, p: ClaheParams | None = None, replicate: bool = False) -> ImageBuffer:
    _require_rgb8(img, "green_clahe")
    out = clahe(extract_green(img), p)
    return replicate_to_rgb(out) if replicate else out


def enhance_by_name(
    img: ImageBuffer,
    method: Method | str,
    ben: BenParams | None = None,
    clahe_params: ClaheParams | None = None,
    replicate: bool = False,
) -> ImageBuffer:
    """Dispatch over the comparison menu; `none` returns the input unchanged."""
    method = Method(method)
    if method is Method.NONE:
        return img
    if method is Method.GREEN:
        out = extract_green(img)
        return replicate_to_rgb(out) if replicate else out
    if method is Method.BEN:
        return ben_enhance(img, ben)
    if method is Method.CLAHE:
        return clahe(img, clahe_params)
    if method is Method.GREENBEN:
        return green_ben(img, ben, replicate)
    return green_clahe(img, clahe_params, replicate)
