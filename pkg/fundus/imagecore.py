"""Image representation, codec and the geometric preprocessing ops.

ImageBuffer wraps a read-only numpy array laid out (height, width, channels),
which is row-major and channel-interleaved. INT8 buffers hold uint8 samples,
FLOAT buffers hold float64 samples on a nominal [0, 1] scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from fundus.errors import ContractError, DecodeError, ImageIOError

SUPPORTED_FORMATS = {"PNG", "JPEG", "BMP"}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class Depth(str, Enum):
    INT8 = "int8"
    FLOAT = "float"


# ---------------------------------------------------------------------------
# ImageBuffer
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ImageBuffer:
    samples: np.ndarray  # (height, width, channels)
    depth: Depth

    def __post_init__(self) -> None:
        s = self.samples
        if s.ndim != 3 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ContractError(f"samples must be (height, width, channels), got shape {s.shape}")
        if s.shape[2] not in (1, 3):
            raise ContractError(f"channels must be 1 or 3, got {s.shape[2]}")
        if self.depth is Depth.INT8 and s.dtype != np.uint8:
            raise ContractError(f"INT8 buffer needs uint8 samples, got {s.dtype}")
        if self.depth is Depth.FLOAT:
            if s.dtype != np.float64:
                raise ContractError(f"FLOAT buffer needs float64 samples, got {s.dtype}")
            if not np.all(np.isfinite(s)):
                raise ContractError("FLOAT samples must be finite")
        if s.flags.writeable:
            s = s.copy()
            s.flags.writeable = False
            object.__setattr__(self, "samples", s)

    @classmethod
    def from_array(cls, arr: np.ndarray, depth: Depth | None = None) -> ImageBuffer:
        """Build a buffer from a (H, W) or (H, W, C) array; depth follows the dtype."""
        a = np.asarray(arr)
        if a.ndim == 2:
            a = a[:, :, np.newaxis]
        if depth is None:
            depth = Depth.INT8 if a.dtype == np.uint8 else Depth.FLOAT
        if depth is Depth.FLOAT:
            a = a.astype(np.float64, copy=False)
        return cls(samples=a, depth=depth)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return self.samples.shape[2]

    def to_array(self) -> np.ndarray:
        """Writable copy of the samples."""
        return self.samples.copy()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return (
            self.depth is other.depth
            and self.samples.shape == other.samples.shape
            and bool(np.array_equal(self.samples, other.samples))
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"ImageBuffer({self.width}x{self.height}x{self.channels}, {self.depth.value})"


@dataclass(frozen=True)
class NormalizationParams:
    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.mean) != len(self.std) or len(self.mean) not in (1, 3):
            raise ContractError(
                f"mean/std must both have 1 or 3 entries, got {len(self.mean)}/{len(self.std)}"
            )
        if any(s <= 0 for s in self.std):
            raise ContractError(f"std entries must be > 0, got {self.std}")

    @classmethod
    def imagenet(cls, channels: int = 3) -> NormalizationParams:
        """ImageNet statistics; a 1-channel image gets the green entry."""
        if channels == 1:
            return cls(mean=(IMAGENET_MEAN[1],), std=(IMAGENET_STD[1],))
        return cls(mean=IMAGENET_MEAN, std=IMAGENET_STD)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def to_int8(x: np.ndarray) -> np.ndarray:
    """Round half away from zero, clamp to [0, 255] and cast."""
    return np.clip(round_half_away(x), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Codec
# ---------------------------------------------------------------------------

def load_image(path: str | Path) -> ImageBuffer:
    """Decode a PNG/JPEG/BMP file into an INT8 buffer (1 or 3 channels)."""
    p = Path(path)
    if not p.is_file():
        raise ImageIOError("image file not found", p)
    try:
        with Image.open(p) as im:
            if im.format not in SUPPORTED_FORMATS:
                raise DecodeError(f"unsupported format {im.format}", p)
            im.load()
            if im.mode in ("1", "L", "LA"):
                im = im.convert("L")
            elif im.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise DecodeError(f"unsupported sample depth {im.mode}", p)
            elif im.mode != "RGB":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode ({exc})", p) from exc
    except DecodeError:
        raise
    except OSError as exc:
        raise DecodeError(f"corrupt image ({exc})", p) from exc
    return ImageBuffer.from_array(arr, Depth.INT8)


def save_image(img: ImageBuffer, path: str | Path) -> None:
    """Write an INT8 buffer as lossless PNG."""
    if img.depth is not Depth.INT8:
        raise ContractError("save_image needs an INT8 buffer; quantize FLOAT buffers first")
    p = Path(path)
    arr = img.samples[:, :, 0] if img.channels == 1 else img.samples
    try:
        Image.fromarray(np.ascontiguousarray(arr)).save(p, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"cannot write image ({exc})", p) from exc


# ---------------------------------------------------------------------------
# Channel access
# ---------------------------------------------------------------------------

def extract_green(img: ImageBuffer) -> ImageBuffer:
    if img.channels != 3:
        raise ContractError("extract_green needs a 3-channel image")
    return ImageBuffer(samples=img.samples[:, :, 1:2].copy(), depth=img.depth)


def replicate_to_rgb(img: ImageBuffer) -> ImageBuffer:
    if img.channels != 1:
        raise ContractError("replicate_to_rgb needs a 1-channel image")
    return ImageBuffer(samples=np.repeat(img.samples, 3, axis=2), depth=img.depth)


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def _source_coords(out_n: int, in_n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-centred source taps: (i0, i1, frac) per output index."""
    scale = in_n / out_n
    src = (np.arange(out_n, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_n - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, in_n - 1)
    return i0, i1, src - i0


def resize_bilinear(img: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    """Bilinear resize, align-corners false, depth preserved."""
    if out_w < 1 or out_h < 1:
        raise ContractError(f"target size must be >= 1x1, got {out_w}x{out_h}")
    if out_w == img.width and out_h == img.height:
        return img

    x0, x1, fx = _source_coords(out_w, img.width)
    y0, y1, fy = _source_coords(out_h, img.height)
    s = img.samples.astype(np.float64)
    fx = fx[np.newaxis, :, np.newaxis]
    fy = fy[:, np.newaxis, np.newaxis]

    top = (1.0 - fx) * s[y0][:, x0] + fx * s[y0][:, x1]
    bottom = (1.0 - fx) * s[y1][:, x0] + fx * s[y1][:, x1]
    out = (1.0 - fy) * top + fy * bottom

    if img.depth is Depth.INT8:
        return ImageBuffer(samples=to_int8(out), depth=Depth.INT8)
    return ImageBuffer(samples=out, depth=Depth.FLOAT)


def flip_horizontal(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer(samples=img.samples[:, ::-1, :].copy(), depth=img.depth)


def flip_vertical(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer(samples=img.samples[::-1, :, :].copy(), depth=img.depth)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def _unit_scale(img: ImageBuffer) -> np.ndarray:
    if img.depth is Depth.INT8:
        return img.samples.astype(np.float64) / 255.0
    return img.samples


def _check_params(img: ImageBuffer, p: NormalizationParams) -> None:
    if len(p.mean) != img.channels:
        raise ContractError(
            f"normalization has {len(p.mean)} channel(s), image has {img.channels}"
        )


def normalize(img: ImageBuffer, p: NormalizationParams) -> ImageBuffer:
    """Per-channel (x - mean) / std on the unit scale. Output may leave [0, 1]."""
    _check_params(img, p)
    mean = np.asarray(p.mean, dtype=np.float64)
    std = np.asarray(p.std, dtype=np.float64)
    return ImageBuffer(samples=(_unit_scale(img) - mean) / std, depth=Depth.FLOAT)


def denormalize(img: ImageBuffer, p: NormalizationParams) -> ImageBuffer:
    """Inverse of normalize: x * std + mean, back on the unit scale."""
    if img.depth is not Depth.FLOAT:
        raise ContractError("denormalize needs a FLOAT buffer")
    _check_params(img, p)
    mean = np.asarray(p.mean, dtype=np.float64)
    std = np.asarray(p.std, dtype=np.float64)
    return ImageBuffer(samples=img.samples * std + mean, depth=Depth.FLOAT)


def quantize(img: ImageBuffer) -> ImageBuffer:
    """Unit-scale FLOAT -> INT8 (clamp to [0, 1], x255, round half away)."""
    if img.depth is Depth.INT8:
        return img
    return ImageBuffer(samples=to_int8(np.clip(img.samples, 0.0, 1.0) * 255.0), depth=Depth.INT8)
