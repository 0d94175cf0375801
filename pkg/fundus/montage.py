"""Side-by-side comparison montage: the original plus one tile per enhancement method.

Tiles run left to right with 4-pixel white separators. Each tile has a label
strip above it rendered from a built-in 5x7 bitmap font, so no font files
are needed. Tile pixels are exactly the enhance outputs (1-channel outputs
replicated to RGB).
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from fundus.enhance import BenParams, ClaheParams, Method, enhance_by_name
from fundus.errors import ContractError
from fundus.imagecore import Depth, ImageBuffer, replicate_to_rgb

logger = logging.getLogger("fundus.montage")

SEPARATOR = 4
GLYPH_W = 5
GLYPH_H = 7
LABEL_SCALE = 2
STRIP_PAD = 4
BACKGROUND = 255
INK = 0

# fmt: off
GLYPHS: dict[str, tuple[str, ...]] = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "B": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
    "C": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "D": ("###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."),
    "E": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "G": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "I": (".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "J": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "K": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "M": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "N": ("#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"),
    "O": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "P": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "Q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "R": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "S": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "T": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "V": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "W": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."),
    "X": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "Y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "Z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": ("#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
    "-": (".....", ".....", ".....", "#####", ".....", ".....", "....."),
    " ": (".....", ".....", ".....", ".....", ".....", ".....", "....."),
}
# fmt: on


def _glyph(ch: str) -> np.ndarray:
    try:
        rows = GLYPHS[ch]
    except KeyError:
        raise ContractError(f"no glyph for {ch!r}") from None
    return np.array([[c == "#" for c in row] for row in rows], dtype=bool)


def render_text(text: str, scale: int = 1) -> np.ndarray:
    """Boolean ink mask (7*scale, width) with one blank column between glyphs."""
    text = text.upper()
    if not text:
        return np.zeros((GLYPH_H * scale, 0), dtype=bool)
    gap = np.zeros((GLYPH_H, 1), dtype=bool)
    parts: list[np.ndarray] = []
    for i, ch in enumerate(text):
        if i:
            parts.append(gap)
        parts.append(_glyph(ch))
    mask = np.hstack(parts)
    return np.kron(mask, np.ones((scale, scale), dtype=bool)).astype(bool)


def strip_height(scale: int = LABEL_SCALE) -> int:
    return GLYPH_H * scale + 2 * STRIP_PAD


def label_strip(text: str, width: int, scale: int = LABEL_SCALE) -> np.ndarray:
    """(strip_height, width, 3) uint8 strip with the label centred; long labels shrink then clip."""
    strip = np.full((strip_height(scale), width, 3), BACKGROUND, dtype=np.uint8)
    mask = render_text(text, scale)
    if mask.shape[1] > width and scale > 1:
        small = render_text(text, 1)
        pad = (mask.shape[0] - small.shape[0]) // 2
        mask = np.zeros((mask.shape[0], small.shape[1]), dtype=bool)
        mask[pad:pad + small.shape[0]] = small
    mask = mask[:, :width]
    x0 = (width - mask.shape[1]) // 2
    region = strip[STRIP_PAD:STRIP_PAD + mask.shape[0], x0:x0 + mask.shape[1]]
    region[mask] = INK
    return strip


def _as_rgb8(img: ImageBuffer) -> ImageBuffer:
    if img.depth is not Depth.INT8:
        raise ContractError("montage tiles must be INT8")
    return replicate_to_rgb(img) if img.channels == 1 else img


def tile_origin(index: int, tile_width: int, scale: int = LABEL_SCALE) -> tuple[int, int]:
    """(x, y) of tile `index`'s top-left pixel, below its label strip."""
    return index * (tile_width + SEPARATOR), strip_height(scale)


def compose(tiles: Sequence[tuple[str, ImageBuffer]], scale: int = LABEL_SCALE) -> ImageBuffer:
    """Lay labelled tiles left to right. All tiles must share a size."""
    if not tiles:
        raise ContractError("montage needs at least one tile")
    rgb = [(label, _as_rgb8(img)) for label, img in tiles]
    h, w = rgb[0][1].height, rgb[0][1].width
    if any((img.height, img.width) != (h, w) for _, img in rgb):
        raise ContractError("montage tiles differ in size")

    n = len(rgb)
    sh = strip_height(scale)
    canvas = np.full((sh + h, n * w + (n - 1) * SEPARATOR, 3), BACKGROUND, dtype=np.uint8)
    for i, (label, img) in enumerate(rgb):
        x, y = tile_origin(i, w, scale)
        canvas[:sh, x:x + w] = label_strip(label, w, scale)
        canvas[y:y + h, x:x + w] = img.samples
    return ImageBuffer(samples=canvas, depth=Depth.INT8)


def parse_methods(names: Sequence[str]) -> list[Method]:
    if not names:
        raise ContractError("montage needs at least one method")
    methods = []
    for name in names:
        try:
            methods.append(Method(name.lower()))
        except ValueError:
            known = ", ".join(m.value for m in Method)
            raise ContractError(f"unknown method {name!r} (known: {known})") from None
    return methods


def build_montage(
    img: ImageBuffer,
    methods: Sequence[Method | str],
    ben: BenParams | None = None,
    clahe_params: ClaheParams | None = None,
) -> ImageBuffer:
    """Original tile followed by one tile per method, in the order given."""
    parsed = parse_methods([m.value if isinstance(m, Method) else m for m in methods])
    tiles = [("original", img)]
    for method in parsed:
        logger.debug("Montage tile %s", method.value)
        tiles.append((method.value, enhance_by_name(img, method, ben, clahe_params)))
    return compose(tiles)
