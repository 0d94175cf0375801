"""Straight-line scalar reference implementations used as test oracles.

Plain Python floats and lists, no numpy vectorisation, so they share no code
path with the package. Where exact equality is asserted the float expressions
are written in the same order as the vectorised code.
"""

from __future__ import annotations

import math


def round_half_away(x: float) -> float:
    return math.copysign(math.floor(abs(x) + 0.5), x)


def to_level(x: float) -> int:
    return int(min(255.0, max(0.0, round_half_away(x))))


def reflect101(i: int, n: int) -> int:
    """Index into [0, n) mirroring about the edge samples (which are not repeated)."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


def gaussian_weights(sigma: float) -> list[float]:
    radius = math.ceil(3.0 * sigma)
    w = [math.exp(-(x * x) / (2.0 * sigma * sigma)) for x in range(-radius, radius + 1)]
    total = sum(w)
    return [v / total for v in w]


def blur_direct(plane: list[list[float]], sigma: float) -> list[list[float]]:
    """Non-separable 2-D Gaussian correlation with reflect-101 borders."""
    h, w = len(plane), len(plane[0])
    k = gaussian_weights(sigma)
    r = len(k) // 2
    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    acc += k[dy + r] * k[dx + r] * plane[reflect101(y + dy, h)][reflect101(x + dx, w)]
            out[y][x] = acc
    return out


def blur_separable(plane: list[list[float]], sigma: float) -> list[list[float]]:
    """Row pass then column pass of the 1-D kernel, reflect-101 borders."""
    h, w = len(plane), len(plane[0])
    k = gaussian_weights(sigma)
    r = len(k) // 2
    rows = [[sum(k[d + r] * row[reflect101(x + d, w)] for d in range(-r, r + 1)) for x in range(w)] for row in plane]
    return [
        [sum(k[d + r] * rows[reflect101(y + d, h)][x] for d in range(-r, r + 1)) for x in range(w)]
        for y in range(h)
    ]


def bilinear(plane: list[list[float]], out_w: int, out_h: int) -> list[list[float]]:
    """Half-pixel-centred bilinear sample of one plane (no rounding)."""
    in_h, in_w = len(plane), len(plane[0])

    def taps(d: int, out_n: int, in_n: int) -> tuple[int, int, float]:
        src = (d + 0.5) * (in_n / out_n) - 0.5
        src = min(max(src, 0.0), float(in_n - 1))
        i0 = math.floor(src)
        return i0, min(i0 + 1, in_n - 1), src - i0

    out = []
    for oy in range(out_h):
        y0, y1, fy = taps(oy, out_h, in_h)
        row = []
        for ox in range(out_w):
            x0, x1, fx = taps(ox, out_w, in_w)
            top = (1.0 - fx) * plane[y0][x0] + fx * plane[y0][x1]
            bottom = (1.0 - fx) * plane[y1][x0] + fx * plane[y1][x1]
            row.append((1.0 - fy) * top + fy * bottom)
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# Histogram equalisation
# ---------------------------------------------------------------------------

def global_equalize(plane: list[list[int]]) -> list[list[int]]:
    """Plain histogram equalisation: level -> round(255 * CDF(level) / n)."""
    flat = [v for row in plane for v in row]
    n = len(flat)
    hist = [0] * 256
    for v in flat:
        hist[v] += 1
    lut = []
    running = 0
    for count in hist:
        running += count
        lut.append(to_level(255.0 * running / n))
    return [[lut[v] for v in row] for row in plane]


def _edges(length: int, tiles: int) -> list[int]:
    base = length // tiles
    edges = [i * base for i in range(tiles)]
    edges.append(length)
    return edges


def _clipped_lut(values: list[int], clip_limit: float) -> list[float]:
    n = len(values)
    hist = [0.0] * 256
    for v in values:
        hist[v] += 1.0
    limit = clip_limit * n / 256
    excess = 0.0
    for count in hist:
        if count > limit:
            excess += count - limit
    share = excess / 256
    lut = []
    running = 0.0
    for count in hist:
        running += min(count, limit) + share
        lut.append(float(to_level(255.0 * running / n)))
    return lut


def _axis_weight(pos: int, edges: list[int]) -> tuple[int, int, float]:
    centres = [(edges[i] + edges[i + 1]) / 2.0 - 0.5 for i in range(len(edges) - 1)]
    last = len(centres) - 1
    i0 = 0
    for i, c in enumerate(centres):
        if c <= pos:
            i0 = i
    i1 = min(i0 + 1, last)
    span = centres[i1] - centres[i0]
    f = (pos - centres[i0]) / span if span > 0 else 0.0
    return i0, i1, min(max(f, 0.0), 1.0)


def clahe_reference(plane: list[list[int]], tiles_x: int, tiles_y: int, clip_limit: float) -> list[list[int]]:
    h, w = len(plane), len(plane[0])
    ys, xs = _edges(h, tiles_y), _edges(w, tiles_x)
    luts = [
        [
            _clipped_lut(
                [plane[y][x] for y in range(ys[ty], ys[ty + 1]) for x in range(xs[tx], xs[tx + 1])],
                clip_limit,
            )
            for tx in range(tiles_x)
        ]
        for ty in range(tiles_y)
    ]
    out = []
    for y in range(h):
        y0, y1, fy = _axis_weight(y, ys)
        row = []
        for x in range(w):
            x0, x1, fx = _axis_weight(x, xs)
            v = plane[y][x]
            top = (1.0 - fx) * luts[y0][x0][v] + fx * luts[y0][x1][v]
            bottom = (1.0 - fx) * luts[y1][x0][v] + fx * luts[y1][x1][v]
            row.append(to_level((1.0 - fy) * top + fy * bottom))
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def argmax_low(prob: list[float]) -> int:
    best = 0
    for j, p in enumerate(prob):
        if p > prob[best]:
            best = j
    return best


def tally(labels: list[int], probs: list[list[float]], k: int) -> list[list[int]]:
    counts = [[0] * k for _ in range(k)]
    for t, p in zip(labels, probs):
        counts[t][argmax_low(p)] += 1
    return counts


def one_vs_rest(counts: list[list[int]], c: int) -> tuple[int, int, int]:
    """(tp, fp, fn) for class c."""
    k = len(counts)
    tp = counts[c][c]
    fp = sum(counts[t][c] for t in range(k) if t != c)
    fn = sum(counts[c][p] for p in range(k) if p != c)
    return tp, fp, fn


def pairwise_auc(positive: list[bool], scores: list[float]) -> float:
    """O(n^2) AUC: fraction of (pos, neg) pairs ordered correctly, ties count half."""
    pos = [s for s, is_pos in zip(scores, positive) if is_pos]
    neg = [s for s, is_pos in zip(scores, positive) if not is_pos]
    wins = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(pos) * len(neg))


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

def sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def matvec(m: list[list[float]], v: list[float]) -> list[float]:
    return [sum(a * b for a, b in zip(row, v)) for row in m]


def mlp(x: list[float], w1, b1, w2, b2) -> list[float]:
    hidden = [max(0.0, h + b) for h, b in zip(matvec(w1, x), b1)]
    return [o + b for o, b in zip(matvec(w2, hidden), b2)]


def correlate_zero(plane: list[list[float]], kernel: list[list[float]]) -> list[list[float]]:
    h, w = len(plane), len(plane[0])
    k = len(kernel)
    r = k // 2
    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i in range(k):
                for j in range(k):
                    yy, xx = y + i - r, x + j - r
                    if 0 <= yy < h and 0 <= xx < w:
                        acc += kernel[i][j] * plane[yy][xx]
            out[y][x] = acc
    return out
