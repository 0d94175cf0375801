"""Plain-text tensor files for attention weight fixtures.

    # comment
    tensor dr.channel.w1 2 4
    0.1 0.2 0.3 0.4
    0.5 0.6 0.7 0.8

Each block is a `tensor <name> <d1> <d2> ...` header followed by
prod(dims) whitespace-separated values in row-major order. Values may span
any number of lines. A header with no dims is a scalar.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping

import numpy as np

from fundus.errors import ImageIOError, TensorFileError

HEADER = "tensor"


def parse_tensors(text: str) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    name: str | None = None
    shape: tuple[int, ...] = ()
    want = 0
    values: list[float] = []
    header_line = 0

    def _finish() -> None:
        tensors[name] = np.array(values, dtype=np.float64).reshape(shape)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == HEADER:
            if name is not None and len(values) < want:
                raise TensorFileError(
                    f"tensor {name} has {len(values)} of {want} values", line=header_line
                )
            if len(tokens) < 2:
                raise TensorFileError("tensor header needs a name", line=lineno)
            name = tokens[1]
            if name in tensors:
                raise TensorFileError(f"duplicate tensor {name}", line=lineno)
            try:
                shape = tuple(int(t) for t in tokens[2:])
            except ValueError:
                raise TensorFileError(f"bad shape {' '.join(tokens[2:])!r}", line=lineno) from None
            if any(d < 1 for d in shape):
                raise TensorFileError(f"dims must be >= 1, got {shape}", line=lineno)
            want = math.prod(shape)
            values = []
            header_line = lineno
            continue

        if name is None:
            raise TensorFileError("values before the first tensor header", line=lineno)
        try:
            row = [float(t) for t in tokens]
        except ValueError:
            raise TensorFileError(f"non-numeric value in {line!r}", line=lineno) from None
        if not all(math.isfinite(v) for v in row):
            raise TensorFileError("values must be finite", line=lineno)
        values.extend(row)
        if len(values) > want:
            raise TensorFileError(f"tensor {name} has more than {want} values", line=lineno)
        if len(values) == want:
            _finish()

    if name is not None and name not in tensors:
        raise TensorFileError(f"tensor {name} has {len(values)} of {want} values", line=header_line)
    return tensors


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ImageIOError(f"cannot read tensor file ({exc})", p) from exc
    return parse_tensors(text)


def format_tensors(tensors: Mapping[str, np.ndarray]) -> str:
    lines = []
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype=np.float64)
        lines.append(" ".join([HEADER, name, *(str(d) for d in a.shape)]))
        rows = a.reshape(-1, a.shape[-1]) if a.ndim else a.reshape(1, 1)
        for row in rows:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def save_tensors(tensors: Mapping[str, np.ndarray], path: str | Path) -> Path:
    p = Path(path)
    try:
        p.write_text(format_tensors(tensors), encoding="utf-8")
    except OSError as exc:
        raise ImageIOError(f"cannot write tensor file ({exc})", p) from exc
    return p
