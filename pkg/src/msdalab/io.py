"""File formats: PGM images, numeric CSV and JSON, all written atomically."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError

CSV_FORMAT = "{:.17g}"


def atomic_write(path, data: bytes):
    """Write ``data`` to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    parent = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_gray(values) -> np.ndarray:
    """round(255 * M) with halves rounded up, after clipping to [0, 1]."""
    v = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def encode_pgm(grid, ascii: bool = False) -> bytes:
    g = to_gray(grid)
    if g.ndim != 2:
        raise ShapeError(f"PGM needs a 2-D grid, got shape {g.shape}")
    h, w = g.shape
    if ascii:
        body = "\n".join(" ".join(str(int(p)) for p in row) for row in g)
        return f"P2\n{w} {h}\n255\n{body}\n".encode("ascii")
    return f"P5\n{w} {h}\n255\n".encode("ascii") + g.tobytes()


def write_pgm(path, grid, ascii: bool = False):
    atomic_write(path, encode_pgm(grid, ascii))


def _pgm_tokens(data: bytes, count: int, pos: int):
    tokens = []
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParameterError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos


def decode_pgm(data: bytes) -> np.ndarray:
    """Gray levels (uint8, rows x cols) from P2 or P5 bytes with maxval 255."""
    (magic, w, h, maxval), pos = _pgm_tokens(data, 4, 0)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ParameterError("malformed PGM header") from None
    if maxval != 255:
        raise ParameterError(f"only maxval 255 is supported, got {maxval}")
    if magic == b"P5":
        raw = data[pos + 1 : pos + 1 + w * h]
        if len(raw) != w * h:
            raise ParameterError("truncated PGM pixel data")
        return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
    if magic == b"P2":
        vals = np.array(data[pos:].split(), dtype=int)
        if vals.size != w * h or vals.min(initial=0) < 0 or vals.max(initial=0) > 255:
            raise ParameterError("bad P2 pixel data")
        return vals.astype(np.uint8).reshape(h, w)
    raise ParameterError(f"not a PGM file (magic {magic!r})")


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def encode_csv_matrix(M) -> bytes:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [",".join(CSV_FORMAT.format(v) for v in row) for row in M]
    return ("\n".join(lines) + "\n").encode("ascii")


def write_csv_matrix(path, M):
    atomic_write(path, encode_csv_matrix(M))


def read_csv_matrix(path) -> np.ndarray:
    rows = [line for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows:
        raise ParameterError(f"{path}: empty CSV")
    try:
        M = np.array([[float(v) for v in line.split(",")] for line in rows])
    except ValueError as exc:
        raise ParameterError(f"{path}: non-numeric CSV entry ({exc})") from None
    return M


def write_csv_rows(path, header, rows):
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(str(v) if isinstance(v, (int, np.integer)) else CSV_FORMAT.format(v) for v in row))
    atomic_write(path, ("\n".join(out) + "\n").encode("ascii"))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    atomic_write(path, (text + "\n").encode("utf-8"))
