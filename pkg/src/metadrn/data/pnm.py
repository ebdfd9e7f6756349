"""Binary PPM (P6) / PGM (P5) reading and writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np


class PNMError(ValueError):
    pass


def _header(buf: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Parse magic, width, height and maxval; returns them plus the raster offset."""
    if len(buf) < 2 or buf[:2] not in (b"P5", b"P6"):
        raise PNMError(f"{path}: bad magic number {buf[:2]!r} at byte offset 0")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise PNMError(f"{path}: malformed header at byte offset {pos}")
        fields.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise PNMError(f"{path}: missing whitespace after header at byte offset {pos}")
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 256:
        raise PNMError(f"{path}: unsupported header values {fields} ending at byte offset {pos}")
    return buf[:2], width, height, maxval, pos + 1


def read_header(path) -> tuple[str, int, int]:
    """Magic, width and height, reading only the start of the file."""
    with open(path, "rb") as f:
        head = f.read(512)
    magic, w, h, _, _ = _header(head, path)
    return magic.decode(), w, h


def read_pnm(path) -> np.ndarray:
    """Return uint8 array of shape (H, W) for P5 or (H, W, 3) for P6."""
    buf = Path(path).read_bytes()
    magic, w, h, _, off = _header(buf, path)
    ch = 3 if magic == b"P6" else 1
    need = w * h * ch
    if len(buf) - off < need:
        raise PNMError(f"{path}: truncated raster, expected {need} bytes at byte offset {off}")
    arr = np.frombuffer(buf, dtype=np.uint8, count=need, offset=off)
    return arr.reshape(h, w, 3) if ch == 3 else arr.reshape(h, w)


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM data must have shape (H, W, 3)")
    h, w = rgb.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.asarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise ValueError("PGM data must have shape (H, W)")
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + gray.tobytes())


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def minmax_uint8(x: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 255]; constant maps become all zeros."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.zeros(x.shape, dtype=np.uint8)
    return np.rint((x - lo) / (hi - lo) * 255.0).astype(np.uint8)
