"""Binary raster files for depth and disparity maps, plus portable any-map writers.

Map layout (little endian): 4-byte magic ``DMAP`` or ``DISP``, ``u32`` width,
``u32`` height, then ``width * height`` float32 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import MapFormatError

DEPTH_MAGIC = b"DMAP"
DISPARITY_MAGIC = b"DISP"
_HEADER = struct.Struct("<4sII")


def encode_map(values: np.ndarray, magic: bytes) -> bytes:
    if magic not in (DEPTH_MAGIC, DISPARITY_MAGIC):
        raise MapFormatError(f"unknown magic {magic!r}")
    a = np.asarray(values)
    if a.ndim != 2:
        raise MapFormatError("map must be two dimensional")
    h, w = a.shape
    return _HEADER.pack(magic, w, h) + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode_map(data: bytes) -> tuple[bytes, np.ndarray]:
    if len(data) < _HEADER.size:
        raise MapFormatError("truncated header")
    magic, w, h = _HEADER.unpack_from(data)
    if magic not in (DEPTH_MAGIC, DISPARITY_MAGIC):
        raise MapFormatError(f"unknown magic {magic!r}")
    expected = _HEADER.size + 4 * w * h
    if len(data) != expected:
        raise MapFormatError(f"expected {expected} bytes, got {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(h, w)
    return magic, values.copy()


def write_map(path, values: np.ndarray, magic: bytes = DEPTH_MAGIC) -> None:
    Path(path).write_bytes(encode_map(values, magic))


def read_map(path) -> tuple[bytes, np.ndarray]:
    return decode_map(Path(path).read_bytes())


def write_pgm(path, gray: np.ndarray) -> None:
    g = np.asarray(gray, dtype=np.uint8)
    h, w = g.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + g.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    c = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = c.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + c.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary P5/P6 file as written by :func:`write_pgm` / :func:`write_ppm`."""
    data = Path(path).read_bytes()
    tokens = data.split(maxsplit=4)
    kind, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255 or kind not in (b"P5", b"P6"):
        raise MapFormatError("only 8-bit P5/P6 files are supported")
    channels = 1 if kind == b"P5" else 3
    pixels = np.frombuffer(data[-w * h * channels:], dtype=np.uint8)
    return pixels.reshape((h, w) if channels == 1 else (h, w, 3))
