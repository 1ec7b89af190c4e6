"""
imagio.py
=========

Image containers, quantization and file I/O shared by the other modules.

Coordinates are ``(x = column, y = row)`` with the origin at the top-left
pixel; arrays are indexed ``data[y, x]``.

Supported formats
-----------------
pgm8, pgm16
    Binary "P5" PGM, 16-bit samples big-endian.
raw-f32
    Little-endian float32 payload plus a sidecar JSON header
    ``{"width", "height", "pitch_mm"}`` stored at ``<path>.json``.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .errors import ConfigError, DataError, FormatError

PathLike = Union[str, os.PathLike]

FORMATS = ("pgm8", "pgm16", "raw-f32")


# --------------------------------------------------------------------------- #
# Containers
# --------------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class GrayImage:
    """2D scalar raster with physical pixel pitch.

    ``data`` is stored as a read-only float64 array of shape (height, width).
    """

    data: np.ndarray
    pitch_mm: float = 1.0

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise DataError(f"image must be 2D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError("image must be at least 1x1")
        if not np.all(np.isfinite(arr)):
            raise DataError("image contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "pitch_mm", float(self.pitch_mm))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class QuantizedImage:
    """Integer gray-level raster with values in ``[0, levels - 1]``."""

    data: np.ndarray
    levels: int

    def __post_init__(self):
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        arr = np.array(self.data, dtype=np.int64, copy=True)
        if arr.ndim != 2:
            raise DataError(f"quantized image must be 2D, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() >= self.levels):
            raise DataError("gray level outside [0, levels - 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


# --------------------------------------------------------------------------- #
# Quantization
# --------------------------------------------------------------------------- #
_REL_EPS = 2.0 ** -23
_ABS_EPS = np.finfo(np.float64).tiny


def quantize(img: GrayImage | np.ndarray, levels: int) -> QuantizedImage:
    """Linear min-max binning into ``levels`` gray levels.

    ``q = floor((v - min) * levels / (max - min + eps))`` clamped to
    ``[0, levels - 1]`` with ``eps = max((max - min) * 2**-23, tiny)``.
    A constant image maps entirely to level 0.
    """
    if levels < 2:
        raise ConfigError(f"levels must be >= 2, got {levels}")
    data = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    lo = float(data.min())
    span = float(data.max()) - lo
    if span == 0.0:
        return QuantizedImage(np.zeros(data.shape, dtype=np.int64), levels)
    eps = max(span * _REL_EPS, _ABS_EPS)
    q = np.floor((data - lo) * levels / (span + eps))
    q = np.clip(q, 0, levels - 1).astype(np.int64)
    return QuantizedImage(q, levels)


def normalize_u8(data: np.ndarray) -> np.ndarray:
    """Min-max rescale to 0..255 uint8 (constant input maps to 0)."""
    data = np.asarray(data, dtype=np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi <= lo:
        return np.zeros(data.shape, dtype=np.uint8)
    return np.rint((data - lo) * (255.0 / (hi - lo))).astype(np.uint8)


# --------------------------------------------------------------------------- #
# Loading
# --------------------------------------------------------------------------- #
def header_path(path: PathLike) -> Path:
    return Path(f"{os.fspath(path)}.json")


def _detect_format(path: Path) -> str:
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        head = _read_pgm_header(path.read_bytes())
        return "pgm8" if head[2] < 256 else "pgm16"
    return "raw-f32"


_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def _read_pgm_header(raw: bytes) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, payload offset)."""
    if raw[:2] != b"P5":
        raise FormatError("not a binary PGM (missing P5 magic)")
    pos = 2
    values = []
    for _ in range(3):
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise FormatError("truncated PGM header")
        try:
            values.append(int(m.group(1)))
        except ValueError:
            raise FormatError(f"bad PGM header token {m.group(1)!r}") from None
        pos = m.end()
    # exactly one whitespace byte separates header and raster
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise FormatError("malformed PGM header terminator")
    width, height, maxval = values
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"invalid PGM dimensions/maxval {values}")
    return width, height, maxval, pos + 1


def load_image(path: PathLike, format: str | None = None) -> GrayImage:
    """Read a PGM or raw-f32 image; values are returned as stored.

    Parameters
    ----------
    path : str | os.PathLike
        Image file.  For raw-f32 this is the payload; the header is read
        from ``<path>.json``.
    format : {"pgm8", "pgm16", "raw-f32"}, optional
        Declared format.  Detected from the file magic when omitted.
    """
    path = Path(path)
    if format is None:
        format = _detect_format(path)
    if format not in FORMATS:
        raise FormatError(f"unknown format {format!r}; expected one of {FORMATS}")

    if format == "raw-f32":
        try:
            header = json.loads(header_path(path).read_text())
            width, height = int(header["width"]), int(header["height"])
            pitch = float(header.get("pitch_mm", 1.0))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad raw-f32 header for {path}: {exc}") from exc
        raw = path.read_bytes()
        if len(raw) % 4:
            raise DataError(f"payload size mismatch: {len(raw)} bytes is not a float32 multiple")
        payload = np.frombuffer(raw, dtype="<f4")
        if payload.size != width * height:
            raise DataError(
                f"payload size mismatch: header says {width}x{height}="
                f"{width * height} floats, file holds {payload.size}"
            )
        if not np.all(np.isfinite(payload)):
            raise DataError(f"non-finite value in raw payload {path}")
        return GrayImage(payload.reshape(height, width).astype(np.float64), pitch)

    raw = path.read_bytes()
    width, height, maxval, offset = _read_pgm_header(raw)
    dtype = ">u2" if maxval >= 256 else "u1"
    if format == "pgm8" and maxval >= 256:
        raise FormatError(f"declared pgm8 but maxval is {maxval}")
    if format == "pgm16" and maxval < 256:
        raise FormatError(f"declared pgm16 but maxval is {maxval}")
    need = width * height * np.dtype(dtype).itemsize
    if len(raw) - offset != need:
        raise DataError(f"payload size mismatch: expected {need} bytes, got {len(raw) - offset}")
    data = np.frombuffer(raw, dtype=dtype, offset=offset).reshape(height, width)
    return GrayImage(data.astype(np.float64))


# --------------------------------------------------------------------------- #
# Saving
# --------------------------------------------------------------------------- #
def _write_pgm(data: np.ndarray, path: PathLike, maxval: int) -> None:
    data = np.asarray(data)
    dtype = ">u2" if maxval >= 256 else "u1"
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data, dtype=dtype).tobytes())


def save_image(img: GrayImage, path: PathLike, format: str = "raw-f32") -> None:
    """Write ``img`` in one of the supported formats.

    PGM formats require integer values inside the sample range; raw-f32
    stores float32, so values already representable in float32 round-trip
    bit-exactly.
    """
    if format == "raw-f32":
        _write_raw_f32(img.data, path, img.pitch_mm)
        return
    if format not in ("pgm8", "pgm16"):
        raise FormatError(f"unknown format {format!r}")
    top = 255 if format == "pgm8" else 65535
    data = img.data
    if np.any(data != np.round(data)) or data.min() < 0 or data.max() > top:
        raise DataError(f"{format} needs integer samples in [0, {top}]")
    _write_pgm(data, path, top)


def _write_raw_f32(data: np.ndarray, path: PathLike, pitch_mm: float = 1.0) -> None:
    data = np.asarray(data)
    if not np.all(np.isfinite(data)):
        raise DataError("refusing to write non-finite values")
    Path(path).write_bytes(np.ascontiguousarray(data, dtype="<f4").tobytes())
    header = {"width": int(data.shape[1]), "height": int(data.shape[0]),
              "pitch_mm": float(pitch_mm)}
    header_path(path).write_text(json.dumps(header, sort_keys=True) + "\n")


def save_feature_map(fmap: np.ndarray, path: PathLike, pitch_mm: float = 1.0) -> None:
    """Write a feature map as raw-f32 (values are rounded to float32)."""
    _write_raw_f32(fmap, path, pitch_mm)


def load_feature_map(path: PathLike) -> np.ndarray:
    return load_image(path, "raw-f32").data


def save_mask(bits: np.ndarray, path: PathLike) -> None:
    """Boolean raster as 8-bit PGM, 255 for set pixels."""
    _write_pgm(np.where(np.asarray(bits, dtype=bool), 255, 0).astype(np.uint8), path, 255)


def cross_marker_pixels(x: int, y: int, radius: int, shape: tuple[int, int]):
    """In-bounds ``(row, col)`` pixels of a plus-shaped marker."""
    h, w = shape
    pts = {(y, x)}
    for d in range(1, radius + 1):
        pts.update({(y, x - d), (y, x + d), (y - d, x), (y + d, x)})
    return sorted((r, c) for r, c in pts if 0 <= r < h and 0 <= c < w)


def render_overlay(img: GrayImage, candidates: Iterable, radius: int = 3) -> np.ndarray:
    """Normalized 8-bit render of ``img`` with white cross markers burned in."""
    out = normalize_u8(img.data)
    for cand in candidates:
        for r, c in cross_marker_pixels(int(cand.x), int(cand.y), radius, out.shape):
            out[r, c] = 255
    return out


def save_overlay(img: GrayImage, candidates: Iterable, path: PathLike, radius: int = 3) -> None:
    """Write the overlay as PNG (``.png`` suffix) or 8-bit PGM otherwise."""
    out = render_overlay(img, candidates, radius)
    if str(path).lower().endswith(".png"):
        from PIL import Image

        # fixed PNG settings so output bytes are reproducible
        Image.fromarray(out, mode="L").save(path, format="PNG", optimize=False, compress_level=6)
    else:
        _write_pgm(out, path, 255)
