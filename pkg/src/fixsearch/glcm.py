"""
glcm.py
=======

Gray-level co-occurrence matrices and the GLCM mean / contrast features,
as tiled or dense window maps and at sparse points.

Counting is directed: the pair (value at p, value at p + offset) is counted
once per in-bounds reference position p, with offset = (dx, dy).

Window maps never build a matrix per window.  Both features are linear in
the normalized matrix,

    mean     = sum_ij i * P(i, j)         = E[q(p)]
    contrast = sum_ij (i - j)^2 * P(i, j) = E[(q(p) - q(p + offset))^2]

so each window reduces to two integer box sums over the reference grid,
taken from summed-area tables.  ``compute_glcm`` is the explicit route and
the tests hold the two to agreement.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .imagio import GrayImage, QuantizedImage, quantize


@dataclass(frozen=True)
class GlcmConfig:
    levels: int = 128
    window: int = 100
    offset: tuple[int, int] = (1, 0)
    stride: int | None = None  # None -> window (non-overlapping tiles)

    def __post_init__(self):
        object.__setattr__(self, "offset", tuple(int(v) for v in self.offset))
        self.validate()

    def validate(self) -> None:
        if self.levels < 2:
            raise ConfigError(f"glcm levels must be >= 2, got {self.levels}")
        if self.window < 2:
            raise ConfigError(f"glcm window must be >= 2, got {self.window}")
        if len(self.offset) != 2:
            raise ConfigError("glcm offset must be an integer pair (dx, dy)")
        dx, dy = self.offset
        if abs(dx) >= self.window or abs(dy) >= self.window:
            raise ConfigError(f"glcm offset {self.offset} must satisfy |dx|, |dy| < window")
        if self.stride is not None and self.stride < 1:
            raise ConfigError(f"glcm stride must be >= 1, got {self.stride}")

    @property
    def effective_stride(self) -> int:
        return self.window if self.stride is None else self.stride

    def to_dict(self) -> dict:
        d = asdict(self)
        d["offset"] = list(self.offset)
        return d


@dataclass(frozen=True, eq=False)
class Glcm:
    """Normalized co-occurrence matrix ``p`` plus the raw pair ``counts``."""

    levels: int
    p: np.ndarray
    counts: np.ndarray

    @property
    def n_pairs(self) -> int:
        return int(self.counts.sum())


def _as_levels(patch, levels: int | None) -> tuple[np.ndarray, int]:
    if isinstance(patch, QuantizedImage):
        return patch.data, patch.levels
    data = np.asarray(patch)
    if levels is None:
        raise ValueError("levels is required for a bare integer array")
    if data.size and (data.min() < 0 or data.max() >= levels):
        raise DataError("gray level outside [0, levels - 1]")
    return data.astype(np.int64, copy=False), int(levels)


def _pair_views(q: np.ndarray, offset: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Aligned (reference, neighbor) views over all in-bounds positions."""
    dx, dy = int(offset[0]), int(offset[1])
    h, w = q.shape
    ry = slice(max(0, -dy), h - max(0, dy))
    rx = slice(max(0, -dx), w - max(0, dx))
    ny = slice(max(0, dy), h - max(0, -dy))
    nx = slice(max(0, dx), w - max(0, -dx))
    return q[ry, rx], q[ny, nx]


def compute_glcm(patch, offset: Sequence[int] = (1, 0), levels: int | None = None) -> Glcm:
    """Directed, normalized co-occurrence matrix of ``patch`` at ``offset``.

    Parameters
    ----------
    patch : QuantizedImage or 2D int array
        Gray levels in ``[0, levels - 1]``.
    offset : (dx, dy)
        Neighbor displacement; ``dx`` moves along columns.
    levels : int, optional
        Required when ``patch`` is a bare array.

    Raises
    ------
    DataError
        If no (reference, neighbor) pair fits inside the patch.
    """
    q, G = _as_levels(patch, levels)
    ref, nbr = _pair_views(q, offset)
    if ref.size == 0:
        raise DataError(f"empty co-occurrence domain for patch {q.shape} at offset {tuple(offset)}")
    counts = np.bincount((ref * G + nbr).ravel(), minlength=G * G).reshape(G, G)
    p = counts / counts.sum()
    return Glcm(G, p, counts)


def glcm_mean(g: Glcm) -> float:
    i = np.arange(g.levels, dtype=np.float64)
    return float(np.sum(i[:, None] * g.p))


def glcm_contrast(g: Glcm) -> float:
    i = np.arange(g.levels, dtype=np.float64)
    return float(np.sum((i[:, None] - i[None, :]) ** 2 * g.p))


# --------------------------------------------------------------------------- #
# Window geometry
# --------------------------------------------------------------------------- #
def window_starts(n: int, window: int, stride: int) -> np.ndarray:
    """Grid of window start positions along one axis.

    A final window flush with the far edge is appended when the stride grid
    leaves pixels uncovered, so every window is full-sized.
    """
    if n < window:
        raise DataError(f"image side {n} is smaller than the GLCM window {window}")
    starts = list(range(0, n - window + 1, stride))
    if starts[-1] != n - window:
        starts.append(n - window)
    return np.asarray(starts, dtype=np.int64)


def assign_windows(n: int, starts: np.ndarray, window: int) -> np.ndarray:
    """Index of the window whose center is nearest each pixel (ties -> lower).

    With stride = window this is plain tile membership; with stride = 1 it
    picks the window starting at ``c - window // 2`` (clamped at the edges).
    """
    centers = starts + (window - 1) / 2.0
    pix = np.arange(n, dtype=np.float64)
    # searchsorted then compare the two neighbours
    hi = np.clip(np.searchsorted(centers, pix, side="left"), 0, len(centers) - 1)
    lo = np.clip(hi - 1, 0, len(centers) - 1)
    take_lo = np.abs(pix - centers[lo]) <= np.abs(centers[hi] - pix)
    return np.where(take_lo, lo, hi)


def _summed_area(a: np.ndarray) -> np.ndarray:
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(a, axis=0, dtype=np.int64), axis=1, out=s[1:, 1:])
    return s


def _box(s: np.ndarray, y0, y1, x0, x1):
    return s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]


class _PairSums:
    """Summed-area tables of reference values and squared pair differences."""

    def __init__(self, q: np.ndarray, offset: Sequence[int]):
        self.dx, self.dy = int(offset[0]), int(offset[1])
        h, w = q.shape
        ref, nbr = _pair_views(q, offset)
        y0, x0 = max(0, -self.dy), max(0, -self.dx)
        r = np.zeros((h, w), dtype=np.int64)
        d = np.zeros((h, w), dtype=np.int64)
        r[y0:y0 + ref.shape[0], x0:x0 + ref.shape[1]] = ref
        d[y0:y0 + ref.shape[0], x0:x0 + ref.shape[1]] = (ref - nbr) ** 2
        self.sum_ref = _summed_area(r)
        self.sum_d2 = _summed_area(d)

    def features(self, y0, y1, x0, x1):
        """Mean and contrast for windows ``[y0, y1) x [x0, x1)`` (arrays ok)."""
        ry0 = y0 + max(0, -self.dy)
        ry1 = y1 - max(0, self.dy)
        rx0 = x0 + max(0, -self.dx)
        rx1 = x1 - max(0, self.dx)
        n = (ry1 - ry0) * (rx1 - rx0)
        if np.any(np.asarray(ry1 - ry0) <= 0) or np.any(np.asarray(rx1 - rx0) <= 0):
            raise DataError("empty co-occurrence domain for a window")
        mean = _box(self.sum_ref, ry0, ry1, rx0, rx1) / n
        contrast = _box(self.sum_d2, ry0, ry1, rx0, rx1) / n
        return mean, contrast


@dataclass(frozen=True, eq=False)
class GlcmTiles:
    """Per-window features on the stride grid plus the pixel->window map."""

    starts_y: np.ndarray
    starts_x: np.ndarray
    window: int
    mean: np.ndarray
    contrast: np.ndarray
    assign_y: np.ndarray
    assign_x: np.ndarray

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.mean.shape

    def paint(self, values: np.ndarray) -> np.ndarray:
        """Expand a per-window grid of values to full image resolution."""
        return np.asarray(values)[self.assign_y[:, None], self.assign_x[None, :]]

    def centers(self) -> np.ndarray:
        """Integer (x, y) window centers, row-major over the grid."""
        half = self.window // 2
        yy, xx = np.meshgrid(self.starts_y + half, self.starts_x + half, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)


def glcm_tiles(img: GrayImage, cfg: GlcmConfig, quantized: QuantizedImage | None = None) -> GlcmTiles:
    """Window features on the stride grid (global quantization first)."""
    q = quantized if quantized is not None else quantize(img, cfg.levels)
    h, w = q.data.shape
    sy = window_starts(h, cfg.window, cfg.effective_stride)
    sx = window_starts(w, cfg.window, cfg.effective_stride)
    sums = _PairSums(q.data, cfg.offset)
    y0, x0 = np.meshgrid(sy, sx, indexing="ij")
    mean, contrast = sums.features(y0, y0 + cfg.window, x0, x0 + cfg.window)
    return GlcmTiles(sy, sx, cfg.window, mean, contrast,
                     assign_windows(h, sy, cfg.window), assign_windows(w, sx, cfg.window))


def glcm_feature_maps(img: GrayImage, cfg: GlcmConfig = GlcmConfig()) -> tuple[np.ndarray, np.ndarray]:
    """GLCM mean and contrast maps with the image's dimensions.

    Every output pixel carries the features of the window assigned to it:
    its tile when ``stride == window``, the window centered on it when
    ``stride == 1``.
    """
    tiles = glcm_tiles(img, cfg)
    return tiles.paint(tiles.mean), tiles.paint(tiles.contrast)


def point_window(x: int, y: int, shape: tuple[int, int], window: int) -> tuple[int, int, int, int]:
    """Window of side ``window`` centered at (x, y), clipped to the image.

    Returns ``(y0, y1, x0, x1)`` half-open bounds.
    """
    h, w = shape
    half = window // 2
    return max(0, y - half), min(h, y - half + window), max(0, x - half), min(w, x - half + window)


def glcm_at_points(img: GrayImage, points, cfg: GlcmConfig = GlcmConfig(),
                   quantized: QuantizedImage | None = None) -> list[tuple[float, float]]:
    """(mean, contrast) on the clipped window centered at each (x, y) point."""
    points = list(points)
    if not points:
        return []
    q = quantized if quantized is not None else quantize(img, cfg.levels)
    out = []
    for x, y in points:
        x, y = int(x), int(y)
        if not (0 <= x < q.width and 0 <= y < q.height):
            raise DataError(f"point ({x}, {y}) outside image {q.width}x{q.height}")
        y0, y1, x0, x1 = point_window(x, y, q.data.shape, cfg.window)
        g = compute_glcm(q.data[y0:y1, x0:x1], cfg.offset, q.levels)
        out.append((glcm_mean(g), glcm_contrast(g)))
    return out
