"""
phantom.py
==========

Seeded synthetic test slices: a lumpy background of Gaussian blobs with a
density preset, plus one inserted lesion (parabolic dome with optional
radial spicules) at a known location.

This is a stand-in target generator, not an X-ray or anatomy simulator.

Every random quantity comes from :mod:`fixsearch.rng`, keyed by
``(seed, stream, index)``; blob ``i`` depends only on the seed and ``i``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import rng
from .errors import ConfigError
from .imagio import GrayImage

# (n_blobs factor, blob_amp factor)
DENSITY_PRESETS = {
    "fatty": (0.5, 0.6),
    "scattered": (1.0, 1.0),
    "heterogeneous": (2.0, 1.4),
}

# rng streams
_S_BLOB_X, _S_BLOB_Y, _S_BLOB_AMP, _S_BLOB_SIG = 1, 2, 3, 4
_S_SPICULE_ANGLE, _S_SPICULE_LEN = 10, 11
_S_NOISE = 20
_S_SUITE = 30


@dataclass(frozen=True)
class LesionSpec:
    center: tuple[int, int] = (256, 256)  # (x, y)
    radius: float = 25.0
    contrast: float = 4.0
    spicules: int = 8
    spicule_length: float | None = None  # None -> 0.8 * radius

    @property
    def reach(self) -> float:
        """Distance from center to the tip of the longest spicule."""
        length = 0.8 * self.radius if self.spicule_length is None else self.spicule_length
        return self.radius + (length if self.spicules > 0 else 0.0)


@dataclass(frozen=True)
class PhantomSpec:
    width: int = 512
    height: int = 512
    seed: int = 0
    n_blobs: int = 300
    blob_sigma: float = 10.0
    blob_amp: float = 1.0
    density_class: str = "scattered"
    noise_sigma: float = 0.05
    pitch_mm: float = 0.4
    lesion: LesionSpec | None = field(default_factory=LesionSpec)

    def __post_init__(self):
        if self.density_class not in DENSITY_PRESETS:
            raise ConfigError(f"density_class must be one of {sorted(DENSITY_PRESETS)}")
        if self.width < 1 or self.height < 1:
            raise ConfigError("phantom width and height must be >= 1")
        if self.n_blobs < 0 or self.blob_sigma <= 0 or self.noise_sigma < 0:
            raise ConfigError("n_blobs >= 0, blob_sigma > 0 and noise_sigma >= 0 required")
        les = self.lesion
        if les is not None:
            if not les.radius > 0:
                raise ConfigError(f"lesion radius must be > 0, got {les.radius}")
            x, y = les.center
            r = les.reach
            if x - r < 0 or y - r < 0 or x + r > self.width - 1 or y + r > self.height - 1:
                raise ConfigError(
                    f"lesion at {les.center} with reach {r:.1f} does not fit in "
                    f"{self.width}x{self.height}")

    @property
    def effective_blobs(self) -> int:
        return int(round(self.n_blobs * DENSITY_PRESETS[self.density_class][0]))

    @property
    def effective_amp(self) -> float:
        return self.blob_amp * DENSITY_PRESETS[self.density_class][1]

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.lesion is not None:
            d["lesion"]["center"] = list(self.lesion.center)
        return d


@dataclass(frozen=True)
class LesionTruth:
    center: tuple[int, int]
    radius: float
    density_class: str
    seed: int

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius,
                "density_class": self.density_class, "seed": self.seed}


def background(spec: PhantomSpec) -> np.ndarray:
    """Sum of Gaussian blobs, accumulated in ascending blob index."""
    h, w = spec.height, spec.width
    n = spec.effective_blobs
    img = np.zeros((h, w), dtype=np.float64)
    if n == 0:
        return img
    idx = np.arange(n)
    bx = rng.uniform(spec.seed, _S_BLOB_X, idx) * w
    by = rng.uniform(spec.seed, _S_BLOB_Y, idx) * h
    amp = spec.effective_amp * (0.5 + rng.uniform(spec.seed, _S_BLOB_AMP, idx))
    sig = spec.blob_sigma * (0.6 + 0.8 * rng.uniform(spec.seed, _S_BLOB_SIG, idx))
    for i in range(n):
        r = int(math.ceil(4.0 * sig[i]))
        x0, x1 = max(0, int(bx[i]) - r), min(w, int(bx[i]) + r + 1)
        y0, y1 = max(0, int(by[i]) - r), min(h, int(by[i]) + r + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        gx = np.exp(-0.5 * ((np.arange(x0, x1) - bx[i]) / sig[i]) ** 2)
        gy = np.exp(-0.5 * ((np.arange(y0, y1) - by[i]) / sig[i]) ** 2)
        img[y0:y1, x0:x1] += amp[i] * gy[:, None] * gx[None, :]
    return img


def lesion_profile(spec: PhantomSpec) -> np.ndarray:
    """Additive lesion image (zeros when there is no lesion)."""
    h, w = spec.height, spec.width
    out = np.zeros((h, w), dtype=np.float64)
    les = spec.lesion
    if les is None or les.contrast == 0:
        return out
    cx, cy = les.center
    R = les.radius
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    r = np.hypot(dx, dy)
    # parabolic dome: contrast at the center, zero at the rim
    out += les.contrast * np.clip(1.0 - (r / R) ** 2, 0.0, None)
    if les.spicules > 0:
        length = 0.8 * R if les.spicule_length is None else les.spicule_length
        k = np.arange(les.spicules)
        angles = 2 * np.pi * (k + rng.uniform(spec.seed, _S_SPICULE_ANGLE, k)) / les.spicules
        lengths = length * (0.6 + 0.4 * rng.uniform(spec.seed, _S_SPICULE_LEN, k))
        start = 0.8 * R
        for a, L in zip(angles, lengths):
            along = dx * math.cos(a) + dy * math.sin(a)
            across = -dx * math.sin(a) + dy * math.cos(a)
            t = (along - start) / (R - start + L)
            ridge = np.where((t >= 0) & (t <= 1), 1.0 - t, 0.0)
            out += 0.5 * les.contrast * ridge * np.exp(-0.5 * (across / 1.2) ** 2)
    return out


def generate(spec: PhantomSpec) -> tuple[GrayImage, LesionTruth | None]:
    """Render the phantom; returns the image and the lesion ground truth."""
    img = background(spec) + lesion_profile(spec)
    if spec.noise_sigma > 0:
        idx = np.arange(spec.width * spec.height)
        img += spec.noise_sigma * rng.normal(spec.seed, _S_NOISE, idx).reshape(spec.height, spec.width)
    truth = None
    if spec.lesion is not None:
        truth = LesionTruth(tuple(spec.lesion.center), spec.lesion.radius, spec.density_class, spec.seed)
    return GrayImage(img, spec.pitch_mm), truth


def suite_spec(seed: int, width: int = 512, height: int = 512, **overrides) -> PhantomSpec:
    """Member ``seed`` of the standard phantom suite.

    Density cycles fatty / scattered / heterogeneous with the seed; the lesion
    center is drawn uniformly from the region that keeps it at least two
    lesion diameters away from every border.
    """
    density = ("fatty", "scattered", "heterogeneous")[seed % 3]
    lesion = overrides.pop("lesion", LesionSpec())
    pad = int(math.ceil(max(2 * 2 * lesion.radius, lesion.reach + 1)))
    u = rng.uniform(seed, _S_SUITE, np.arange(2))
    cx = pad + int(u[0] * (width - 2 * pad))
    cy = pad + int(u[1] * (height - 2 * pad))
    return PhantomSpec(width=width, height=height, seed=seed, density_class=density,
                       lesion=replace(lesion, center=(cx, cy)), **overrides)
