"""
gabor.py
========

Gabor kernels and the four-channel cross-correlation feature stack.

Kernel (centered at the middle sample of an odd ``support`` grid):

    G(x, y) = exp(-4 ln2 * ((x-x0)^2 + (y-y0)^2) / Ws^2)
              * cos(2 pi fc ((x-x0) cos(theta) + (y-y0) sin(theta)) + phi)

``Ws`` is the full width at half maximum of the isotropic envelope.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError, DataError
from .imagio import GrayImage
from .parallel import map_ordered


@dataclass(frozen=True)
class GaborParams:
    ws: float
    fc: float
    theta: float = 0.0
    phi: float = 0.0
    support: int = 51

    def __post_init__(self):
        if not self.ws > 0:
            raise ConfigError(f"gabor ws must be > 0, got {self.ws}")
        if not self.fc >= 0:
            raise ConfigError(f"gabor fc must be >= 0, got {self.fc}")
        if self.support < 3 or self.support % 2 == 0:
            raise ConfigError(f"gabor support must be odd and >= 3, got {self.support}")

    @classmethod
    def from_dict(cls, d: dict) -> "GaborParams":
        return cls(ws=float(d["ws"]), fc=float(d["fc"]), theta=float(d.get("theta", 0.0)),
                   phi=float(d.get("phi", 0.0)), support=int(d["support"]))


DEFAULT_WS = 50.0
_SNAP_BITS = 44


def default_filters(ws: float = DEFAULT_WS, support: int | None = None) -> tuple[GaborParams, ...]:
    """Four orientations (0, 45, 90, 135 deg) sharing width, frequency 1/ws, phase 0.

    ``support`` defaults to the odd integer just above ``ws``: the kernel is
    cut at the envelope's half-maximum radius, which leaves a single positive
    lobe so each blob answers with one peak.
    """
    if support is None:
        support = int(math.floor(ws)) | 1
        if support < ws:
            support += 2
    fc = 1.0 / ws
    return tuple(GaborParams(ws, fc, k * math.pi / 4, 0.0, support) for k in range(4))


@dataclass(frozen=True)
class GaborBankConfig:
    filters: tuple[GaborParams, ...] = field(default_factory=default_filters)

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(self.filters))
        if not self.filters:
            raise ConfigError("gabor bank needs at least one filter")

    @property
    def max_support(self) -> int:
        return max(f.support for f in self.filters)

    @property
    def ws(self) -> float:
        return max(f.ws for f in self.filters)

    def to_list(self) -> list[dict]:
        return [asdict(f) for f in self.filters]

    @classmethod
    def from_list(cls, items: list[dict]) -> "GaborBankConfig":
        return cls(tuple(GaborParams.from_dict(d) for d in items))


@dataclass(frozen=True, eq=False)
class FeatureStack:
    """Channels of equal-sized feature maps, shape (C, H, W)."""

    channels: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 3:
            raise DataError(f"feature stack must be (C, H, W), got {ch.shape}")
        if len(self.names) != ch.shape[0]:
            raise DataError("one name per channel required")
        if not np.all(np.isfinite(ch)):
            raise DataError("feature stack contains non-finite values")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self) -> int:
        return self.channels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.channels.shape[1:]

    def rectified(self) -> "FeatureStack":
        return FeatureStack(np.abs(self.channels), self.names)

    def sample(self, x: int, y: int) -> np.ndarray:
        return self.channels[:, y, x].copy()


def make_kernel(p: GaborParams) -> np.ndarray:
    """Evaluate the Gabor function on a ``support x support`` grid, indexed [y, x]."""
    r = p.support // 2
    u = np.arange(-r, r + 1, dtype=np.float64)
    x, y = u[None, :], u[:, None]
    envelope = np.exp(-4.0 * math.log(2.0) * (x * x + y * y) / (p.ws * p.ws))
    carrier = np.cos(2.0 * math.pi * p.fc * (x * math.cos(p.theta) + y * math.sin(p.theta)) + p.phi)
    return envelope * carrier


def correlate_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded 2D cross-correlation with "same" output size.

    ``out[y, x] = sum_{j,i} kernel[j, i] * img[y + j - r, x + i - r]``

    The FFT result is snapped to a power-of-two grid about ``2**-44`` times
    the response bound ``max|img| * sum|kernel|``.  FFT round-off sits near
    ``4e-16`` of that bound, so flat regions come out exactly flat instead of
    carrying ripples that would read as spurious maxima.
    """
    out = fftconvolve(img, kernel[::-1, ::-1], mode="same")
    bound = float(np.abs(img).max()) * float(np.abs(kernel).sum())
    if bound > 0:
        step = math.ldexp(1.0, math.frexp(bound)[1] - _SNAP_BITS)
        out = np.round(out / step) * step
    return out


def apply_bank(img: GrayImage, bank: GaborBankConfig = GaborBankConfig()) -> FeatureStack:
    """One cross-correlation channel per filter, in bank order."""
    h, w = img.shape
    if bank.max_support > min(h, w):
        raise DataError(f"kernel support {bank.max_support} exceeds image {w}x{h}")
    kernels = [make_kernel(p) for p in bank.filters]
    data = img.data
    channels = map_ordered(lambda k: correlate_same(data, k), kernels)
    names = tuple(f"gabor_{i}" for i in range(len(kernels)))
    return FeatureStack(np.stack(channels), names)
