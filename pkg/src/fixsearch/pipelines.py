"""
pipelines.py
============

The three candidate-selection strategies.

pipeline_a
    GLCM mean/contrast per tile -> GMM (k=5) -> mask from the lesion
    cluster; Gabor-bank maxima screened by the mask.
pipeline_b
    Gabor-bank maxima -> GLCM features at each candidate -> GMM on the
    six-vector (4 Gabor scores + GLCM mean + contrast); keep the lesion
    cluster.
pipeline_threshold
    Gabor-bank maxima kept when their score exceeds a lower threshold.

All three only remove candidates, so ``final`` is always a subset of
``initial``.
"""
from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import rng
from .errors import ConfigError, DataError
from .gabor import FeatureStack, GaborBankConfig, apply_bank
from .glcm import GlcmConfig, GlcmTiles, glcm_at_points, glcm_tiles
from .gmm import ClusterLabels, GmmConfig, GmmModel, fit, predict
from .imagio import GrayImage, quantize
from .peaks import CHANNEL_RULES, CandidateSet, bank_maxima, rule_scores, threshold_candidates


# --------------------------------------------------------------------------- #
# Configuration
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class PeaksConfig:
    margin: int | None = None  # None -> half the largest kernel support
    min_separation: float | None = None  # None -> half the bank's envelope width
    rectify: bool = False

    def __post_init__(self):
        if self.margin is not None and self.margin < 0:
            raise ConfigError(f"peaks margin must be >= 0, got {self.margin}")
        if self.min_separation is not None and self.min_separation < 0:
            raise ConfigError(f"peaks min_separation must be >= 0, got {self.min_separation}")


@dataclass(frozen=True)
class ThresholdConfig:
    tau: float | None = None  # absolute threshold; wins over percentile
    percentile: float | None = 50.0  # of initial rule scores
    channel_rule: str = "max"

    def __post_init__(self):
        if self.channel_rule not in CHANNEL_RULES:
            raise ConfigError(f"threshold channel_rule must be one of {CHANNEL_RULES}")
        if self.percentile is not None and not 0 <= self.percentile <= 100:
            raise ConfigError(f"threshold percentile must be in [0, 100], got {self.percentile}")


@dataclass(frozen=True)
class RunConfig:
    glcm: GlcmConfig = field(default_factory=GlcmConfig)
    gabor: GaborBankConfig = field(default_factory=GaborBankConfig)
    gmm_a: GmmConfig = field(default_factory=lambda: GmmConfig(k=5))
    gmm_b: GmmConfig = field(default_factory=lambda: GmmConfig(k=3))
    peaks: PeaksConfig = field(default_factory=PeaksConfig)
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    lesion_hint: tuple[int, int] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.lesion_hint is not None:
            if len(self.lesion_hint) != 2:
                raise ConfigError("lesion_hint must be an (x, y) pair")
            object.__setattr__(self, "lesion_hint", (int(self.lesion_hint[0]), int(self.lesion_hint[1])))

    def resolved(self) -> "RunConfig":
        """Fill every derived default so the config echo is complete."""
        peaks = self.peaks
        if peaks.margin is None:
            peaks = replace(peaks, margin=self.gabor.max_support // 2)
        if peaks.min_separation is None:
            peaks = replace(peaks, min_separation=self.gabor.ws / 2.0)
        gmm_a, gmm_b = self.gmm_a, self.gmm_b
        if gmm_a.seed is None:
            gmm_a = replace(gmm_a, seed=rng.derive_seed(self.seed, "gmm_a"))
        if gmm_b.seed is None:
            gmm_b = replace(gmm_b, seed=rng.derive_seed(self.seed, "gmm_b"))
        return replace(self, peaks=peaks, gmm_a=gmm_a, gmm_b=gmm_b)

    def to_dict(self) -> dict:
        return {
            "glcm": self.glcm.to_dict(),
            "gabor": self.gabor.to_list(),
            "gmm_a": self.gmm_a.to_dict(),
            "gmm_b": self.gmm_b.to_dict(),
            "peaks": asdict(self.peaks),
            "threshold": asdict(self.threshold),
            "lesion_hint": None if self.lesion_hint is None else list(self.lesion_hint),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {"glcm", "gabor", "gmm_a", "gmm_b", "peaks", "threshold", "lesion_hint", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")
        base = cls()
        try:
            glcm = GlcmConfig(**{**base.glcm.to_dict(), **d.get("glcm", {})})
            gabor = GaborBankConfig.from_list(d["gabor"]) if "gabor" in d else base.gabor
            gmm_a = GmmConfig(**{**base.gmm_a.to_dict(), **d.get("gmm_a", {})})
            gmm_b = GmmConfig(**{**base.gmm_b.to_dict(), **d.get("gmm_b", {})})
            peaks = PeaksConfig(**{**asdict(base.peaks), **d.get("peaks", {})})
            threshold = ThresholdConfig(**{**asdict(base.threshold), **d.get("threshold", {})})
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"bad run config: {exc}") from exc
        hint = d.get("lesion_hint")
        return cls(glcm, gabor, gmm_a, gmm_b, peaks, threshold,
                   None if hint is None else tuple(hint), int(d.get("seed", 0)))


# --------------------------------------------------------------------------- #
# Report types
# --------------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class Mask:
    bits: np.ndarray

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @classmethod
    def full(cls, shape: tuple[int, int]) -> "Mask":
        return cls(np.ones(shape, dtype=bool))


def _candidate_dict(c) -> dict:
    return {"x": c.x, "y": c.y, "source_channel": c.source_channel,
            "scores": list(c.scores), "cluster": c.cluster, "stage_tags": list(c.stage_tags)}


@dataclass(eq=False)
class PipelineReport:
    pipeline: str
    initial: CandidateSet
    final: CandidateSet
    config_echo: RunConfig
    mask: Mask | None = None
    labels: ClusterLabels | None = None
    model: GmmModel | None = None
    lesion_cluster: int | None = None
    selection_mode: str | None = None
    tau: float | None = None
    timings: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self, include_timings: bool = False) -> dict:
        """JSON-ready dict; timings are left out unless asked so reruns compare byte-equal."""
        d = {
            "pipeline": self.pipeline,
            "config": self.config_echo.to_dict(),
            "initial": [_candidate_dict(c) for c in self.initial],
            "final": [_candidate_dict(c) for c in self.final],
            "image_dims": list(self.initial.image_dims),
            "degenerate_input": self.initial.degenerate,
            "lesion_cluster": self.lesion_cluster,
            "selection_mode": self.selection_mode,
            "tau": self.tau,
            "mask_pixels": None if self.mask is None else int(self.mask.bits.sum()),
            "labels": None if self.labels is None else [int(v) for v in self.labels.labels],
            "gmm": None if self.model is None else self.model.to_dict(),
            "warnings": list(self.warnings),
        }
        if include_timings:
            d["timings_ms"] = dict(self.timings)
        return d


class _Timer:
    def __init__(self):
        self.ms: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        yield
        self.ms[name] = (time.perf_counter() - t0) * 1e3


# --------------------------------------------------------------------------- #
# Lesion-cluster selection
# --------------------------------------------------------------------------- #
def select_lesion_cluster(labels: Sequence[int], lesion_hint: tuple[int, int] | None = None, *,
                          positions: np.ndarray | None = None,
                          label_image: np.ndarray | None = None,
                          gabor_scores: Sequence[float] | None = None,
                          glcm_means: Sequence[float] | None = None,
                          image_dims: tuple[int, int] | None = None) -> tuple[int, str]:
    """Pick the cluster holding the lesion; returns ``(cluster, mode)``.

    With a hint (mode ``"hint"``) the answer is the label painted at the hint
    pixel when ``label_image`` is given, else the label of the member nearest
    the hint (``positions`` rows are (x, y); ties go to the earlier member).

    Without a hint (mode ``"blind"``) the background cluster, the one with the
    lowest mean GLCM mean, is set aside and the remaining cluster with the
    highest mean Gabor score wins.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("no cluster labels to select from")
    present = np.unique(labels)
    mode = "blind" if lesion_hint is None else "hint"

    if lesion_hint is not None:
        x, y = int(lesion_hint[0]), int(lesion_hint[1])
        if label_image is not None:
            dims = (label_image.shape[1], label_image.shape[0])
        else:
            dims = image_dims
        if dims is not None and not (0 <= x < dims[0] and 0 <= y < dims[1]):
            raise DataError(f"lesion hint ({x}, {y}) outside image {dims[0]}x{dims[1]}")
        if len(present) == 1:
            return int(present[0]), mode
        if label_image is not None:
            return int(label_image[y, x]), mode
        if positions is None:
            raise ValueError("hint mode needs positions or a label image")
        pos = np.asarray(positions, dtype=np.float64)
        d2 = (pos[:, 0] - x) ** 2 + (pos[:, 1] - y) ** 2
        return int(labels[int(np.argmin(d2))]), mode

    if len(present) == 1:
        return int(present[0]), mode
    if gabor_scores is None or glcm_means is None:
        raise ValueError("blind mode needs gabor_scores and glcm_means")
    gs = np.asarray(gabor_scores, dtype=np.float64)
    gm = np.asarray(glcm_means, dtype=np.float64)
    mean_glcm = np.array([gm[labels == c].mean() for c in present])
    mean_gabor = np.array([gs[labels == c].mean() for c in present])
    background = int(np.argmin(mean_glcm))
    mean_gabor[background] = -np.inf
    return int(present[int(np.argmax(mean_gabor))]), mode


# --------------------------------------------------------------------------- #
# Shared first stage
# --------------------------------------------------------------------------- #
def _check_image(img: GrayImage, cfg: RunConfig) -> None:
    need = max(cfg.glcm.window, cfg.gabor.max_support)
    if min(img.shape) < need:
        raise DataError(f"image {img.width}x{img.height} smaller than window/support {need}")


def gabor_stage(img: GrayImage, cfg: RunConfig) -> tuple[FeatureStack, CandidateSet]:
    """Gabor feature stack and its bank maxima (the initial candidates)."""
    stack = apply_bank(img, cfg.gabor)
    search = stack.rectified() if cfg.peaks.rectify else stack
    initial = bank_maxima(search, cfg.peaks.margin, cfg.peaks.min_separation)
    return stack, initial


def _tile_gabor_scores(stack: FeatureStack, tiles: GlcmTiles) -> np.ndarray:
    """Mean of the max-over-channels Gabor response inside each tile window."""
    best = stack.channels.max(axis=0)
    w = tiles.window
    out = np.empty(tiles.grid_shape)
    for i, y0 in enumerate(tiles.starts_y):
        for j, x0 in enumerate(tiles.starts_x):
            out[i, j] = best[y0:y0 + w, x0:x0 + w].mean()
    return out


# --------------------------------------------------------------------------- #
# Pipelines
# --------------------------------------------------------------------------- #
def pipeline_a(img: GrayImage, cfg: RunConfig = RunConfig(), mask_override: Mask | None = None) -> PipelineReport:
    """GLCM-Gabor pipeline: texture-cluster mask screens the Gabor maxima."""
    cfg = cfg.resolved()
    _check_image(img, cfg)
    timer = _Timer()
    warnings: list[str] = []

    with timer.stage("glcm"):
        tiles = glcm_tiles(img, cfg.glcm)
    with timer.stage("gmm"):
        feats = np.stack([tiles.mean.ravel(), tiles.contrast.ravel()], axis=1)
        model = fit(feats, cfg.gmm_a)
        labels = predict(model, feats)
        warnings += model.warnings
    with timer.stage("gabor"):
        stack, initial = gabor_stage(img, cfg)
    with timer.stage("mask"):
        tile_labels = labels.labels.reshape(tiles.grid_shape)
        label_image = tiles.paint(tile_labels)
        cluster, mode = select_lesion_cluster(
            labels.labels, cfg.lesion_hint, label_image=label_image,
            gabor_scores=_tile_gabor_scores(stack, tiles).ravel(),
            glcm_means=tiles.mean.ravel())
        mask = mask_override if mask_override is not None else Mask(label_image == cluster)
        if mask.bits.shape != img.shape:
            raise DataError("mask dimensions do not match the image")
        if not mask.bits.any():
            warnings.append("empty mask: no candidate can pass")
    with timer.stage("screen"):
        final = initial.with_candidates(
            c.tagged("mask-pass", cluster=int(label_image[c.y, c.x]))
            for c in initial if mask.bits[c.y, c.x])
    if initial.degenerate:
        warnings.append("degenerate input: constant feature maps")
    return PipelineReport("pipeline-a", initial, final, cfg, mask, labels, model,
                          cluster, mode, None, timer.ms, warnings)


def pipeline_b(img: GrayImage, cfg: RunConfig = RunConfig()) -> PipelineReport:
    """Gabor-GLCM pipeline: cluster candidates on 4 Gabor + 2 GLCM features."""
    cfg = cfg.resolved()
    _check_image(img, cfg)
    timer = _Timer()
    warnings: list[str] = []

    with timer.stage("gabor"):
        stack, initial = gabor_stage(img, cfg)
    with timer.stage("glcm"):
        q = quantize(img, cfg.glcm.levels)
        tex = np.asarray(glcm_at_points(img, initial.xy(), cfg.glcm, quantized=q)).reshape(-1, 2)
    if len(initial) < cfg.gmm_b.k:
        warnings.append(f"{len(initial)} initial candidates < gmm_b.k={cfg.gmm_b.k}: keeping all")
        final = initial.with_candidates(c.tagged("gmm-fallback") for c in initial)
        return PipelineReport("pipeline-b", initial, final, cfg, None, None, None,
                              None, None, None, timer.ms, warnings)
    with timer.stage("gmm"):
        feats = np.hstack([initial.score_matrix(), tex])
        model = fit(feats, cfg.gmm_b)
        labels = predict(model, feats)
        warnings += model.warnings
    with timer.stage("select"):
        cluster, mode = select_lesion_cluster(
            labels.labels, cfg.lesion_hint, positions=initial.xy(),
            gabor_scores=[c.score for c in initial], glcm_means=tex[:, 0],
            image_dims=(img.width, img.height))
        final = initial.with_candidates(
            c.tagged("gmm-keep", cluster=int(lab))
            for c, lab in zip(initial, labels.labels) if lab == cluster)
    return PipelineReport("pipeline-b", initial, final, cfg, None, labels, model,
                          cluster, mode, None, timer.ms, warnings)


def resolve_tau(initial: CandidateSet, th: ThresholdConfig) -> float:
    if th.tau is not None:
        return float(th.tau)
    if th.percentile is None or len(initial) == 0:
        return -math.inf
    return float(np.percentile(rule_scores(initial, th.channel_rule), th.percentile))


def pipeline_threshold(img: GrayImage, cfg: RunConfig = RunConfig()) -> PipelineReport:
    """Thresholded-data baseline on the same four Gabor channels."""
    cfg = cfg.resolved()
    _check_image(img, cfg)
    timer = _Timer()
    with timer.stage("gabor"):
        _, initial = gabor_stage(img, cfg)
    with timer.stage("threshold"):
        tau = resolve_tau(initial, cfg.threshold)
        final = threshold_candidates(initial, tau, cfg.threshold.channel_rule)
    return PipelineReport("pipeline-thresh", initial, final, cfg, None, None, None,
                          None, None, tau, timer.ms, [])


PIPELINES = {
    "pipeline-a": pipeline_a,
    "pipeline-b": pipeline_b,
    "pipeline-thresh": pipeline_threshold,
}
