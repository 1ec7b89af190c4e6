"""
analysis.py
===========

Validation computations: Pearson correlation between feature maps,
candidate-set agreement, and containment of early gaze inside the
predicted candidate region.

Gaze CSV schema: ``observer_id,t_ms,x,y,valid``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .gabor import apply_bank
from .glcm import glcm_at_points, glcm_tiles
from .imagio import GrayImage, quantize
from .peaks import CandidateSet
from .pipelines import RunConfig, gabor_stage

SAMPLINGS = ("per-tile", "per-candidate")
DEFAULT_PAIR = ("glcm_mean", "gabor_max")


@dataclass(frozen=True)
class GazeRecord:
    observer_id: str
    t: float
    x: float
    y: float
    valid: bool = True


@dataclass(frozen=True)
class CorrelationReport:
    r: float
    n: int
    pair: tuple[str, str]
    sampling: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pair"] = list(self.pair)
        return d


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient.

    Raises
    ------
    DataError
        On length mismatch, fewer than 3 samples, or zero variance
        ("undefined correlation").
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"pearson needs two equal-length 1D inputs, got {a.shape} and {b.shape}")
    if len(a) < 3:
        raise DataError(f"pearson needs at least 3 samples, got {len(a)}")
    da = a - a.mean()
    db = b - b.mean()
    saa, sbb = float(np.dot(da, da)), float(np.dot(db, db))
    if saa == 0.0 or sbb == 0.0:
        raise DataError("undefined correlation: zero variance input")
    r = float(np.dot(da, db)) / math.sqrt(saa * sbb)
    return min(1.0, max(-1.0, r))


# --------------------------------------------------------------------------- #
# Feature sampling
# --------------------------------------------------------------------------- #
def _feature_names(n_gabor: int) -> tuple[str, ...]:
    return ("glcm_mean", "glcm_contrast", "gabor_max") + tuple(f"gabor_{i}" for i in range(n_gabor))


def sample_features(img: GrayImage, cfg: RunConfig, names: Sequence[str],
                    sampling: str = "per-tile") -> tuple[dict[str, np.ndarray], int]:
    """Evaluate named features at the sampling sites.

    Per-tile sites are the GLCM tile centers; per-candidate sites are the
    initial Gabor candidates.  A ``neg:`` prefix returns the negated feature.
    """
    if sampling not in SAMPLINGS:
        raise ConfigError(f"sampling must be one of {SAMPLINGS}, got {sampling!r}")
    cfg = cfg.resolved()
    valid = _feature_names(len(cfg.gabor.filters))
    base_names = [n[4:] if n.startswith("neg:") else n for n in names]
    for n in base_names:
        if n not in valid:
            raise ConfigError(f"unknown feature {n!r}; expected one of {valid}")

    if sampling == "per-tile":
        tiles = glcm_tiles(img, cfg.glcm)
        sites = tiles.centers()
        tex = np.stack([tiles.mean.ravel(), tiles.contrast.ravel()], axis=1)
        stack = apply_bank(img, cfg.gabor)
        gab = stack.channels[:, sites[:, 1], sites[:, 0]].T
    else:
        stack, initial = gabor_stage(img, cfg)
        sites = initial.xy()
        q = quantize(img, cfg.glcm.levels)
        tex = np.asarray(glcm_at_points(img, sites, cfg.glcm, quantized=q)).reshape(-1, 2)
        gab = stack.channels[:, sites[:, 1], sites[:, 0]].T if len(sites) else np.zeros((0, len(stack)))

    cols = {"glcm_mean": tex[:, 0], "glcm_contrast": tex[:, 1],
            "gabor_max": gab.max(axis=1) if gab.size else np.zeros(0)}
    for i in range(gab.shape[1]):
        cols[f"gabor_{i}"] = gab[:, i]
    out = {}
    for name, base in zip(names, base_names):
        out[name] = -cols[base] if name.startswith("neg:") else cols[base]
    return out, len(sites)


def feature_correlation(img: GrayImage, cfg: RunConfig = RunConfig(),
                        pair: tuple[str, str] = DEFAULT_PAIR,
                        sampling: str = "per-tile") -> CorrelationReport:
    """Pearson r between two features sampled at matched sites."""
    feats, n = sample_features(img, cfg, pair, sampling)
    if n < 3:
        raise DataError(f"only {n} sampling sites; need at least 3")
    return CorrelationReport(pearson(feats[pair[0]], feats[pair[1]]), n, tuple(pair), sampling)


# --------------------------------------------------------------------------- #
# Gaze
# --------------------------------------------------------------------------- #
def read_gaze_csv(path) -> list[GazeRecord]:
    """Parse ``observer_id,t_ms,x,y,valid``; invalid rows may leave x/y empty."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"observer_id", "t_ms", "x", "y", "valid"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"gaze CSV must have header {','.join(sorted(need))}")
        for row in reader:
            try:
                valid = row["valid"].strip().lower() in ("1", "true", "yes")
                x = float(row["x"]) if row["x"].strip() else math.nan
                y = float(row["y"]) if row["y"].strip() else math.nan
                out.append(GazeRecord(row["observer_id"], float(row["t_ms"]), x, y, valid))
            except ValueError as exc:
                raise DataError(f"bad gaze row {row}: {exc}") from exc
    last: dict[str, float] = {}
    for g in out:
        if g.t < last.get(g.observer_id, -math.inf):
            raise DataError(f"gaze timestamps decrease for observer {g.observer_id!r}")
        last[g.observer_id] = g.t
        if g.valid and not (math.isfinite(g.x) and math.isfinite(g.y)):
            raise DataError(f"valid gaze record with non-finite coordinates: {g}")
    return out


def mean_gaze_points(gaze: Sequence[GazeRecord], early_window: float = 2000.0) -> dict[str, tuple[float, float]]:
    """Per-observer mean of valid gaze points with ``t <= early_window``."""
    acc: dict[str, list[tuple[float, float]]] = {}
    for g in gaze:
        if g.valid and g.t <= early_window:
            acc.setdefault(g.observer_id, []).append((g.x, g.y))
    return {obs: tuple(np.mean(np.asarray(pts), axis=0)) for obs, pts in sorted(acc.items())}


def gaze_containment(gaze: Sequence[GazeRecord], final: CandidateSet, radius: float,
                     early_window: float = 2000.0) -> float:
    """Fraction of observers whose early mean gaze lies within ``radius`` of a candidate."""
    if not radius > 0:
        raise ConfigError(f"radius must be > 0, got {radius}")
    means = mean_gaze_points(gaze, early_window)
    if not means:
        raise DataError(f"no valid gaze records within the first {early_window} ms")
    xy = final.xy().astype(np.float64)
    if len(xy) == 0:
        return 0.0
    inside = 0
    for mx, my in means.values():
        if np.min(np.hypot(xy[:, 0] - mx, xy[:, 1] - my)) <= radius:
            inside += 1
    return inside / len(means)


# --------------------------------------------------------------------------- #
# Agreement
# --------------------------------------------------------------------------- #
def candidate_agreement(a: CandidateSet, b: CandidateSet, tol: float) -> dict:
    """Greedy one-to-one matching of ``a`` onto ``b`` within ``tol`` pixels.

    Candidates of ``a`` are visited highest score first and take the nearest
    unmatched candidate of ``b`` (ties to the earlier one).  Precision is
    matched / |a|, recall matched / |b|; an empty side gives ``None``.
    """
    if tol < 0:
        raise ConfigError(f"tol must be >= 0, got {tol}")
    ca, cb = list(a), list(b)
    bxy = np.array([(c.x, c.y) for c in cb], dtype=np.float64).reshape(-1, 2)
    used = np.zeros(len(cb), dtype=bool)
    order = sorted(range(len(ca)), key=lambda i: (-ca[i].score, ca[i].y, ca[i].x, i))
    pairs = []
    for i in order:
        if not len(cb):
            break
        d = np.hypot(bxy[:, 0] - ca[i].x, bxy[:, 1] - ca[i].y)
        d[used] = np.inf
        j = int(np.argmin(d))
        if d[j] <= tol:
            used[j] = True
            pairs.append([i, j])
    m = len(pairs)
    return {
        "precision": m / len(ca) if ca else None,
        "recall": m / len(cb) if cb else None,
        "matched": m,
        "pairs": pairs,
    }
