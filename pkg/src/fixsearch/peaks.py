"""
peaks.py
========

Fixation-candidate extraction from feature maps.

A regional maximum is an 8-connected plateau of equal values strictly
greater than every pixel bordering it.  These plateaus are exactly the
seeds a watershed flood of the negated map starts from, so candidates are
taken straight from the plateau labelling rather than by running the flood.
Each plateau contributes one candidate at its centroid.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from skimage.measure import label as label_components

from .errors import ConfigError, DataError
from .gabor import FeatureStack

CHANNEL_RULES = ("any", "all", "max")

_NEIGHBORS8 = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]], dtype=bool)


@dataclass(frozen=True)
class Candidate:
    x: int
    y: int
    scores: tuple[float, ...]
    source_channel: int = 0
    cluster: int | None = None
    stage_tags: tuple[str, ...] = ("initial",)

    @property
    def score(self) -> float:
        """Primary score: the largest channel response."""
        return max(self.scores)

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.x, self.y, self.source_channel)

    def tagged(self, tag: str, **changes) -> "Candidate":
        return replace(self, stage_tags=self.stage_tags + (tag,), **changes)


def _order_key(c: Candidate):
    return (-c.score, c.y, c.x, c.source_channel)


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[Candidate, ...]
    image_dims: tuple[int, int]  # (width, height)
    margin: int = 0
    degenerate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        keys = [c.key for c in self.candidates]
        if len(set(keys)) != len(keys):
            raise DataError("duplicate (x, y, source_channel) in candidate set")

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def keys(self) -> set[tuple[int, int, int]]:
        return {c.key for c in self.candidates}

    def xy(self) -> np.ndarray:
        return np.array([(c.x, c.y) for c in self.candidates], dtype=np.int64).reshape(-1, 2)

    def score_matrix(self) -> np.ndarray:
        if not self.candidates:
            return np.zeros((0, 0))
        return np.array([c.scores for c in self.candidates], dtype=np.float64)

    def with_candidates(self, cands: Iterable[Candidate]) -> "CandidateSet":
        return replace(self, candidates=tuple(cands))


# --------------------------------------------------------------------------- #
# Regional maxima
# --------------------------------------------------------------------------- #
def plateau_labels(fmap: np.ndarray) -> tuple[np.ndarray, int]:
    """Label 8-connected components of equal value (labels start at 1)."""
    _, ranks = np.unique(fmap, return_inverse=True)
    ranks = ranks.reshape(fmap.shape) + 1
    return label_components(ranks, background=0, connectivity=2, return_num=True)


def maxima_plateaus(fmap: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Plateau label image and the labels that are regional maxima."""
    labels, n = plateau_labels(fmap)
    nbr_max = ndimage.maximum_filter(fmap, footprint=_NEIGHBORS8, mode="constant", cval=-np.inf)
    has_greater = (nbr_max > fmap).astype(np.int64)
    bad = np.bincount(labels.ravel(), weights=has_greater.ravel(), minlength=n + 1)
    is_max = bad == 0
    is_max[0] = False
    return labels, np.flatnonzero(is_max)


def plateau_anchor(rows: np.ndarray, cols: np.ndarray) -> tuple[int, int]:
    """Centroid rounded half-up; nearest member pixel if that falls outside.

    Returns ``(x, y)``.  Ties in the fallback go to the lowest row, then column.
    """
    cy, cx = rows.mean(), cols.mean()
    ry, rx = math.floor(cy + 0.5), math.floor(cx + 0.5)
    if np.any((rows == ry) & (cols == rx)):
        return int(rx), int(ry)
    d2 = (rows - cy) ** 2 + (cols - cx) ** 2
    order = np.lexsort((cols, rows, d2))
    return int(cols[order[0]]), int(rows[order[0]])


def _suppress(cands: Sequence[Candidate], min_separation: float) -> list[Candidate]:
    """Greedy non-maximum suppression in priority order.

    A candidate is dropped if a kept one lies closer than ``min_separation``
    or sits on the same pixel.
    """
    kept: list[Candidate] = []
    kept_xy = np.zeros((0, 2))
    for c in sorted(cands, key=_order_key):
        if kept:
            d2 = (kept_xy[:, 0] - c.x) ** 2 + (kept_xy[:, 1] - c.y) ** 2
            if np.any(d2 < min_separation ** 2) or np.any(d2 == 0):
                continue
        kept.append(c)
        kept_xy = np.vstack([kept_xy, [c.x, c.y]])
    return kept


def _maxima_xy(fmap: np.ndarray, margin: int) -> tuple[list[tuple[int, int]], bool]:
    labels, max_ids = maxima_plateaus(fmap)
    h, w = fmap.shape
    if len(max_ids) == 1 and np.all(labels == max_ids[0]):
        return [], True
    if len(max_ids) == 0:
        return [], False
    flat = labels.ravel()
    member = np.flatnonzero(np.isin(flat, max_ids))
    member = member[np.argsort(flat[member], kind="stable")]
    bounds = np.flatnonzero(np.diff(flat[member])) + 1
    pts = []
    for group in np.split(member, bounds):
        x, y = plateau_anchor(group // w, group % w)
        if margin <= x < w - margin and margin <= y < h - margin:
            pts.append((x, y))
    return pts, False


def regional_maxima(fmap: np.ndarray, margin: int = 0, min_separation: float = 0.0,
                    channel: int = 0) -> CandidateSet:
    """One candidate per regional-maximum plateau of ``fmap``.

    Parameters
    ----------
    fmap : 2D array
        Finite feature map.
    margin : int
        Candidates closer than this to any border are discarded.
    min_separation : float
        Of two candidates closer than this (Euclidean, pixels), only the
        higher-scored one survives.
    channel : int
        Recorded as ``source_channel``.

    A constant map has no maximum distinct from its surroundings; the result
    is empty with ``degenerate=True``.
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim != 2 or not np.all(np.isfinite(fmap)):
        raise DataError("feature map must be a finite 2D array")
    if margin < 0:
        raise ConfigError(f"margin must be >= 0, got {margin}")
    pts, degenerate = _maxima_xy(fmap, margin)
    cands = [Candidate(x, y, (float(fmap[y, x]),), channel) for x, y in pts]
    h, w = fmap.shape
    return CandidateSet(tuple(_suppress(cands, min_separation)), (w, h), margin, degenerate)


def bank_maxima(stack: FeatureStack, margin: int = 0, min_separation: float = 0.0) -> CandidateSet:
    """Union of per-channel maxima with full score vectors and cross-channel suppression."""
    if len(stack) == 0:
        raise DataError("empty feature stack")
    ch = stack.channels
    merged: list[Candidate] = []
    degenerate = True
    for k in range(len(stack)):
        per = regional_maxima(ch[k], margin, min_separation, channel=k)
        degenerate &= per.degenerate
        for c in per:
            merged.append(Candidate(c.x, c.y, tuple(float(v) for v in ch[:, c.y, c.x]), k))
    h, w = stack.shape
    return CandidateSet(tuple(_suppress(merged, min_separation)), (w, h), margin, degenerate)


# --------------------------------------------------------------------------- #
# Threshold screening
# --------------------------------------------------------------------------- #
def rule_scores(cset: CandidateSet, channel_rule: str = "max") -> np.ndarray:
    """Per-candidate scalar that ``threshold_candidates`` compares with tau.

    For ``any`` that is the largest channel, for ``all`` the smallest.
    """
    if channel_rule not in CHANNEL_RULES:
        raise ConfigError(f"channel_rule must be one of {CHANNEL_RULES}, got {channel_rule!r}")
    s = cset.score_matrix()
    if s.size == 0:
        return np.zeros(0)
    return s.min(axis=1) if channel_rule == "all" else s.max(axis=1)


def threshold_candidates(cset: CandidateSet, tau: float, channel_rule: str = "max",
                         tag: str = "threshold-keep") -> CandidateSet:
    """Keep candidates whose score under ``channel_rule`` exceeds ``tau``; order kept."""
    keep = rule_scores(cset, channel_rule) > tau
    return cset.with_candidates(c.tagged(tag) for c, k in zip(cset.candidates, keep) if k)


# --------------------------------------------------------------------------- #
# CSV
# --------------------------------------------------------------------------- #
def write_candidates_csv(cset: CandidateSet, path) -> None:
    """``x,y,source_channel,score_0..score_{C-1},cluster,stage_tags``."""
    n_scores = max((len(c.scores) for c in cset), default=0)
    header = ["x", "y", "source_channel"] + [f"score_{i}" for i in range(n_scores)] + ["cluster", "stage_tags"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for c in cset:
            wr.writerow([c.x, c.y, c.source_channel, *(repr(float(s)) for s in c.scores),
                         "" if c.cluster is None else c.cluster, ";".join(c.stage_tags)])


def read_candidates_csv(path, image_dims: tuple[int, int] = (0, 0)) -> CandidateSet:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cands = []
    for r in rows:
        score_cols = sorted((k for k in r if k.startswith("score_")), key=lambda k: int(k[6:]))
        try:
            cands.append(Candidate(
                int(r["x"]), int(r["y"]), tuple(float(r[k]) for k in score_cols),
                int(r["source_channel"]),
                None if r.get("cluster", "") == "" else int(r["cluster"]),
                tuple(t for t in r.get("stage_tags", "").split(";") if t),
            ))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"bad candidate row in {path}: {exc}") from exc
    return CandidateSet(tuple(cands), image_dims)
