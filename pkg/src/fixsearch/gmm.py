"""
gmm.py
======

Gaussian mixture model fitted by expectation-maximization.

Initialization is k-means++ with weighted sampling done as a priority
race: sample n gets priority ``log(u_n) / D2_n`` with ``u_n`` drawn from a
counter RNG keyed by a hash of the sample's raw values, and the largest
priority wins.  Draws therefore follow the data, not the row order, and a
shuffled or duplicated dataset picks the same centers.

Public API
----------
GmmConfig, GmmModel, ClusterLabels
fit(samples, cfg) -> GmmModel
predict(model, samples) -> ClusterLabels
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from . import rng
from .errors import ConfigError, DataError

COLLAPSE_WEIGHT = 1e-8


@dataclass(frozen=True)
class GmmConfig:
    k: int = 5
    max_iters: int = 200
    tol: float = 1e-6
    covariance: str = "full"
    reg: float = 1e-6
    seed: int | None = None
    standardize: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"gmm k must be >= 1, got {self.k}")
        if not self.tol > 0:
            raise ConfigError(f"gmm tol must be > 0, got {self.tol}")
        if self.reg < 0:
            raise ConfigError(f"gmm reg must be >= 0, got {self.reg}")
        if self.max_iters < 0:
            raise ConfigError(f"gmm max_iters must be >= 0, got {self.max_iters}")
        if self.covariance not in ("full", "diagonal"):
            raise ConfigError(f"gmm covariance must be 'full' or 'diagonal', got {self.covariance!r}")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass(eq=False)
class GmmModel:
    """Mixture parameters in the (optionally) standardized feature space."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    shift: np.ndarray
    scale: np.ndarray
    final_loglik: float = float("nan")
    iterations_run: int = 0
    converged: bool = False
    loglik_history: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    reseeded: list[tuple[int, int]] = field(default_factory=list)  # (iteration, component)

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def transform(self, samples: np.ndarray) -> np.ndarray:
        return (np.asarray(samples, dtype=np.float64) - self.shift) / self.scale

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": [c.ravel().tolist() for c in self.covariances],
            "scaler": {"shift": self.shift.tolist(), "scale": self.scale.tolist()},
            "diagnostics": {
                "final_loglik": self.final_loglik,
                "iterations_run": self.iterations_run,
                "converged": self.converged,
                "loglik_history": list(self.loglik_history),
                "warnings": list(self.warnings),
                "reseeded": [list(r) for r in self.reseeded],
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        means = np.asarray(d["means"], dtype=np.float64)
        dim = means.shape[1]
        diag = d.get("diagnostics", {})
        return cls(
            np.asarray(d["weights"], dtype=np.float64), means,
            np.asarray(d["covariances"], dtype=np.float64).reshape(-1, dim, dim),
            np.asarray(d["scaler"]["shift"], dtype=np.float64),
            np.asarray(d["scaler"]["scale"], dtype=np.float64),
            float(diag.get("final_loglik", "nan")), int(diag.get("iterations_run", 0)),
            bool(diag.get("converged", False)), list(diag.get("loglik_history", [])),
            list(diag.get("warnings", [])), [tuple(r) for r in diag.get("reseeded", [])],
        )


@dataclass(frozen=True, eq=False)
class ClusterLabels:
    labels: np.ndarray
    responsibilities: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def write_csv(self, path) -> None:
        """``index,label,maxresp`` per sample."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["index", "label", "maxresp"])
            for i, (lab, row) in enumerate(zip(self.labels, self.responsibilities)):
                wr.writerow([i, int(lab), repr(float(row[lab]))])


# --------------------------------------------------------------------------- #
# Densities
# --------------------------------------------------------------------------- #
def _log_gauss(z: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = z.shape[1]
    chol = np.linalg.cholesky(cov)
    y = solve_triangular(chol, (z - mean).T, lower=True, check_finite=False)
    maha = np.sum(y * y, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * math.log(2.0 * math.pi) + logdet + maha)


def _joint_log(z: np.ndarray, weights, means, covs) -> np.ndarray:
    """log(w_k) + log N(z_n | mu_k, Sigma_k), shape (N, K)."""
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(weights, dtype=np.float64))
    return np.stack([logw[k] + _log_gauss(z, means[k], covs[k]) for k in range(len(logw))], axis=1)


def _estep(z, weights, means, covs):
    joint = _joint_log(z, weights, means, covs)
    norm = logsumexp(joint, axis=1)
    return float(np.sum(norm)), joint - norm[:, None], norm


# --------------------------------------------------------------------------- #
# Initialization
# --------------------------------------------------------------------------- #
def _scaler(x: np.ndarray, standardize: bool, warnings: list[str]):
    d = x.shape[1]
    if not standardize:
        return np.zeros(d), np.ones(d)
    shift = x.mean(axis=0)
    scale = x.std(axis=0)
    for j in np.flatnonzero(scale == 0):
        warnings.append(f"zero-variance dimension {int(j)}: scale set to 1")
    scale = np.where(scale == 0, 1.0, scale)
    return shift, scale


def kmeanspp_centers(z: np.ndarray, raw: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Indices of ``k`` k-means++ centers, keyed by sample values."""
    keys = rng.hash_rows(raw)
    chosen: list[int] = []
    d2 = np.full(len(z), np.inf)
    for t in range(k):
        u = 1.0 - rng.uniform(seed, t, keys)  # (0, 1]
        if t == 0 or not np.any(d2 > 0):
            pick = int(np.argmax(u))
        else:
            with np.errstate(divide="ignore"):
                prio = np.where(d2 > 0, np.log(u) / d2, -np.inf)
            pick = int(np.argmax(prio))
        chosen.append(pick)
        diff = z - z[pick]
        d2 = np.minimum(d2, np.sum(diff * diff, axis=1))
    return np.asarray(chosen)


def _global_cov(z: np.ndarray, cfg: GmmConfig) -> np.ndarray:
    diff = z - z.mean(axis=0)
    cov = np.einsum("ni,nj->ij", diff, diff) / len(z)
    if cfg.covariance == "diagonal":
        cov = np.diag(np.diag(cov))
    return cov + cfg.reg * np.eye(z.shape[1])


# --------------------------------------------------------------------------- #
# EM
# --------------------------------------------------------------------------- #
def _mstep(z: np.ndarray, resp: np.ndarray, cfg: GmmConfig):
    n, d = z.shape
    nk = resp.sum(axis=0)
    weights = nk / n
    means = np.einsum("nk,nd->kd", resp, z) / np.where(nk > 0, nk, 1.0)[:, None]
    covs = np.empty((len(nk), d, d))
    eye = np.eye(d)
    for k in range(len(nk)):
        diff = z - means[k]
        if cfg.covariance == "diagonal":
            var = np.einsum("n,nd->d", resp[:, k], diff * diff) / max(nk[k], np.finfo(float).tiny)
            covs[k] = np.diag(var)
        else:
            c = np.einsum("n,ni,nj->ij", resp[:, k], diff, diff) / max(nk[k], np.finfo(float).tiny)
            covs[k] = 0.5 * (c + c.T)
        covs[k] += cfg.reg * eye
    return weights, means, covs


def fit(samples: np.ndarray, cfg: GmmConfig = GmmConfig()) -> GmmModel:
    """Fit a K-component mixture by EM.

    Stops when the relative change of the total log-likelihood drops below
    ``cfg.tol`` or after ``cfg.max_iters`` M-steps.  Covariances get
    ``cfg.reg * I`` added at every M-step.  A component whose weight falls
    below 1e-8 is re-seeded at the worst-explained sample (lowest mixture
    density); this is logged in ``reseeded``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise DataError(f"samples must be an N x D matrix with D >= 1, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("samples contain non-finite values")
    n, d = x.shape
    if n < cfg.k:
        raise DataError(f"need at least k={cfg.k} samples, got {n}")

    warnings: list[str] = []
    shift, scale = _scaler(x, cfg.standardize, warnings)
    z = (x - shift) / scale
    seed = 0 if cfg.seed is None else cfg.seed

    centers = kmeanspp_centers(z, x, cfg.k, seed)
    means = z[centers].copy()
    base_cov = _global_cov(z, cfg)
    covs = np.repeat(base_cov[None], cfg.k, axis=0)
    weights = np.full(cfg.k, 1.0 / cfg.k)

    ll, log_resp, norm = _estep(z, weights, means, covs)
    history = [ll]
    reseeded: list[tuple[int, int]] = []
    converged = False
    it = 0
    while it < cfg.max_iters:
        it += 1
        weights, means, covs = _mstep(z, np.exp(log_resp), cfg)
        for k in np.flatnonzero(weights < COLLAPSE_WEIGHT):
            worst = int(np.argmin(norm))
            means[k] = z[worst]
            covs[k] = base_cov
            weights[k] = 1.0 / n
            weights /= weights.sum()
            reseeded.append((it, int(k)))
        new_ll, log_resp, norm = _estep(z, weights, means, covs)
        history.append(new_ll)
        done = abs(new_ll - ll) <= cfg.tol * abs(ll)
        ll = new_ll
        if done:
            converged = True
            break

    if cfg.max_iters > 0 and not converged:
        warnings.append(f"EM did not converge in {cfg.max_iters} iterations")
    return GmmModel(weights, means, covs, shift, scale, ll, it, converged,
                    history, warnings, reseeded)


def predict(model: GmmModel, samples: np.ndarray) -> ClusterLabels:
    """Responsibilities under ``model`` and argmax labels (ties -> lowest index)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise DataError(f"samples have shape {x.shape}, model expects D={model.dim}")
    _, log_resp, _ = _estep(model.transform(x), model.weights, model.means, model.covariances)
    resp = np.exp(log_resp)
    return ClusterLabels(np.argmax(resp, axis=1), resp)


def log_likelihood(model: GmmModel, samples: np.ndarray) -> float:
    """Total log-likelihood of ``samples`` in the model's standardized space."""
    ll, _, _ = _estep(model.transform(samples), model.weights, model.means, model.covariances)
    return ll
