"""Weighted-particle beliefs, resampling and kernel-density helpers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from mmwpos.geometry import wrap_angle


class ResampleError(RuntimeError):
    """All importance weights vanished; carries the name of the culprit."""

    def __init__(self, message, culprit=None):
        super().__init__(message)
        self.culprit = culprit


def normalize_log_weights(logw) -> np.ndarray:
    logw = np.asarray(logw, dtype=float)
    total = logsumexp(logw)
    if not np.isfinite(total):
        raise ResampleError("all weights are zero")
    w = np.exp(logw - total)
    return w / w.sum()


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_resample(weights, n: int, rng) -> np.ndarray:
    """Indices drawn by systematic resampling (one uniform offset)."""
    w = np.asarray(weights, dtype=float)
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cdf, u, side="left")


def silverman_bandwidth(samples, weights=None, floor=None, circular=False) -> np.ndarray:
    """Per-dimension Silverman rule using the weighted spread and Kish ESS."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if weights is None:
        weights = np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if circular:
        mu = np.arctan2(w @ np.sin(x), w @ np.cos(x))
        dev = wrap_angle(x - mu)
    else:
        dev = x - w @ x
    std = np.sqrt(np.maximum(w @ dev**2, 0.0))
    n_eff = max(effective_sample_size(w), 1.0)
    h = std * (4.0 / ((d + 2.0) * n_eff)) ** (1.0 / (d + 4.0))
    if floor is not None:
        h = np.maximum(h, floor)
    return h


@dataclass
class ParticleBelief:
    samples: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,), sums to 1
    kde_bandwidth: np.ndarray  # (d,)
    circular: bool = False

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        self.samples = s
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (s.shape[0],):
            raise ValueError("one weight per sample required")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        total = w.sum()
        if total <= 0:
            raise ResampleError("belief has no mass")
        self.weights = w / total
        self.kde_bandwidth = np.broadcast_to(
            np.asarray(self.kde_bandwidth, dtype=float), (s.shape[1],)).copy()

    @classmethod
    def from_log_weights(cls, samples, logw, bandwidth_floor=None, circular=False):
        w = normalize_log_weights(logw)
        bw = silverman_bandwidth(samples, w, bandwidth_floor, circular)
        return cls(samples, w, bw, circular)

    @classmethod
    def uniform(cls, samples, bandwidth_floor=None, circular=False):
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        w = np.full(n, 1.0 / n)
        return cls(samples, w, silverman_bandwidth(samples, w, bandwidth_floor, circular), circular)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def ess(self) -> float:
        return effective_sample_size(self.weights)

    def draw(self, rng, n: int) -> np.ndarray:
        """Systematic-resampled copies in random order, shape (n, d).

        The shuffle matters: draws of different variables get paired
        index-by-index into joint samples.
        """
        idx = systematic_resample(self.weights, n, rng)
        return self.samples[rng.permutation(idx)]

    def resampled(self, rng, n: Optional[int] = None) -> "ParticleBelief":
        n = self.n if n is None else n
        s = self.draw(rng, n)
        return ParticleBelief(s, np.full(n, 1.0 / n), self.kde_bandwidth, self.circular)

    def mean(self):
        return point_estimate(self)[0]


def point_estimate(belief: ParticleBelief) -> Tuple[np.ndarray, np.ndarray]:
    """Weighted mean and covariance; circular mean for angular beliefs."""
    x = belief.samples
    w = belief.weights
    if belief.circular:
        c = w @ np.cos(x[:, 0])
        s = w @ np.sin(x[:, 0])
        mu = np.array([np.arctan2(s, c)])
        d = wrap_angle(x[:, 0] - mu[0])[:, None]
    else:
        mu = w @ x
        d = x - mu
    cov = (w[:, None] * d).T @ d
    return mu, cov
