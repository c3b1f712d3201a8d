"""Noisy, unordered channel-parameter measurements and their Gaussian likelihood."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from mmwpos.geometry import AZIMUTH_INDICES, DOA_EL, DOD_EL, path_params, wrap_angle

DEFAULT_TOA_STD = 0.1
DEFAULT_ANGLE_STD = 0.01
LOG_2PI = float(np.log(2.0 * np.pi))


def default_covariance(toa_std: float = DEFAULT_TOA_STD, angle_std: float = DEFAULT_ANGLE_STD):
    return np.diag([toa_std**2] + [angle_std**2] * 4)


def check_covariance(sigma, allow_zero: bool = False) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (5, 5):
        raise ValueError(f"covariance must be 5x5, got {sigma.shape}")
    if not np.allclose(sigma, sigma.T, atol=1e-15, rtol=1e-12):
        raise ValueError("covariance must be symmetric")
    if allow_zero and not np.any(sigma):
        return sigma
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ValueError("covariance must be positive definite") from None
    return sigma


@dataclass
class Measurement:
    z: np.ndarray
    sigma: np.ndarray
    id: int  # generation index; 0 is the LOS path when present

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).reshape(5)
        self.sigma = np.asarray(self.sigma, dtype=float)


@dataclass
class MeasurementSet:
    measurements: List[Measurement]
    # source of each measurement, in presentation order: None for LOS, else VA index
    truth_sources: List[Optional[int]] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    def __getitem__(self, i):
        return self.measurements[i]


@dataclass
class NoiseSpec:
    """Per-path measurement covariance; ``per_path`` overrides ``sigma``.

    ``assumed`` is the covariance attached to each measurement for the
    estimators; it defaults to the generating one. Setting it lets a
    noiseless simulation still report a usable covariance.
    """

    sigma: np.ndarray = field(default_factory=default_covariance)
    per_path: Optional[Sequence[np.ndarray]] = None
    assumed: Optional[np.ndarray] = None

    def covariance(self, path: int) -> np.ndarray:
        if self.per_path is not None:
            return np.asarray(self.per_path[path], dtype=float)
        return np.asarray(self.sigma, dtype=float)


def generate_measurements(scenario, noise_spec: NoiseSpec, rng_seed) -> MeasurementSet:
    """Draw z_l = eta_l + n_l for every present path and shuffle the set.

    ``scenario`` needs ``bs``, ``ue`` (UEState), ``vas`` (list of 3-vectors)
    and ``los`` (bool). Output order is a seeded permutation; the hidden
    ``truth_sources`` list records the generating source per entry.
    """
    rng = np.random.default_rng(rng_seed)
    sources: List[Optional[int]] = ([None] if scenario.los else []) + list(range(len(scenario.vas)))
    ue = scenario.ue
    out = []
    for path, src in enumerate(sources):
        va = None if src is None else scenario.vas[src]
        eta = path_params(ue.position, ue.orientation, ue.clock_bias, va, scenario.bs)
        sigma = check_covariance(noise_spec.covariance(path), allow_zero=True)
        if np.any(sigma):
            noise = np.linalg.cholesky(sigma) @ rng.standard_normal(5)
        else:
            noise = np.zeros(5)
            rng.standard_normal(5)  # keep the stream aligned with the noisy case
        z = eta + noise
        z[list(AZIMUTH_INDICES)] = wrap_angle(z[list(AZIMUTH_INDICES)])
        for k in (DOA_EL, DOD_EL):
            if abs(z[k]) > np.pi / 2:
                raise ValueError(f"elevation noise pushed component {k} out of range")
        reported = sigma if noise_spec.assumed is None else check_covariance(noise_spec.assumed)
        out.append(Measurement(z=z, sigma=reported, id=path))
    order = rng.permutation(len(out))
    return MeasurementSet([out[i] for i in order], [sources[i] for i in order])


def residual(z, eta):
    """z - eta with azimuth components wrapped; broadcasts over leading dims."""
    r = np.asarray(z, dtype=float) - np.asarray(eta, dtype=float)
    r[..., list(AZIMUTH_INDICES)] = wrap_angle(r[..., list(AZIMUTH_INDICES)])
    return r


def log_likelihood(z, eta, sigma, mask=None):
    """Gaussian log-density of ``z`` given ``eta`` (azimuth residuals wrapped).

    ``mask`` selects a subset of the five components; the density is then
    that of the marginal over the selected components.
    """
    r = residual(z, eta)
    sigma = np.asarray(sigma, dtype=float)
    if mask is not None:
        idx = np.flatnonzero(np.asarray(mask, dtype=bool))
        r = r[..., idx]
        sigma = sigma[np.ix_(idx, idx)]
    k = r.shape[-1]
    if k == 0:
        return np.zeros(r.shape[:-1]) if r.ndim > 1 else 0.0
    chol = np.linalg.cholesky(sigma)
    y = r @ np.linalg.inv(chol).T
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    ll = -0.5 * np.sum(y * y, axis=-1) - 0.5 * (k * LOG_2PI + logdet)
    return float(ll) if np.ndim(ll) == 0 else ll
