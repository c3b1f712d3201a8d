"""Global-nearest-neighbour association of unordered measurements to sources.

Candidate sources are the BS (LOS path) and every VA that has a prior. The
cost matrix holds Monte-Carlo expected likelihoods p(z_l | source m),
augmented with a new-VA block ``beta_n * I_L``; the assignment maximizes
the summed log-likelihood under one-label-per-measurement and
at-most-once-per-source constraints.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from mmwpos.geometry import TOA, DOA_AZ, path_params, wrong_side
from mmwpos.measurement import Measurement, MeasurementSet, log_likelihood
from mmwpos.priors import PriorSpec

logger = logging.getLogger(__name__)

LOS = "los"
NEW_VA = -1
LOG_FLOOR_EPS = 1e-300
DEFAULT_N_SAMPLES = 1000

FULL_MASK = (True, True, True, True, True)
NO_TOA_MASK = (False, True, True, True, True)
NO_DOA_AZ_MASK = (True, True, False, True, True)
NO_TOA_DOA_AZ_MASK = (False, True, False, True, True)
MASKS = {
    "full": FULL_MASK,
    "no_toa": NO_TOA_MASK,
    "no_doa_az": NO_DOA_AZ_MASK,
    "no_toa_doa_az": NO_TOA_DOA_AZ_MASK,
}

Source = Union[str, int]  # LOS or a VA index


def candidate_sources(priors: PriorSpec, los: bool = True) -> List[Source]:
    return ([LOS] if los else []) + priors.known_vas()


@dataclass
class JointSamples:
    ue: np.ndarray
    orientation: np.ndarray
    bias: np.ndarray
    va: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.ue)

    def subset(self, keep):
        return JointSamples(
            self.ue[keep], self.orientation[keep], self.bias[keep],
            None if self.va is None else self.va[keep],
        )


def draw_joint_samples(priors: PriorSpec, source: Source, n: int, rng) -> JointSamples:
    ue = priors.sample_ue(rng, n)
    alpha = priors.sample_orientation(rng, n)
    bias = priors.sample_bias(rng, n)
    va = None if source == LOS else priors.sample_va(source, rng, n)
    return JointSamples(ue, alpha, bias, va)


def filter_invalid_samples(samples: JointSamples, va_index=None, bs=None):
    """Drop joint draws where the UE is behind the reflecting surface.

    Returns ``(kept_samples, n_removed)``. LOS samples pass through. Draws with
    VA == BS are treated as invalid (degenerate reflection).
    """
    if samples.va is None:
        return samples, 0
    bad = wrong_side(samples.ue, samples.va, bs)
    return samples.subset(~bad), int(bad.sum())


def log_expected_likelihood(
    z: Measurement,
    source: Source,
    priors: PriorSpec,
    bs,
    n_samples: int = DEFAULT_N_SAMPLES,
    rng_seed=None,
    use_components=FULL_MASK,
    samples: Optional[JointSamples] = None,
) -> float:
    """log E_prior[ p(z | x_VA, x_UE, alpha, B) ] by Monte-Carlo integration.

    Wrong-side draws count as zero-likelihood samples. Returns -inf when every
    draw is invalid.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if source != LOS and priors.va_prior(source) is None:
        raise ValueError(f"source {source!r} has no prior; it cannot be an association candidate")
    if samples is None:
        rng = np.random.default_rng(rng_seed)
        samples = draw_joint_samples(priors, source, n_samples, rng)
    n_total = len(samples)
    kept, _ = filter_invalid_samples(samples, source, bs)
    if len(kept) == 0:
        return -np.inf
    eta = path_params(kept.ue, kept.orientation, kept.bias, kept.va, bs)
    ll = log_likelihood(z.z, eta, z.sigma, mask=use_components)
    return float(logsumexp(ll) - np.log(n_total))


def expected_likelihood(z, source, priors, bs, n_samples=DEFAULT_N_SAMPLES, rng_seed=None,
                        use_components=FULL_MASK, samples=None) -> float:
    return float(np.exp(log_expected_likelihood(
        z, source, priors, bs, n_samples, rng_seed, use_components, samples)))


@dataclass
class CostMatrix:
    """``full = [S^D  beta_n * I_L]``; log-domain copies avoid underflow."""

    s_d: np.ndarray
    beta_n: float
    log_s_d: np.ndarray
    log_beta_n: float
    sources: List[Source] = field(default_factory=list)

    @property
    def shape(self):
        return self.s_d.shape

    @property
    def full(self) -> np.ndarray:
        L = self.s_d.shape[0]
        return np.hstack([self.s_d, self.beta_n * np.eye(L)])

    def log_full(self, eps: float = LOG_FLOOR_EPS) -> np.ndarray:
        L, M = self.s_d.shape
        floor = np.log(eps)
        out = np.full((L, M + L), floor)
        out[:, :M] = np.maximum(self.log_s_d, floor)
        if np.isfinite(self.log_beta_n):
            out[np.arange(L), M + np.arange(L)] = max(self.log_beta_n, floor)
        return out


def cost_matrix_from_likelihoods(s_d, beta_n=None, sources=None) -> CostMatrix:
    s_d = np.asarray(s_d, dtype=float)
    if np.any(s_d < 0):
        raise ValueError("likelihood entries must be >= 0")
    with np.errstate(divide="ignore"):
        log_s_d = np.log(s_d)
    return _finish_cost_matrix(log_s_d, beta_n, sources)


def _finish_cost_matrix(log_s_d, beta_n, sources):
    if beta_n is None:
        finite = log_s_d[np.isfinite(log_s_d)]
        log_beta = float(np.log(0.5) + finite.min()) if finite.size else np.log(LOG_FLOOR_EPS)
    else:
        if beta_n < 0:
            raise ValueError("beta_n must be >= 0")
        log_beta = float(np.log(beta_n)) if beta_n > 0 else -np.inf
    return CostMatrix(
        s_d=np.exp(log_s_d), beta_n=float(np.exp(log_beta)), log_s_d=log_s_d,
        log_beta_n=log_beta, sources=list(sources or []),
    )


def build_cost_matrix(
    Z: Union[MeasurementSet, Sequence[Measurement]],
    priors: PriorSpec,
    bs,
    beta_n: Optional[float] = None,
    n_samples: int = DEFAULT_N_SAMPLES,
    seed: int = 0,
    use_components=FULL_MASK,
    los_candidate: bool = True,
) -> CostMatrix:
    """L x M expected-likelihood matrix plus the new-VA rate.

    Each (l, m) entry uses its own seeded stream so that rows can be
    evaluated independently. ``beta_n`` defaults to half the smallest
    positive S^D entry.
    """
    Z = list(Z)
    if not Z:
        raise ValueError("need at least one measurement")
    sources = candidate_sources(priors, los_candidate)
    log_s_d = np.full((len(Z), len(sources)), -np.inf)
    for l, z in enumerate(Z):
        for m, src in enumerate(sources):
            rng = np.random.default_rng(np.random.SeedSequence([seed, l, m]))
            log_s_d[l, m] = log_expected_likelihood(
                z, src, priors, bs, n_samples, rng, use_components)
    return _finish_cost_matrix(log_s_d, beta_n, sources)


@dataclass
class Assignment:
    """``labels[l]`` is a column index into S^D, or NEW_VA."""

    labels: List[int]
    sources: List[Source] = field(default_factory=list)
    objective: float = 0.0

    def source_of(self, l: int):
        m = self.labels[l]
        return NEW_VA if m == NEW_VA else self.sources[m]

    def resolved(self) -> List[Source]:
        return [self.source_of(l) for l in range(len(self.labels))]

    @property
    def n_new(self) -> int:
        return sum(1 for m in self.labels if m == NEW_VA)


def solve_assignment(S: CostMatrix, eps: float = LOG_FLOOR_EPS) -> Assignment:
    """Exact maximizer of sum x_lm log S_lm (Kuhn-Munkres on the L x (M+L) matrix)."""
    logS = S.log_full(eps)
    L, M = S.s_d.shape
    rows, cols = linear_sum_assignment(logS, maximize=True)
    labels = [NEW_VA] * L
    for r, c in zip(rows, cols):
        labels[r] = int(c) if c < M else NEW_VA
    objective = float(logS[rows, cols].sum())
    return Assignment(labels, list(S.sources), objective)


def assignment_objective(S: CostMatrix, columns: Sequence[int], eps: float = LOG_FLOOR_EPS) -> float:
    """Objective of a full-matrix column choice (one column per row)."""
    logS = S.log_full(eps)
    return float(sum(logS[l, c] for l, c in enumerate(columns)))


def is_feasible(S: CostMatrix, columns: Sequence[int]) -> bool:
    L, M = S.s_d.shape
    if len(columns) != L or len(set(columns)) != L:
        return False
    return all(0 <= c < M + L for c in columns)


def truth_labels(Z: MeasurementSet, sources: Sequence[Source]) -> List[int]:
    """Ground-truth labels in the same encoding as ``Assignment.labels``."""
    out = []
    for src in Z.truth_sources:
        key = LOS if src is None else src
        out.append(sources.index(key) if key in sources else NEW_VA)
    return out


def association_errors(assignment: Assignment, Z: MeasurementSet) -> int:
    truth = truth_labels(Z, assignment.sources)
    return sum(1 for a, t in zip(assignment.labels, truth) if a != t)


@dataclass
class AssocTrialConfig:
    """One cell of the association study."""

    scenario: object
    noise: object
    ue_std: float = 3.2
    orientation_std: float = np.pi / 2
    bias_std: float = 1.0
    va_stds: Sequence[Optional[float]] = (10.0, 10.0, 10.0, None)
    mask: Sequence[bool] = FULL_MASK
    n_samples: int = DEFAULT_N_SAMPLES
    n_trials: int = 200
    seed: int = 0
    beta_n: Optional[float] = None
    perturb_prior_means: bool = True


def run_assoc_trial(cfg: AssocTrialConfig, trial: int):
    """Returns (n_errors, n_measurements) for one seeded trial."""
    from mmwpos.measurement import generate_measurements
    from mmwpos.priors import centered_priors

    ss = np.random.SeedSequence([cfg.seed, trial])
    meas_seed, prior_seed, cost_seed = ss.generate_state(3)
    Z = generate_measurements(cfg.scenario, cfg.noise, int(meas_seed))
    prior_rng = np.random.default_rng(int(prior_seed)) if cfg.perturb_prior_means else None
    priors = centered_priors(
        cfg.scenario, cfg.ue_std, cfg.orientation_std, cfg.bias_std, cfg.va_stds, rng=prior_rng)
    S = build_cost_matrix(Z, priors, cfg.scenario.bs, cfg.beta_n, cfg.n_samples,
                          int(cost_seed), cfg.mask, los_candidate=cfg.scenario.los)
    a = solve_assignment(S)
    return association_errors(a, Z), len(Z)


def da_error_probability(cfg: AssocTrialConfig, return_counts: bool = False):
    """Fraction of wrongly labelled measurements over ``cfg.n_trials`` trials."""
    if cfg.n_trials < 1:
        raise ValueError("need at least one trial")
    errors = total = 0
    for t in range(cfg.n_trials):
        e, n = run_assoc_trial(cfg, t)
        errors += e
        total += n
    p = errors / total
    return (p, errors, total) if return_counts else p
