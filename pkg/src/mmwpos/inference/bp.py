"""Sample-based belief propagation over the positioning factor graph.

Schedule (fixed iteration count):

0. The UE prior is fused with the LOS DOD likelihood; every other prior
   messages its own variable.
1. UE and VA positions send their (extrinsic) beliefs to the likelihoods.
2. TOA likelihoods message the bias, DOA likelihoods the heading.
3. Bias and heading send extrinsic products back to their likelihoods.
4. All likelihoods except the LOS DOD message the UE position, NLOS
   likelihoods message their VA; positions are re-estimated. Back to 1.

Messages into the scalar variables are Gaussian mixtures whose kernel is
the measurement noise itself: each joint draw of the factor's other
variables pins the scalar to one value (TOA -> bias, DOA azimuth ->
heading). Messages into the 2-D positions are evaluated pointwise at
importance-sampling proposal points, averaging the factor likelihood over
draws of the other variables. Proposals mix the prior, a KDE of the previous
belief and "inversion" seeds obtained by back-projecting angle pairs
(heights are known, so an elevation fixes a horizontal range).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from mmwpos.geometry import wrap_angle
from mmwpos.inference import kernels
from mmwpos.inference.graph import ALPHA, BIAS, UE, Factor, FactorGraph
from mmwpos.inference.particles import (
    ParticleBelief,
    ResampleError,
    effective_sample_size,
    normalize_log_weights,
    point_estimate,
    silverman_bandwidth,
)
from mmwpos.priors import GaussianPrior, UniformBox

logger = logging.getLogger(__name__)

# VA beliefs wider than this fraction of their BS distance are not used to
# reject UE samples on the wrong side of the surface
SIDE_SPREAD_FRAC = 0.25


@dataclass
class BPConfig:
    n_iterations: int = 10
    n_particles: int = 2000
    # joint draws of the other variables per factor message
    n_msg_samples: int = 250
    # proposal mixture fractions for positions (rest goes to inversion seeds)
    prior_frac: float = 0.1
    belief_frac: float = 0.4
    n_kde_centers: int = 250
    bandwidth_floor_frac: float = 1e-4
    ess_min_frac: float = 0.01
    max_retries: int = 3
    inflation: float = 3.0
    enforce_side: bool = True
    # factor kernels are widened by this multiple of the incoming KDE bandwidths;
    # None means 1 on loopy graphs (keeps particles from collapsing) and 0 on trees
    kernel_widening: Optional[float] = None


class Mixture1D:
    """Unnormalized 1-D Gaussian mixture with a shared kernel width."""

    def __init__(self, centers, logw, sigma, circular: bool = False, name: str = ""):
        self.centers = np.ascontiguousarray(centers, dtype=float)
        self.logw = np.ascontiguousarray(logw, dtype=float)
        self.sigma = np.ascontiguousarray(np.broadcast_to(sigma, self.centers.shape), dtype=float)
        self.circular = circular
        self.name = name
        if circular:
            self.centers = wrap_angle(self.centers)
        finite = np.isfinite(self.logw)
        if not finite.all():
            self.centers = self.centers[finite]
            self.logw = self.logw[finite]
            self.sigma = self.sigma[finite]

    @property
    def log_mass(self) -> float:
        return float(logsumexp(self.logw)) if self.logw.size else -np.inf

    def logpdf(self, x) -> np.ndarray:
        x = np.ascontiguousarray(np.atleast_1d(x), dtype=float)
        if self.logw.size == 0:
            return np.full(x.shape, -np.inf)
        return kernels.mixture1d_var_logpdf(x, self.centers, self.logw, self.sigma, self.circular)

    def sample(self, rng, n: int) -> np.ndarray:
        w = normalize_log_weights(self.logw)
        idx = rng.choice(w.size, size=n, p=w)
        x = self.centers[idx] + self.sigma[idx] * rng.standard_normal(n)
        return wrap_angle(x) if self.circular else x

    def to_particles(self, rng, n: int) -> ParticleBelief:
        x = self.sample(rng, n)
        return ParticleBelief.uniform(x, circular=self.circular)

    def moments(self):
        w = normalize_log_weights(self.logw)
        if self.circular:
            mu = np.arctan2(w @ np.sin(self.centers), w @ np.cos(self.centers))
            var = w @ (wrap_angle(self.centers - mu) ** 2 + self.sigma**2)
        else:
            mu = w @ self.centers
            var = w @ ((self.centers - mu) ** 2 + self.sigma**2)
        return float(mu), float(var)


@dataclass
class BPResult:
    beliefs: Dict[str, ParticleBelief]
    history: List[Dict[str, tuple]]
    graph: FactorGraph
    ess_warnings: int = 0

    def estimate(self, var: str):
        return point_estimate(self.beliefs[var])

    def ue_position(self) -> np.ndarray:
        xy = self.estimate(UE)[0]
        return np.array([xy[0], xy[1], self.graph.priors.ue_height])

    def va_position(self, var: str) -> np.ndarray:
        xy = self.estimate(var)[0]
        return np.array([xy[0], xy[1], self.graph.priors.va_height])


# --------------------------------------------------------------------------- helpers


def _lift(xy, height):
    xy = np.asarray(xy, dtype=float)
    return np.ascontiguousarray(np.column_stack([xy, np.full(len(xy), height)]))


def _ray_to_height(origin, az, el, height):
    """Horizontal points where rays (origin, az, el) reach ``height``; NaN if never."""
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = (height - origin[:, 2]) / np.tan(el)
    ok = np.isfinite(rho) & (rho > 0)
    xy = origin[:, :2] + rho[:, None] * np.column_stack([np.cos(az), np.sin(az)])
    xy[~ok] = np.nan
    return xy


def _dod_seeds_ue(bs, va, az, el, ue_height):
    """Back-project an NLOS DOD through the reflecting plane of each VA draw."""
    d = np.column_stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    w = bs - va
    hw = np.linalg.norm(w, axis=1)
    u = w / hw[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-0.5 * hw) / np.sum(d * u, axis=1)
        xs = bs + t[:, None] * d
        s = (ue_height - va[:, 2]) / (xs[:, 2] - va[:, 2])
    ue = va + s[:, None] * (xs - va)
    ok = np.isfinite(s) & (t > 0) & (s > 1)
    xy = ue[:, :2].copy()
    xy[~ok] = np.nan
    return xy


def _wrapped_gauss_logpdf(x, mean, std):
    e = wrap_angle(np.asarray(x) - mean) / std
    return -0.5 * e * e - np.log(std) - 0.5 * np.log(2 * np.pi)


def _is_clamped(prior) -> bool:
    return isinstance(prior, GaussianPrior) and all(s == 0 for s in prior.std)


def _ess(logw) -> float:
    if not np.any(np.isfinite(logw)):
        return 0.0
    return effective_sample_size(normalize_log_weights(logw))


# --------------------------------------------------------------------------- messages


def factor_to_variable_message(graph: FactorGraph, factor: Factor, target: str,
                               incoming: Dict[str, ParticleBelief], rng,
                               n_samples: int = 400, points=None):
    """Message from ``factor`` to ``target`` given the other neighbours' messages.

    Scalar targets (bias, heading) get a ``Mixture1D``; position targets need
    ``points`` (horizontal, shape (n, 2)) and get a ``ParticleBelief`` on those
    points with weights proportional to the message value. The raw
    log-values are attached as ``belief.log_values``.
    """
    if target not in factor.variables:
        raise ValueError(f"factor {factor.name} has no edge to {target}")
    others = [v for v in factor.variables if v != target]
    draws = {v: incoming[v].draw(rng, n_samples) for v in others}
    bw = {v: float(np.max(incoming[v].kde_bandwidth)) for v in others}
    if target in (BIAS, ALPHA):
        return _scalar_message(graph, factor, target, draws, bw)
    if points is None:
        raise ValueError("position messages are evaluated at given points")
    logv = _position_message(graph, factor, target, draws, points, bw)
    b = ParticleBelief.from_log_weights(points, logv)
    b.log_values = logv
    return b


def _positions(graph, draws, var):
    if var == UE:
        return _lift(draws[UE], graph.priors.ue_height)
    return _lift(draws[var], graph.priors.va_height)


def _scalar_message(graph, factor, target, draws, bw=None) -> Mixture1D:
    bw = bw or {}
    bs = graph.bs
    h_pos2 = bw.get(UE, 0.0) ** 2 + (0.0 if factor.los else bw.get(factor.va_var, 0.0) ** 2)
    K = len(next(iter(draws.values())))
    ue = _positions(graph, draws, UE)
    va = np.tile(bs, (K, 1)) if factor.los else _positions(graph, draws, factor.va_var)
    logw = np.full(K, -np.log(K))
    if not factor.los:
        w = bs - va
        bad = 2.0 * np.sum((ue - va) * w, axis=1) < np.sum(w * w, axis=1)
        logw[bad] = -np.inf
    v = va - ue
    if factor.kind == "toa" and target == BIAS:
        (z,) = factor.z()
        (s,) = factor.std()
        return Mixture1D(z - np.linalg.norm(v, axis=1), logw, np.sqrt(s**2 + h_pos2), name=factor.name)
    if factor.kind == "doa" and target == ALPHA:
        z_el, z_az = factor.z()
        s_el, s_az = factor.std()
        rho = np.maximum(np.hypot(v[:, 0], v[:, 1]), 1e-9)
        el = np.arctan2(v[:, 2], rho)
        az = np.arctan2(v[:, 1], v[:, 0])
        s_el = np.sqrt(s_el**2 + h_pos2 / np.sum(v * v, axis=1))
        s_az = np.sqrt(s_az**2 + h_pos2 / rho**2)
        logw = logw - 0.5 * ((z_el - el) / s_el) ** 2 - np.log(s_el) - 0.5 * np.log(2 * np.pi)
        return Mixture1D(az - z_az, logw, s_az, circular=True, name=factor.name)
    raise ValueError(f"no edge {factor.name} -> {target}")


def _position_message(graph, factor, target, draws, points, bw=None) -> np.ndarray:
    bw = bw or {}
    bs = np.ascontiguousarray(graph.bs)
    target_is_ue = target == UE
    pts = _lift(points, graph.priors.ue_height if target_is_ue else graph.priors.va_height)
    if factor.los and factor.kind == "dod":
        z_el, z_az = factor.z()
        s_el, s_az = factor.std()
        # direction BS -> UE: pass the UE as the "VA" end of a DOA-style kernel
        return kernels.doa_message(False, pts, bs[None, :].copy(), np.zeros(1), np.zeros(1),
                                   z_el, z_az, s_el, s_az, bs, False)
    other_var = factor.va_var if target_is_ue else UE
    if factor.los:
        K = len(next(iter(draws.values())))
        others = np.ascontiguousarray(np.tile(bs, (K, 1)))
    else:
        others = _positions(graph, draws, other_var)
        K = len(others)
    logw = np.full(K, -np.log(K))
    check = not factor.los
    h_pos = 0.0 if factor.los else bw.get(other_var, 0.0)
    if factor.kind == "toa":
        (z,) = factor.z()
        (s,) = factor.std()
        return kernels.toa_message(target_is_ue, pts, others, np.ascontiguousarray(draws[BIAS][:, 0]),
                                   logw, z, s, bs, check, h_pos, bw.get(BIAS, 0.0))
    if factor.kind == "doa":
        z_el, z_az = factor.z()
        s_el, s_az = factor.std()
        return kernels.doa_message(target_is_ue, pts, others, np.ascontiguousarray(draws[ALPHA][:, 0]),
                                   logw, z_el, z_az, s_el, s_az, bs, check, h_pos, bw.get(ALPHA, 0.0))
    z_el, z_az = factor.z()
    s_el, s_az = factor.std()
    return kernels.dod_message(target_is_ue, pts, others, logw, z_el, z_az, s_el, s_az, bs, h_pos)


def _inversion_seeds(graph, factor, target, draws, rng) -> Optional[np.ndarray]:
    """Horizontal candidate points for ``target`` implied by an angle-pair factor."""
    if factor.kind == "toa":
        return None
    bs = graph.bs
    z_el, z_az = factor.z()
    s_el, s_az = factor.std()
    if factor.kind == "dod" and factor.los:
        K = max(len(v) for v in draws.values()) if draws else 400
        az = z_az + s_az * rng.standard_normal(K)
        el = z_el + s_el * rng.standard_normal(K)
        return _ray_to_height(np.tile(bs, (K, 1)), az, el, graph.priors.ue_height)
    if factor.kind == "dod":
        if target != UE:
            return None
        va = _positions(graph, draws, factor.va_var)
        K = len(va)
        az = z_az + s_az * rng.standard_normal(K)
        el = z_el + s_el * rng.standard_normal(K)
        return _dod_seeds_ue(bs, va, az, el, graph.priors.ue_height)
    # DOA pair: world azimuth of the arrival direction is z_az + alpha
    alpha = draws[ALPHA][:, 0]
    K = len(alpha)
    az = z_az + alpha + s_az * rng.standard_normal(K)
    el = z_el + s_el * rng.standard_normal(K)
    if target == UE:
        origin = np.tile(bs, (K, 1)) if factor.los else _positions(graph, draws, factor.va_var)
        return _ray_to_height(origin, az + np.pi, -el, graph.priors.ue_height)
    ue = _positions(graph, draws, UE)
    return _ray_to_height(ue, az, el, graph.priors.va_height)


# --------------------------------------------------------------------------- variable updates


class _ScalarVar:
    def __init__(self, name, prior: GaussianPrior, circular: bool, floor: float):
        self.name = name
        self.prior = prior
        self.circular = circular
        self.floor = floor
        self.clamped = _is_clamped(prior)

    def prior_logpdf(self, x):
        m, s = self.prior.mean[0], self.prior.std[0]
        if self.circular:
            return _wrapped_gauss_logpdf(x, m, s)
        return -0.5 * ((x - m) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi)

    def prior_sample(self, rng, n):
        x = self.prior.sample(rng, n)[:, 0]
        return wrap_angle(x) if self.circular else x

    def clamped_belief(self, n):
        x = np.full(n, self.prior.mean[0])
        return ParticleBelief(x, np.full(n, 1.0 / n), [0.0], self.circular)


def variable_to_factor_message(prior: GaussianPrior, messages: Dict[str, Mixture1D], target: str,
                               rng, n: int = 2000, cfg: Optional[BPConfig] = None,
                               circular: bool = False, name: str = "x") -> ParticleBelief:
    """Prior times every incoming message except the one from ``target``, for a scalar variable."""
    cfg = cfg or BPConfig()
    var = _ScalarVar(name, prior, circular, cfg.bandwidth_floor_frac * max(prior.std[0], 1e-12))
    belief, ext = _scalar_product(var, messages, [target], rng, n, cfg)
    return ext[target]


def _scalar_product(var: _ScalarVar, messages: Dict[str, Mixture1D], targets, rng, n, cfg):
    if var.clamped:
        b = var.clamped_belief(n)
        return b, {t: b for t in targets}
    for name, m in messages.items():
        if not np.isfinite(m.log_mass):
            raise ResampleError(f"message from {name} to {var.name} has no mass", culprit=name)
    names = list(messages)
    comps = [messages[k] for k in names]
    n_prior = n if not comps else max(1, int(round(cfg.prior_frac * n)))
    rest = n - n_prior
    counts = [rest // len(comps) + (1 if i < rest % len(comps) else 0) for i in range(len(comps))] if comps else []
    pts = [var.prior_sample(rng, n_prior)] + [m.sample(rng, c) for m, c in zip(comps, counts) if c]
    pts = np.concatenate(pts)
    M = np.vstack([m.logpdf(pts) for m in comps]) if comps else np.zeros((0, n))
    logp = var.prior_logpdf(pts)
    # the proposal is the prior plus the normalized messages themselves
    logq = [np.log(n_prior / n) + logp]
    for m, c, row in zip(comps, counts, M):
        if c:
            logq.append(np.log(c / n) + row - m.log_mass)
    logq = logsumexp(np.vstack(logq), axis=0)
    base = logp - logq
    total = base + M.sum(axis=0)
    belief = _weighted(pts, total, var, f"product at {var.name}", names, M)
    ext = {}
    for t in targets:
        if t in names:
            i = names.index(t)
            lw = base + np.delete(M, i, axis=0).sum(axis=0)
        else:
            lw = total
        ext[t] = _weighted(pts, lw, var, f"message {var.name}->{t}", names, M)
    return belief, ext


def _weighted(pts, logw, var, what, names, M):
    if not np.any(np.isfinite(logw)):
        culprit = None
        for k, row in zip(names, M):
            if not np.any(np.isfinite(row)):
                culprit = k
                break
        raise ResampleError(f"all weights vanished in {what}"
                            + (f" (factor {culprit})" if culprit else ""), culprit=culprit)
    floor = var.floor if hasattr(var, "floor") else None
    circular = getattr(var, "circular", False)
    return ParticleBelief.from_log_weights(pts, logw, floor, circular)


class _PositionVar:
    def __init__(self, name, prior, height, floor):
        self.name = name
        self.prior = prior
        self.height = height
        self.floor = floor
        self.clamped = _is_clamped(prior)

    def prior_logpdf(self, xy):
        return self.prior.logpdf(xy)

    def prior_sample(self, rng, n):
        return self.prior.sample(rng, n)

    def clamped_belief(self, n):
        x = np.tile(np.asarray(self.prior.mean, dtype=float), (n, 1))
        return ParticleBelief(x, np.full(n, 1.0 / n), [0.0, 0.0])


def _position_proposal(var: _PositionVar, prev: Optional[ParticleBelief], seeds: List[np.ndarray],
                       n, rng, cfg, inflate=1.0):
    """Draw n points from prior / previous-belief KDE / seed KDE mixture; return (pts, logq)."""
    comps = []  # (fraction, centers, bandwidth) ; centers None means the prior
    seeds = [s[np.all(np.isfinite(s), axis=1)] for s in seeds if s is not None]
    seeds = [s for s in seeds if len(s) >= 2]
    f_prior = cfg.prior_frac
    f_belief = cfg.belief_frac if prev is not None else 0.0
    f_seed = 1.0 - f_prior - f_belief
    if not seeds:
        f_belief += f_seed if prev is not None else 0.0
        f_seed = 0.0
    if prev is None and not seeds:
        f_prior = 1.0
    comps.append((f_prior, None, None))
    if f_belief > 0:
        c = prev.draw(rng, min(cfg.n_kde_centers, prev.n))
        bw = np.maximum(silverman_bandwidth(c), var.floor) * inflate
        comps.append((f_belief, c, bw))
    # the seed sets share one budget of KDE centers
    per_set = max(cfg.n_kde_centers // max(len(seeds), 1), 20)
    for s in seeds:
        c = s if len(s) <= per_set else s[rng.choice(len(s), per_set, replace=False)]
        bw = np.maximum(silverman_bandwidth(c), var.floor) * inflate
        comps.append((f_seed / len(seeds), c, bw))

    fr = np.array([c[0] for c in comps])
    fr = fr / fr.sum()
    counts = np.floor(fr * n).astype(int)
    counts[np.argmax(fr)] += n - counts.sum()
    pts = []
    for (f, c, bw), k in zip(comps, counts):
        if k == 0:
            continue
        if c is None:
            pts.append(var.prior_sample(rng, k))
        else:
            idx = rng.integers(0, len(c), size=k)
            pts.append(c[idx] + bw * rng.standard_normal((k, 2)))
    pts = np.ascontiguousarray(np.concatenate(pts))
    logq = []
    for (f, c, bw), k in zip(comps, counts):
        if k == 0:
            continue
        share = np.log(k / n)
        if c is None:
            logq.append(share + var.prior_logpdf(pts))
        else:
            lw = np.full(len(c), -np.log(len(c)))
            bws = np.ascontiguousarray(np.tile(bw, (len(c), 1)))
            logq.append(share + kernels.mixture2d_logpdf(pts, np.ascontiguousarray(c), lw, bws))
    return pts, logsumexp(np.vstack(logq), axis=0)


# --------------------------------------------------------------------------- engine


class _Engine:
    def __init__(self, graph: FactorGraph, cfg: BPConfig, rng):
        self.g = graph
        self.cfg = cfg
        self.rng = rng
        self.n = cfg.n_particles
        self.K = cfg.n_msg_samples
        pr = graph.priors
        self.ess_warnings = 0
        self.widening = cfg.kernel_widening
        if self.widening is None:
            self.widening = 0.0 if graph.is_tree() else 1.0
        frac = cfg.bandwidth_floor_frac
        self.scalars = {
            ALPHA: _ScalarVar(ALPHA, pr.orientation, True, frac * max(pr.orientation.std[0], 1e-12)),
            BIAS: _ScalarVar(BIAS, pr.clock_bias, False, frac * max(pr.clock_bias.std[0], 1e-12)),
        }
        self.positions = {UE: _PositionVar(UE, pr.ue_position, pr.ue_height,
                                           frac * max(max(pr.ue_position.std), 1e-12))}
        for var, prior in graph.va_priors.items():
            std = max(prior.std) if prior.std else 1.0
            self.positions[var] = _PositionVar(var, prior, pr.va_height, frac * max(std, 1e-12))
        self.beliefs: Dict[str, ParticleBelief] = {}
        self.ext: Dict[tuple, ParticleBelief] = {}

    # ---- step 0
    def initialize(self):
        g, rng, n = self.g, self.rng, self.n
        for name, var in self.scalars.items():
            b = var.clamped_belief(n) if var.clamped else ParticleBelief.uniform(
                var.prior_sample(rng, n), var.floor, var.circular)
            self.beliefs[name] = b
            for f in g.neighbors(name):
                self.ext[(name, f.name)] = b
        for name, var in self.positions.items():
            if name == UE:
                continue
            b = var.clamped_belief(n) if var.clamped else ParticleBelief.uniform(
                var.prior_sample(rng, n), var.floor)
            self.beliefs[name] = b
            for f in g.neighbors(name):
                self.ext[(name, f.name)] = b
        ue = self.positions[UE]
        los_dod = [f for f in g.factors if f.los and f.kind == "dod"]
        if ue.clamped:
            b = ue.clamped_belief(n)
        else:
            seeds = [_inversion_seeds(g, f, UE, {}, rng) for f in los_dod]
            evals = {f.name: (lambda pts, f=f: _position_message(g, f, UE, {}, pts)) for f in los_dod}
            b, _ = self._position_product(ue, None, seeds, evals, [])
        self.beliefs[UE] = b
        for f in g.neighbors(UE):
            self.ext[(UE, f.name)] = b

    # ---- steps 1-4
    def iterate(self):
        g, rng, K = self.g, self.rng, self.K
        # 1-2: likelihoods -> bias / heading
        scalar_msgs = {BIAS: {}, ALPHA: {}}
        for f in g.factors:
            if f.kind == "dod":
                continue
            target = BIAS if f.kind == "toa" else ALPHA
            if self.scalars[target].clamped:
                continue
            draws, bw = self._draws(f, target)
            scalar_msgs[target][f.name] = _scalar_message(g, f, target, draws, bw)
        # 3: bias / heading -> likelihoods
        for name, var in self.scalars.items():
            targets = [f.name for f in g.neighbors(name)]
            b, ext = _scalar_product(var, scalar_msgs[name], targets, rng, self.n, self.cfg)
            self.beliefs[name] = b
            for t, m in ext.items():
                self.ext[(name, t)] = m
        # 4: likelihoods -> positions (all use the step-1 position messages)
        new_beliefs, new_ext = {}, {}
        for name, var in self.positions.items():
            if var.clamped:
                continue
            factors = [f for f in g.neighbors(name)]
            seeds, evals = [], {}
            for f in factors:
                if f.los and f.kind == "dod":
                    seeds.append(_inversion_seeds(g, f, name, {}, rng))
                    evals[f.name] = (lambda pts, f=f: _position_message(g, f, UE, {}, pts))
                    continue
                draws, bw = self._draws(f, name)
                seeds.append(_inversion_seeds(g, f, name, draws, rng))
                evals[f.name] = (lambda pts, f=f, d=draws, t=name, h=bw: _position_message(g, f, t, d, pts, h))
            targets = [f.name for f in factors if not (f.los and f.kind == "dod")]
            b, ext = self._position_product(var, self.beliefs[name], seeds, evals, targets)
            new_beliefs[name] = b
            for t, m in ext.items():
                new_ext[(name, t)] = m
        self.beliefs.update(new_beliefs)
        self.ext.update(new_ext)

    def _draws(self, f, target):
        others = [v for v in f.variables if v != target]
        draws = {v: self.ext[(v, f.name)].draw(self.rng, self.K) for v in others}
        bw = {v: self.widening * float(np.max(self.ext[(v, f.name)].kde_bandwidth))
              for v in others}
        return draws, bw

    def _side_penalty(self, var: _PositionVar, pts):
        """Zero out points on the wrong side of a reflecting surface (w.r.t. current estimates)."""
        if not self.cfg.enforce_side:
            return 0.0
        g = self.g
        bs = g.bs
        pen = np.zeros(len(pts))
        if var.name == UE:
            ue = _lift(pts, var.height)
            for p in g.paths:
                if p.los or p.va_var not in self.beliefs:
                    continue
                mu, cov = point_estimate(self.beliefs[p.va_var])
                # a diffuse VA belief (e.g. fresh from the new-VA box) says nothing about the side
                if np.sqrt(np.trace(cov)) > SIDE_SPREAD_FRAC * np.linalg.norm(mu - bs[:2]):
                    continue
                va = np.append(mu, g.priors.va_height)
                w = bs - va
                pen[2.0 * (ue - va) @ w < w @ w] = -np.inf
        elif UE in self.beliefs:
            ue = np.append(self.beliefs[UE].mean(), g.priors.ue_height)
            va = _lift(pts, var.height)
            w = bs - va
            pen[2.0 * np.sum((ue - va) * w, axis=1) < np.sum(w * w, axis=1)] = -np.inf
        return pen

    def _position_product(self, var, prev, seeds, evals: Dict[str, Callable], targets):
        cfg, rng, n = self.cfg, self.rng, self.n
        inflate = 1.0
        names = list(evals)
        best = None
        for attempt in range(cfg.max_retries + 1):
            pts, logq = _position_proposal(var, prev, seeds, n, rng, cfg, inflate)
            M = np.vstack([evals[k](pts) for k in names]) if names else np.zeros((0, n))
            base = var.prior_logpdf(pts) - logq + self._side_penalty(var, pts)
            total = base + M.sum(axis=0)
            ess = _ess(total)
            if best is None or ess > best[0]:
                best = (ess, pts, M, base, total)
            if ess >= cfg.ess_min_frac * n:
                break
            self.ess_warnings += 1
            warnings.warn(f"low effective sample size at {var.name}; inflating proposal bandwidth",
                          RuntimeWarning, stacklevel=2)
            inflate *= cfg.inflation
        ess, pts, M, base, total = best
        logger.debug("%s product ESS %.1f of %d", var.name, ess, n)
        belief = _weighted(pts, total, var, f"product at {var.name}", names, M)
        ext = {}
        for t in targets:
            i = names.index(t)
            lw = base + np.delete(M, i, axis=0).sum(axis=0)
            ext[t] = _weighted(pts, lw, var, f"message {var.name}->{t}", names, M)
        # proposals resample via draw(); the stored belief keeps its weights
        return belief, ext

    def summary(self):
        out = {}
        for name, b in self.beliefs.items():
            mu, cov = point_estimate(b)
            out[name] = (mu, cov)
        return out


def run_bp(graph: FactorGraph, n_iterations: int = 10, n_particles: int = 2000, rng_seed=0,
           config: Optional[BPConfig] = None, callback=None) -> BPResult:
    """Run the fixed schedule and return the final marginal beliefs.

    ``history[i]`` holds (mean, covariance) per variable after iteration i+1;
    ``callback(iteration, engine_beliefs)`` is invoked after each iteration.
    """
    if n_iterations < 1:
        raise ValueError("n_iterations must be >= 1")
    cfg = config or BPConfig()
    cfg = BPConfig(**{**cfg.__dict__, "n_iterations": n_iterations, "n_particles": n_particles})
    rng = np.random.default_rng(rng_seed)
    eng = _Engine(graph, cfg, rng)
    eng.initialize()
    history = []
    for it in range(n_iterations):
        eng.iterate()
        for name, b in eng.beliefs.items():
            if not np.all(np.isfinite(b.samples)) or not np.all(np.isfinite(b.weights)):
                raise ResampleError(f"non-finite belief for {name} at iteration {it + 1}", culprit=name)
        history.append(eng.summary())
        if callback is not None:
            callback(it + 1, dict(eng.beliefs))
    return BPResult(dict(eng.beliefs), history, graph, eng.ess_warnings)
