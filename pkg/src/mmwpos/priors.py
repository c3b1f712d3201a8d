"""Factorized priors over UE state and VA positions.

Positions are only uncertain in the horizontal plane: the UE height is
known, and every VA sits at the BS height (vertical walls).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

DEFAULT_NEW_VA_BOX = (-100.0, 100.0, -100.0, 100.0)


@dataclass(frozen=True)
class GaussianPrior:
    """Gaussian with independent components; std 0 means the value is known."""

    mean: Tuple[float, ...]
    std: Tuple[float, ...]

    def __post_init__(self):
        mean = tuple(float(m) for m in np.atleast_1d(self.mean))
        std = tuple(float(s) for s in np.broadcast_to(np.atleast_1d(self.std), (len(mean),)))
        if any(s < 0 or not np.isfinite(s) for s in std):
            raise ValueError(f"prior std must be finite and >= 0, got {std}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def sample(self, rng, n: int) -> np.ndarray:
        m = np.asarray(self.mean)
        return m + np.asarray(self.std) * rng.standard_normal((n, m.size))

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m = np.asarray(self.mean)
        s = np.asarray(self.std)
        free = s > 0
        r = (x[..., free] - m[free]) / s[free]
        return -0.5 * np.sum(r * r, axis=-1) - np.sum(np.log(s[free])) - 0.5 * free.sum() * np.log(2 * np.pi)


@dataclass(frozen=True)
class UniformBox:
    """Uniform density over a horizontal rectangle (xmin, xmax, ymin, ymax)."""

    box: Tuple[float, float, float, float] = DEFAULT_NEW_VA_BOX

    def __post_init__(self):
        x0, x1, y0, y1 = (float(b) for b in self.box)
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"uniform box must be non-empty, got {self.box}")
        object.__setattr__(self, "box", (x0, x1, y0, y1))

    @property
    def mean(self):
        x0, x1, y0, y1 = self.box
        return (0.5 * (x0 + x1), 0.5 * (y0 + y1))

    @property
    def std(self):
        x0, x1, y0, y1 = self.box
        return ((x1 - x0) / np.sqrt(12.0), (y1 - y0) / np.sqrt(12.0))

    def sample(self, rng, n: int) -> np.ndarray:
        x0, x1, y0, y1 = self.box
        return np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x0, x1, y0, y1 = self.box
        inside = (x[..., 0] >= x0) & (x[..., 0] <= x1) & (x[..., 1] >= y0) & (x[..., 1] <= y1)
        return np.where(inside, -np.log((x1 - x0) * (y1 - y0)), -np.inf)


@dataclass
class PriorSpec:
    """Priors in the horizontal plane; heights are fixed (``ue_height``, ``va_height``).

    ``va_priors[i]`` is a GaussianPrior, a UniformBox or None (no prior: the
    VA is not a known association candidate).
    """

    ue_position: GaussianPrior
    ue_height: float
    orientation: GaussianPrior
    clock_bias: GaussianPrior
    va_priors: List[Optional[object]] = field(default_factory=list)
    va_height: float = 5.0
    new_va_box: Tuple[float, float, float, float] = DEFAULT_NEW_VA_BOX

    def sample_ue(self, rng, n):
        xy = self.ue_position.sample(rng, n)
        return np.column_stack([xy, np.full(n, self.ue_height)])

    def sample_orientation(self, rng, n):
        return self.orientation.sample(rng, n)[:, 0]

    def sample_bias(self, rng, n):
        return self.clock_bias.sample(rng, n)[:, 0]

    def va_prior(self, i: int):
        if i < 0:
            return UniformBox(self.new_va_box)
        return self.va_priors[i]

    def sample_va(self, i: int, rng, n):
        prior = self.va_prior(i)
        if prior is None:
            raise ValueError(f"VA {i} has no prior")
        xy = prior.sample(rng, n)
        return np.column_stack([xy, np.full(n, self.va_height)])

    def known_vas(self) -> List[int]:
        return [i for i, p in enumerate(self.va_priors) if p is not None]

    def with_bias_std(self, std: float) -> "PriorSpec":
        return replace(self, clock_bias=GaussianPrior(self.clock_bias.mean, (std,)))

    def with_orientation_std(self, std: float) -> "PriorSpec":
        return replace(self, orientation=GaussianPrior(self.orientation.mean, (std,)))


def centered_priors(
    scenario,
    ue_std: float = 3.2,
    orientation_std: float = np.pi / 2,
    bias_std: float = 100.0,
    va_stds: Sequence[Optional[float]] = (10.0, 10.0, 10.0, None),
    new_va_box=DEFAULT_NEW_VA_BOX,
    rng=None,
) -> PriorSpec:
    """Priors around the scenario truth.

    With ``rng`` the prior means are drawn from N(truth, std^2), so the truth
    is a plausible draw from the prior; without it they sit at the truth.
    """
    ue = scenario.ue

    def mean(truth, std):
        truth = np.asarray(truth, dtype=float)
        if rng is None:
            return truth
        return truth + np.asarray(std) * rng.standard_normal(truth.shape)

    va_priors = []
    for va, s in zip(scenario.vas, va_stds):
        if s is None:
            va_priors.append(None)
        else:
            va_priors.append(GaussianPrior(mean(va[:2], s), (s, s)))
    return PriorSpec(
        ue_position=GaussianPrior(mean(ue.position[:2], ue_std), (ue_std, ue_std)),
        ue_height=float(ue.position[2]),
        orientation=GaussianPrior(mean([ue.orientation], orientation_std), (orientation_std,)),
        clock_bias=GaussianPrior(mean([ue.clock_bias], bias_std), (bias_std,)),
        va_priors=va_priors,
        va_height=float(scenario.bs[2]),
        new_va_box=tuple(new_va_box),
    )
