"""Factor graph of the single-epoch joint posterior.

Variables: ``ue`` (horizontal UE position), ``alpha`` (heading), ``bias``
(clock bias in meters) and one ``va<j>`` per NLOS path (horizontal VA
position). Each associated path contributes three likelihood factors: TOA,
DOA pair (elevation, azimuth) and DOD pair. Covariances are reduced to their
diagonals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from mmwpos.assoc import LOS, NEW_VA, Assignment
from mmwpos.geometry import DOA_AZ, DOA_EL, DOD_AZ, DOD_EL, TOA
from mmwpos.priors import PriorSpec

UE, ALPHA, BIAS = "ue", "alpha", "bias"


@dataclass
class PathInfo:
    index: int  # position of the measurement in Z
    los: bool
    z: np.ndarray
    std: np.ndarray  # sqrt of the covariance diagonal
    va_var: Optional[str] = None
    va_prior: Optional[object] = None
    source: object = None


@dataclass
class Factor:
    name: str
    kind: str  # "toa" | "doa" | "dod"
    path: PathInfo
    variables: Tuple[str, ...]

    @property
    def los(self) -> bool:
        return self.path.los

    @property
    def va_var(self) -> Optional[str]:
        return self.path.va_var

    def z(self):
        z = self.path.z
        if self.kind == "toa":
            return (z[TOA],)
        if self.kind == "doa":
            return (z[DOA_EL], z[DOA_AZ])
        return (z[DOD_EL], z[DOD_AZ])

    def std(self):
        s = self.path.std
        if self.kind == "toa":
            return (s[TOA],)
        if self.kind == "doa":
            return (s[DOA_EL], s[DOA_AZ])
        return (s[DOD_EL], s[DOD_AZ])


@dataclass
class FactorGraph:
    bs: np.ndarray
    priors: PriorSpec
    paths: List[PathInfo]
    factors: List[Factor]
    variables: List[str]
    va_priors: Dict[str, object] = field(default_factory=dict)

    def neighbors(self, var: str) -> List[Factor]:
        return [f for f in self.factors if var in f.variables]

    def factor(self, name: str) -> Factor:
        for f in self.factors:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def va_vars(self) -> List[str]:
        return [p.va_var for p in self.paths if not p.los]

    @property
    def n_edges(self) -> int:
        return sum(len(f.variables) for f in self.factors)

    def is_tree(self) -> bool:
        """Forest test on the bipartite graph: edges == nodes - components."""
        nodes = list(self.variables) + [f.name for f in self.factors]
        parent = {n: n for n in nodes}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for f in self.factors:
            for v in f.variables:
                ra, rb = find(f.name), find(v)
                if ra == rb:
                    return False
                parent[ra] = rb
        return True


def build_factor_graph(Z, assignment, priors: PriorSpec, bs) -> FactorGraph:
    """One TOA, DOA and DOD factor per associated path.

    ``assignment`` is an Assignment or a per-measurement list of resolved
    sources (LOS, a VA index, or NEW_VA). New VAs get the uniform box prior.
    """
    Z = list(Z)
    if not Z:
        raise ValueError("cannot build a factor graph from an empty measurement set")
    sources = assignment.resolved() if isinstance(assignment, Assignment) else list(assignment)
    if len(sources) != len(Z):
        raise ValueError("assignment length does not match the measurement set")
    if sum(1 for s in sources if s == LOS) > 1:
        raise ValueError("at most one measurement can be the LOS path")

    paths: List[PathInfo] = []
    va_priors = {}
    n_nlos = 0
    # LOS first keeps factor naming stable regardless of measurement order
    order = sorted(range(len(Z)), key=lambda l: (sources[l] != LOS, l))
    for l in order:
        m, src = Z[l], sources[l]
        std = np.sqrt(np.diag(np.asarray(m.sigma, dtype=float)))
        if src == LOS:
            paths.append(PathInfo(l, True, m.z, std, source=LOS))
            continue
        n_nlos += 1
        var = f"va{n_nlos}"
        prior = priors.va_prior(NEW_VA if src == NEW_VA else src)
        if prior is None:
            raise ValueError(f"measurement {l} assigned to VA {src} which has no prior")
        va_priors[var] = prior
        paths.append(PathInfo(l, False, m.z, std, var, prior, source=src))

    factors = []
    for p in paths:
        tag = "0" if p.los else p.va_var[2:]
        extra = () if p.los else (p.va_var,)
        factors.append(Factor(f"toa{tag}", "toa", p, (UE, BIAS) + extra))
        factors.append(Factor(f"doa{tag}", "doa", p, (UE, ALPHA) + extra))
        factors.append(Factor(f"dod{tag}", "dod", p, (UE,) + extra))

    variables = [UE, ALPHA, BIAS] + [p.va_var for p in paths if not p.los]
    return FactorGraph(np.asarray(bs, dtype=float), priors, paths, factors, variables, va_priors)
