"""Ground-truth world description shared by the simulators and estimators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from mmwpos.geometry import UEState, VirtualAnchor

DEFAULT_BS = (0.0, 0.0, 5.0)
DEFAULT_UE = (20.0, 10.0, 0.0)
DEFAULT_VAS = ((-20.0, 0.0, 5.0), (80.0, 0.0, 5.0), (0.0, -20.0, 5.0), (0.0, 80.0, 5.0))


@dataclass
class Scenario:
    bs: np.ndarray
    ue: UEState
    vas: List[np.ndarray] = field(default_factory=list)
    los: bool = True

    def __post_init__(self):
        self.bs = np.asarray(self.bs, dtype=float).reshape(3)
        self.vas = [np.asarray(v, dtype=float).reshape(3) for v in self.vas]

    @property
    def n_paths(self) -> int:
        return len(self.vas) + int(self.los)

    def virtual_anchors(self) -> List[VirtualAnchor]:
        return [VirtualAnchor(v, i) for i, v in enumerate(self.vas)]


def default_scenario(los: bool = True) -> Scenario:
    """BS at [0,0,5], UE at [20,10,0] heading 0, four vertical walls."""
    return Scenario(
        bs=np.array(DEFAULT_BS),
        ue=UEState(np.array(DEFAULT_UE), 0.0, 0.0),
        vas=[np.array(v) for v in DEFAULT_VAS],
        los=los,
    )
