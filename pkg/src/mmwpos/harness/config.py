"""Experiment configuration: JSON in, validated dataclasses out."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import List, Optional, Tuple

import jsonschema
import numpy as np

from mmwpos.geometry import UEState
from mmwpos.measurement import NoiseSpec, default_covariance
from mmwpos.scenario import Scenario

KINDS = ("bounds", "assoc-sweep", "localize", "mc")


class ConfigError(ValueError):
    """Configuration could not be read or violates the schema."""


@dataclass
class ScenarioConfig:
    bs: Tuple[float, float, float] = (0.0, 0.0, 5.0)
    ue_position: Tuple[float, float, float] = (20.0, 10.0, 0.0)
    ue_orientation: float = 0.0
    ue_clock_bias: float = 0.0
    vas: List[Tuple[float, float, float]] = field(default_factory=list)
    los: bool = True

    def build(self) -> Scenario:
        ue = UEState(np.array(self.ue_position, float), self.ue_orientation, self.ue_clock_bias)
        return Scenario(np.array(self.bs, float), ue, [np.array(v, float) for v in self.vas], self.los)


@dataclass
class NoiseConfig:
    toa_std: float = 0.1
    angle_std: float = 0.01

    def build(self) -> NoiseSpec:
        return NoiseSpec(default_covariance(self.toa_std, self.angle_std))


@dataclass
class PriorConfig:
    ue_std: float = 3.2
    orientation_std: float = float(np.pi / 2)
    bias_std: float = 100.0
    va_stds: List[Optional[float]] = field(default_factory=lambda: [10.0, 10.0, 10.0, None])
    new_va_box: Tuple[float, float, float, float] = (-100.0, 100.0, -100.0, 100.0)
    perturb_means: bool = True


@dataclass
class BoundsConfig:
    max_nlos: int = 8
    va_box: Tuple[float, float] = (-100.0, 100.0)


@dataclass
class AssocConfig:
    bias_stds: List[float] = field(default_factory=lambda: [0.1, 1.0, 10.0, 100.0])
    masks: List[str] = field(default_factory=lambda: ["full", "no_toa", "no_doa_az", "no_toa_doa_az"])
    orientation: List[str] = field(default_factory=lambda: ["unknown", "known"])


@dataclass
class ExperimentConfig:
    kind: str
    scenario: ScenarioConfig
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    priors: PriorConfig = field(default_factory=PriorConfig)
    seeds: List[int] = field(default_factory=lambda: [0])
    trials: int = 200
    particles: int = 2000
    iterations: int = 10
    msg_samples: int = 250
    assoc_samples: int = 1000
    assoc_mask: str = "no_toa_doa_az"  # components used when localize runs association
    perfect_association: bool = True
    max_failure_rate: float = 0.05
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    assoc: AssocConfig = field(default_factory=AssocConfig)
    output: Optional[str] = None

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        cfg = replace(self, **kw)
        validate_semantics(cfg)
        return cfg

    def hash(self) -> str:
        """Identity of the experiment; the output location is not part of it."""
        d = to_dict(self)
        d.pop("output")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _schema():
    return json.loads(resources.files("mmwpos.harness").joinpath("schema.json").read_text())


def validate_semantics(cfg: ExperimentConfig) -> None:
    if cfg.kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {cfg.kind!r}")
    if not cfg.seeds:
        raise ConfigError("seed list must not be empty")
    for name in ("trials", "particles", "iterations", "msg_samples", "assoc_samples"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    if len(cfg.priors.va_stds) > len(cfg.scenario.vas):
        raise ConfigError(
            f"priors.va_stds has {len(cfg.priors.va_stds)} entries but the scenario has "
            f"{len(cfg.scenario.vas)} VAs")
    if any(np.allclose(v, cfg.scenario.bs) for v in cfg.scenario.vas):
        raise ConfigError("a VA coincides with the BS")
    x0, x1, y0, y1 = cfg.priors.new_va_box
    if not (x1 > x0 and y1 > y0):
        raise ConfigError("priors.new_va_box must be (xmin, xmax, ymin, ymax) with positive extent")
    if cfg.scenario.los is False and not cfg.scenario.vas:
        raise ConfigError("scenario has no paths")


def from_dict(d: dict) -> ExperimentConfig:
    try:
        jsonschema.validate(d, _schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {e.message}") from None
    s = d["scenario"]
    ue = s["ue"]
    scen = ScenarioConfig(
        bs=tuple(s["bs"]), ue_position=tuple(ue["position"]),
        ue_orientation=float(ue.get("orientation", 0.0)), ue_clock_bias=float(ue.get("clock_bias", 0.0)),
        vas=[tuple(v) for v in s["vas"]], los=bool(s.get("los", True)),
    )
    pr = dict(d.get("priors", {}))
    if "new_va_box" in pr:
        pr["new_va_box"] = tuple(pr["new_va_box"])
    bnd = dict(d.get("bounds", {}))
    if "va_box" in bnd:
        bnd["va_box"] = tuple(bnd["va_box"])
    top = {k: v for k, v in d.items() if k not in ("scenario", "noise", "priors", "bounds", "assoc")}
    cfg = ExperimentConfig(
        scenario=scen, noise=NoiseConfig(**d.get("noise", {})), priors=PriorConfig(**pr),
        bounds=BoundsConfig(**bnd), assoc=AssocConfig(**d.get("assoc", {})), **top,
    )
    validate_semantics(cfg)
    return cfg


def to_dict(cfg: ExperimentConfig) -> dict:
    s = cfg.scenario
    out = asdict(cfg)
    out["scenario"] = {
        "bs": list(s.bs),
        "ue": {"position": list(s.ue_position), "orientation": s.ue_orientation, "clock_bias": s.ue_clock_bias},
        "vas": [list(v) for v in s.vas],
        "los": s.los,
    }
    out["priors"]["new_va_box"] = list(cfg.priors.new_va_box)
    out["bounds"]["va_box"] = list(cfg.bounds.va_box)
    return out


def dumps(cfg: ExperimentConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)


def loads(text: str) -> ExperimentConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError("configuration must be a JSON object")
    return from_dict(d)


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return loads(text)


def default_config_text() -> str:
    return resources.files("mmwpos.harness").joinpath("default_scenario.json").read_text()


def default_config(kind: Optional[str] = None) -> ExperimentConfig:
    cfg = loads(default_config_text())
    return cfg if kind is None else replace(cfg, kind=kind)
