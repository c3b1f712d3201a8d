"""Particle belief propagation for joint UE state and map estimation."""

from mmwpos.inference.bp import (
    BPConfig,
    BPResult,
    Mixture1D,
    factor_to_variable_message,
    run_bp,
    variable_to_factor_message,
)
from mmwpos.inference.graph import ALPHA, BIAS, UE, Factor, FactorGraph, build_factor_graph
from mmwpos.inference.particles import ParticleBelief, ResampleError, point_estimate

__all__ = [
    "ALPHA", "BIAS", "UE", "BPConfig", "BPResult", "Factor", "FactorGraph", "Mixture1D",
    "ParticleBelief", "ResampleError", "build_factor_graph", "factor_to_variable_message",
    "point_estimate", "run_bp", "variable_to_factor_message",
]
