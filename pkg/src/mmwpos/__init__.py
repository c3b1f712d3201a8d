"""Single-epoch mmWave downlink positioning: geometry, association, particle BP and bounds."""

from mmwpos.geometry import (
    UEState,
    ReflectingSurface,
    VirtualAnchor,
    ChannelParams,
    va_from_surface,
    surface_from_va,
    incidence_point,
    forward_model,
    wrap_angle,
)

__all__ = [
    "UEState",
    "ReflectingSurface",
    "VirtualAnchor",
    "ChannelParams",
    "va_from_surface",
    "surface_from_va",
    "incidence_point",
    "forward_model",
    "wrap_angle",
]

__version__ = "0.1.0"
