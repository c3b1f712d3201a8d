"""
Scene geometry and the deterministic location-to-channel mapping.

Every path is described by a 5-vector ordered as

    (toa, doa_el, doa_az, dod_el, dod_az)

with the TOA expressed as a range in meters (c * tau, clock bias included)
and all angles in radians. Azimuths live in (-pi, pi], elevations in
[-pi/2, pi/2].

The batched helpers (``los_params``, ``nlos_params``) broadcast over leading
dimensions so they can be evaluated on thousands of particles at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

TOA, DOA_EL, DOA_AZ, DOD_EL, DOD_AZ = range(5)
PARAM_NAMES = ("toa", "doa_el", "doa_az", "dod_el", "dod_az")
AZIMUTH_INDICES = (DOA_AZ, DOD_AZ)

SPEED_OF_LIGHT = 299_792_458.0
UNIT_TOL = 1e-9


class GeometryError(ValueError):
    """Raised for degenerate scene geometry (coincident points, grazing paths)."""


def wrap_angle(a):
    """Wrap angle(s) to the half-open interval (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    # in-range values pass through untouched so wrapping is idempotent bit for bit
    w = np.where((a > -np.pi) & (a <= np.pi), a, w)
    if w.ndim == 0:
        return float(w)
    return w


@dataclass(frozen=True)
class UEState:
    position: np.ndarray
    orientation: float = 0.0
    clock_bias: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("UE position must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", wrap_angle(self.orientation))
        object.__setattr__(self, "clock_bias", float(self.clock_bias))


@dataclass(frozen=True)
class ReflectingSurface:
    point_f: np.ndarray
    normal_u: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.point_f, dtype=float).reshape(3)
        u = np.asarray(self.normal_u, dtype=float).reshape(3)
        if abs(np.linalg.norm(u) - 1.0) > UNIT_TOL:
            raise ValueError(f"surface normal must be unit length, got norm {np.linalg.norm(u)}")
        object.__setattr__(self, "point_f", f)
        object.__setattr__(self, "normal_u", u)


@dataclass(frozen=True)
class VirtualAnchor:
    position: np.ndarray
    id: int

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))


@dataclass(frozen=True)
class ChannelParams:
    toa: float
    doa_el: float
    doa_az: float
    dod_el: float
    dod_az: float
    va_id: Optional[int] = None  # None means the LOS path
    degenerate: bool = field(default=False, compare=False)

    @property
    def is_los(self) -> bool:
        return self.va_id is None

    def as_vector(self) -> np.ndarray:
        return np.array([self.toa, self.doa_el, self.doa_az, self.dod_el, self.dod_az])


def va_from_surface(surface: ReflectingSurface, bs) -> np.ndarray:
    """Mirror the base station across ``surface``: P @ bs + t with P = I - 2uu^T."""
    bs = np.asarray(bs, dtype=float).reshape(3)
    u = surface.normal_u
    P = np.eye(3) - 2.0 * np.outer(u, u)
    t = 2.0 * (surface.point_f @ u) * u
    return P @ bs + t


def surface_from_va(va, bs) -> ReflectingSurface:
    """Recover the reflecting plane (midpoint, unit normal toward the BS) from a VA."""
    va = np.asarray(va, dtype=float).reshape(3)
    bs = np.asarray(bs, dtype=float).reshape(3)
    diff = bs - va
    dist = np.linalg.norm(diff)
    if dist < 1e-12:
        raise GeometryError("virtual anchor coincides with the base station")
    return ReflectingSurface(point_f=0.5 * (bs + va), normal_u=diff / dist)


def _reflection_scale(va, ue, bs):
    # x_s = va + s * (ue - va); with f = (bs+va)/2 and u ~ (bs-va):
    # s = |bs - va|^2 / (2 (ue - va).(bs - va))
    w = bs - va
    d = ue - va
    denom = 2.0 * np.sum(d * w, axis=-1)
    return np.sum(w * w, axis=-1), denom


def incidence_point(va, ue, bs) -> np.ndarray:
    """Specular reflection point where the VA->UE line crosses the reflecting plane."""
    va = np.asarray(va, dtype=float)
    ue = np.asarray(ue, dtype=float)
    bs = np.asarray(bs, dtype=float)
    num, denom = _reflection_scale(va, ue, bs)
    if np.any(np.abs(num) < 1e-24):
        raise GeometryError("virtual anchor coincides with the base station")
    if np.any(np.abs(denom) < 1e-12 * num):
        raise GeometryError("UE lies in the reflecting plane as seen from the VA")
    s = num / denom
    return va + np.asarray(s)[..., None] * (ue - va)


def _az_el(v):
    az = np.arctan2(v[..., 1], v[..., 0])
    rho = np.hypot(v[..., 0], v[..., 1])
    el = np.arctan2(v[..., 2], rho)
    return az, el, rho


def los_params(ue, alpha, bias, bs):
    """Batched LOS channel parameters, shape (..., 5)."""
    ue = np.asarray(ue, dtype=float)
    bs = np.asarray(bs, dtype=float)
    d = ue - bs
    az, el, _ = _az_el(d)
    out = np.empty(np.broadcast_shapes(d.shape[:-1], np.shape(alpha), np.shape(bias)) + (5,))
    out[..., TOA] = np.linalg.norm(d, axis=-1) + bias
    out[..., DOD_AZ] = az
    out[..., DOD_EL] = el
    out[..., DOA_AZ] = wrap_angle(np.pi + az - alpha)
    out[..., DOA_EL] = -el
    return out


def nlos_params(ue, alpha, bias, va, bs):
    """Batched single-bounce channel parameters, shape (..., 5).

    No degeneracy checks; callers working on particle clouds filter grazing
    configurations themselves.
    """
    ue = np.asarray(ue, dtype=float)
    va = np.asarray(va, dtype=float)
    bs = np.asarray(bs, dtype=float)
    v = va - ue
    num, denom = _reflection_scale(va, ue, bs)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = num / denom
    xs = va + s[..., None] * (ue - va)
    dod_az, dod_el, _ = _az_el(xs - bs)
    doa_az, doa_el, _ = _az_el(v)
    shape = np.broadcast_shapes(v.shape[:-1], np.shape(alpha), np.shape(bias))
    out = np.empty(shape + (5,))
    out[..., TOA] = np.linalg.norm(v, axis=-1) + bias
    out[..., DOA_EL] = doa_el
    out[..., DOA_AZ] = wrap_angle(doa_az - alpha)
    out[..., DOD_EL] = dod_el
    out[..., DOD_AZ] = dod_az
    return out


def forward_model(
    state: UEState,
    va: Union[VirtualAnchor, np.ndarray, None],
    bs,
) -> ChannelParams:
    """Channel parameters of one path: LOS when ``va`` is None, else the VA's bounce."""
    bs = np.asarray(bs, dtype=float).reshape(3)
    ue = state.position
    if np.linalg.norm(ue - bs) < 1e-12:
        raise GeometryError("UE coincides with the base station")
    if va is None:
        eta = los_params(ue, state.orientation, state.clock_bias, bs)
        degenerate = bool(np.hypot(*(ue - bs)[:2]) < 1e-12)
        va_id = None
    else:
        if isinstance(va, VirtualAnchor):
            va_pos, va_id = va.position, va.id
        else:
            va_pos, va_id = np.asarray(va, dtype=float).reshape(3), -1
        xs = incidence_point(va_pos, ue, bs)
        eta = nlos_params(ue, state.orientation, state.clock_bias, va_pos, bs)
        degenerate = bool(
            np.hypot(*(xs - bs)[:2]) < 1e-12 or np.hypot(*(va_pos - ue)[:2]) < 1e-12
        )
    return ChannelParams(*map(float, eta), va_id=va_id, degenerate=degenerate)


def path_params(ue, alpha, bias, va, bs):
    """Dispatch helper: LOS when ``va`` is None."""
    if va is None:
        return los_params(ue, alpha, bias, bs)
    return nlos_params(ue, alpha, bias, va, bs)


def wrong_side(ue, va, bs):
    """True where the UE sits behind the reflecting surface of ``va``.

    Tests (x_UE - x_s)^T (x_BS - x_VA) < 0 with x_s the incidence point.
    Grazing/degenerate configurations are reported as wrong-side.
    """
    ue = np.asarray(ue, dtype=float)
    va = np.asarray(va, dtype=float)
    bs = np.asarray(bs, dtype=float)
    num, denom = _reflection_scale(va, ue, bs)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = num / denom
    xs = va + s[..., None] * (ue - va)
    side = np.sum((ue - xs) * (bs - va), axis=-1)
    bad = ~np.isfinite(side) | (side < 0) | (num < 1e-24)
    return bad
