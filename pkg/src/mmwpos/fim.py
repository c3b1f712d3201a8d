"""Fisher information of the location parameters and the derived error bounds.

Parameter vector layout (dimension 3L + 2 for L paths, one of them LOS):

    zeta = [x_UE (3), alpha_UE, B, x_VA,1 (3), ..., x_VA,L-1 (3)]

Channel vector layout: 5 entries per path, in the artifact-wide order
(toa, doa_el, doa_az, dod_el, dod_az), LOS block first when present.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from mmwpos.geometry import (
    DOA_AZ,
    DOA_EL,
    DOD_AZ,
    DOD_EL,
    TOA,
    GeometryError,
    los_params,
    nlos_params,
)

SINGULAR_RTOL = 1e-9
KNOWN_PRECISION = 1e12


@dataclass
class FimResult:
    j_channel: np.ndarray
    jacobian: np.ndarray
    j_location: np.ndarray
    j_hybrid: Optional[np.ndarray]
    peb: float
    oeb: float
    beb: float
    vaeb: np.ndarray
    identifiable: bool
    pinv_fallback: bool = False


@dataclass
class Bounds:
    peb: float
    oeb: float
    beb: float
    vaeb: np.ndarray
    identifiable: bool
    pinv_fallback: bool = False


def zeta_from_scene(ue, alpha, bias, vas) -> np.ndarray:
    parts = [np.asarray(ue, float).reshape(3), [alpha, bias]]
    parts += [np.asarray(v, float).reshape(3) for v in vas]
    return np.concatenate(parts)


def split_zeta(zeta):
    zeta = np.asarray(zeta, dtype=float)
    n_va = (zeta.size - 5) // 3
    if zeta.size != 5 + 3 * n_va:
        raise ValueError(f"zeta has invalid length {zeta.size}")
    return zeta[:3], zeta[3], zeta[4], zeta[5:].reshape(n_va, 3)


def channel_vector(zeta, bs, los: bool = True) -> np.ndarray:
    """Stacked channel parameters eta(zeta)."""
    ue, alpha, bias, vas = split_zeta(zeta)
    blocks = []
    if los:
        blocks.append(los_params(ue, alpha, bias, bs))
    for va in vas:
        blocks.append(nlos_params(ue, alpha, bias, va, bs))
    return np.concatenate(blocks)


def _direction_grad(v):
    """Gradients of (azimuth, elevation) of vector v w.r.t. v."""
    x, y, z = v
    rho2 = x * x + y * y
    rho = np.sqrt(rho2)
    r2 = rho2 + z * z
    if rho < 1e-12:
        raise GeometryError("azimuth undefined for a vertical direction")
    d_az = np.array([-y, x, 0.0]) / rho2
    d_el = np.array([-z * x / rho, -z * y / rho, rho]) / r2
    return d_az, d_el


def _los_jacobian(ue, bs):
    """Rows (5) of d eta_LOS / d (ue, alpha, bias)."""
    d = ue - bs
    r = np.linalg.norm(d)
    d_az, d_el = _direction_grad(d)
    J = np.zeros((5, 5))
    J[TOA, :3] = d / r
    J[TOA, 4] = 1.0
    J[DOD_AZ, :3] = d_az
    J[DOD_EL, :3] = d_el
    J[DOA_AZ, :3] = d_az
    J[DOA_AZ, 3] = -1.0
    J[DOA_EL, :3] = -d_el
    return J


def _nlos_jacobian(ue, va, bs, path: int):
    """Returns (rows w.r.t. (ue, alpha, bias), rows w.r.t. va)."""
    w = bs - va
    d = ue - va
    dw = d @ w
    ww = w @ w
    if ww < 1e-24 or abs(dw) < 1e-12 * ww:
        raise GeometryError(f"degenerate reflection geometry on NLOS path {path}")
    s = ww / (2.0 * dw)
    xs = va + s * d
    ds_due = -s * w / dw
    ds_dva = -w / dw + s * (w + d) / dw
    dxs_due = s * np.eye(3) + np.outer(d, ds_due)
    dxs_dva = (1.0 - s) * np.eye(3) + np.outer(d, ds_dva)

    try:
        g_az, g_el = _direction_grad(xs - bs)
        v = va - ue
        v_az, v_el = _direction_grad(v)
    except GeometryError as exc:
        raise GeometryError(f"{exc} on NLOS path {path}") from None
    r = np.linalg.norm(v)

    Ju = np.zeros((5, 5))
    Jv = np.zeros((5, 3))
    Ju[TOA, :3] = -v / r
    Ju[TOA, 4] = 1.0
    Jv[TOA] = v / r
    Ju[DOA_AZ, :3] = -v_az
    Ju[DOA_AZ, 3] = -1.0
    Jv[DOA_AZ] = v_az
    Ju[DOA_EL, :3] = -v_el
    Jv[DOA_EL] = v_el
    Ju[DOD_AZ, :3] = g_az @ dxs_due
    Jv[DOD_AZ] = g_az @ dxs_dva
    Ju[DOD_EL, :3] = g_el @ dxs_due
    Jv[DOD_EL] = g_el @ dxs_dva
    return Ju, Jv


def jacobian(zeta, bs, los: bool = True) -> np.ndarray:
    """Analytic Jacobian d eta / d zeta, shape (5 * n_paths, 3L + 2)."""
    ue, _, _, vas = split_zeta(zeta)
    bs = np.asarray(bs, dtype=float)
    n_va = len(vas)
    n_paths = n_va + int(los)
    J = np.zeros((5 * n_paths, 5 + 3 * n_va))
    row = 0
    if los:
        if np.hypot(*(ue - bs)[:2]) < 1e-12:
            raise GeometryError("degenerate LOS geometry (UE below BS)")
        J[0:5, :5] = _los_jacobian(ue, bs)
        row = 5
    for i, va in enumerate(vas):
        Ju, Jv = _nlos_jacobian(ue, va, bs, path=i + 1)
        J[row : row + 5, :5] = Ju
        J[row : row + 5, 5 + 3 * i : 8 + 3 * i] = Jv
        row += 5
    return J


def numerical_jacobian(zeta, bs, los: bool = True, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of ``channel_vector`` (azimuth jumps unwrapped)."""
    zeta = np.asarray(zeta, dtype=float)
    base = channel_vector(zeta, bs, los)
    J = np.zeros((base.size, zeta.size))
    az_rows = np.zeros(base.size, dtype=bool)
    az_rows[DOA_AZ::5] = True
    az_rows[DOD_AZ::5] = True
    for j in range(zeta.size):
        e = np.zeros_like(zeta)
        e[j] = step
        diff = channel_vector(zeta + e, bs, los) - channel_vector(zeta - e, bs, los)
        diff[az_rows] = np.pi - np.mod(np.pi - diff[az_rows], 2 * np.pi)
        J[:, j] = diff / (2 * step)
    return J


def channel_fim(sigmas: Sequence[np.ndarray]) -> np.ndarray:
    """Block-diagonal FIM of the channel parameters, blkdiag(Sigma_l^-1)."""
    n = len(sigmas)
    J = np.zeros((5 * n, 5 * n))
    for i, S in enumerate(sigmas):
        J[5 * i : 5 * i + 5, 5 * i : 5 * i + 5] = np.linalg.inv(np.asarray(S, dtype=float))
    return J


def location_fim(zeta, sigmas, bs, los: bool = True, return_parts: bool = False):
    """J(zeta) = G^T blkdiag(Sigma^-1) G with G the channel Jacobian."""
    G = jacobian(zeta, bs, los)
    Jc = channel_fim(sigmas)
    J = G.T @ Jc @ G
    J = 0.5 * (J + J.T)
    if return_parts:
        return J, G, Jc
    return J


def prior_information(
    n_va: int,
    ue_std=np.inf,
    orientation_std=np.inf,
    bias_std=np.inf,
    va_stds: Optional[Sequence] = None,
) -> np.ndarray:
    """Diagonal prior-information matrix in zeta layout.

    Standard deviations may be scalars or 3-vectors for positions; ``inf``
    means no prior (zero precision) and ``0`` means perfectly known
    (precision ``KNOWN_PRECISION``).
    """

    def prec(std):
        std = np.asarray(std, dtype=float)
        with np.errstate(divide="ignore"):
            p = np.where(std == 0, KNOWN_PRECISION, 1.0 / std**2)
        return np.where(np.isinf(std), 0.0, p)

    diag = np.zeros(5 + 3 * n_va)
    diag[:3] = prec(np.broadcast_to(ue_std, (3,)))
    diag[3] = prec(orientation_std)
    diag[4] = prec(bias_std)
    va_stds = [np.inf] * n_va if va_stds is None else list(va_stds)
    if len(va_stds) != n_va:
        raise ValueError("need one VA prior std per VA")
    for i, s in enumerate(va_stds):
        diag[5 + 3 * i : 8 + 3 * i] = prec(np.broadcast_to(np.inf if s is None else s, (3,)))
    return np.diag(diag)


def hybrid_fim(j_location, j_prior) -> np.ndarray:
    return np.asarray(j_location) + np.asarray(j_prior)


def is_identifiable(j) -> bool:
    j = np.asarray(j, dtype=float)
    if j.size == 0:
        return True
    d = np.diag(j).copy()
    if np.any(d <= 0):
        return False
    # equilibrate first so huge "known coordinate" precisions don't mask rank
    scale = 1.0 / np.sqrt(d)
    sv = np.linalg.svd(j * np.outer(scale, scale), compute_uv=False)
    return bool(sv[-1] >= SINGULAR_RTOL * sv[0]) if sv[0] > 0 else False


def _invert(j):
    try:
        c = np.linalg.cholesky(j)
        ci = np.linalg.inv(c)
        return ci.T @ ci, False
    except np.linalg.LinAlgError:
        return np.linalg.pinv(j, hermitian=True), True


def bounds(j, keep: Optional[np.ndarray] = None, n_va: Optional[int] = None) -> Bounds:
    """PEB/OEB/BEB/VAEB from an information matrix.

    ``keep`` lists which zeta indices ``j`` refers to (when rows/columns of
    known parameters were deleted); parameters not kept get bound 0.
    A singular ``j`` yields infinite bounds for every kept parameter.
    """
    j = np.asarray(j, dtype=float)
    if keep is None:
        keep = np.arange(j.shape[0])
    keep = np.asarray(keep)
    if n_va is None:
        n_va = (int(keep.max()) - 4 + 2) // 3 if keep.size else 0
    full = 5 + 3 * n_va
    var = np.zeros(full)
    identifiable = is_identifiable(j)
    fallback = False
    if identifiable:
        cov, fallback = _invert(j)
        var[keep] = np.clip(np.diag(cov), 0.0, None)
    else:
        var[keep] = np.inf
    peb = float(np.sqrt(var[:3].sum()))
    oeb = float(np.sqrt(var[3]))
    beb = float(np.sqrt(var[4]))
    vaeb = np.sqrt(var[5:].reshape(n_va, 3).sum(axis=1)) if n_va else np.zeros(0)
    return Bounds(peb, oeb, beb, vaeb, identifiable, fallback)


def free_indices(n_va: int, bias_known: bool = False, map_known: bool = False,
                 ue_z_known: bool = False, orientation_known: bool = False) -> np.ndarray:
    """zeta indices that stay unknown after deleting known parameters."""
    idx = [0, 1] + ([] if ue_z_known else [2])
    if not orientation_known:
        idx.append(3)
    if not bias_known:
        idx.append(4)
    if not map_known:
        idx += list(range(5, 5 + 3 * n_va))
    return np.array(idx, dtype=int)


def analyze(
    zeta,
    sigmas,
    bs,
    los: bool = True,
    bias_known: bool = False,
    map_known: bool = False,
    j_prior: Optional[np.ndarray] = None,
) -> FimResult:
    """Full FIM pipeline for one scene.

    Known bias/map delete rows and columns of the location FIM; when
    ``j_prior`` is given, bounds come from the hybrid FIM instead.
    """
    _, _, _, vas = split_zeta(zeta)
    n_va = len(vas)
    J, G, Jc = location_fim(zeta, sigmas, bs, los, return_parts=True)
    keep = free_indices(n_va, bias_known=bias_known, map_known=map_known)
    Jh = None
    if j_prior is not None:
        Jh = hybrid_fim(J, j_prior)
        b = bounds(Jh[np.ix_(keep, keep)], keep, n_va)
    else:
        b = bounds(J[np.ix_(keep, keep)], keep, n_va)
    return FimResult(
        j_channel=Jc, jacobian=G, j_location=J, j_hybrid=Jh,
        peb=b.peb, oeb=b.oeb, beb=b.beb, vaeb=b.vaeb,
        identifiable=b.identifiable, pinv_fallback=b.pinv_fallback,
    )


@dataclass
class PathConfig:
    los: bool
    n_nlos: int
    map_known: bool
    bias_known: bool
    label: str = field(default="")


def eight_combinations(n_nlos: int):
    for los, map_known, bias_known in itertools.product((True, False), repeat=3):
        yield PathConfig(los, n_nlos, map_known, bias_known)


def random_vas(rng, n, bs, box=(-100.0, 100.0), min_dist=1.0):
    """VAs uniform in a horizontal box at the BS height, away from the BS."""
    bs = np.asarray(bs, dtype=float)
    out = []
    while len(out) < n:
        xy = rng.uniform(box[0], box[1], size=2)
        if np.hypot(*(xy - bs[:2])) < min_dist:
            continue
        out.append(np.array([xy[0], xy[1], bs[2]]))
    return out


def identifiability_table(ue, alpha, bias, bs, base_vas, path_configs, sigma,
                          seed: int = 0, box=(-100.0, 100.0)):
    """Identifiability flag and bounds for each path configuration.

    The first NLOS paths use ``base_vas``; extra ones are placed uniformly at
    random in ``box`` (seeded), rejecting candidates that make the reflection
    geometry degenerate for the UE.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for cfg in path_configs:
        vas = list(base_vas[: cfg.n_nlos])
        while len(vas) < cfg.n_nlos:
            cand = random_vas(rng, 1, bs, box)[0]
            try:
                _nlos_jacobian(np.asarray(ue, float), cand, np.asarray(bs, float), 0)
            except GeometryError:
                continue
            vas.append(cand)
        n_paths = cfg.n_nlos + int(cfg.los)
        if n_paths == 0:
            rows.append(dict(cfg=cfg, identifiable=False, peb=np.inf, oeb=np.inf,
                             beb=np.inf, vaeb=np.zeros(0)))
            continue
        zeta = zeta_from_scene(ue, alpha, bias, vas)
        res = analyze(zeta, [sigma] * n_paths, bs, los=cfg.los,
                      bias_known=cfg.bias_known, map_known=cfg.map_known)
        rows.append(dict(cfg=cfg, identifiable=res.identifiable, peb=res.peb,
                         oeb=res.oeb, beb=res.beb, vaeb=res.vaeb))
    return rows
