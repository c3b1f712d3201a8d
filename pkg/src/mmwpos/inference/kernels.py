"""Compiled inner loops for particle message evaluation.

All kernels return log-values. A message evaluated at target point i is
log( (1/K) sum_k lik(target_i, sample_k) ) where the samples are joint draws
of the factor's other variables. Positions are full 3-vectors.

The draws stand for kernel-density estimates, so each likelihood kernel is
widened by the KDE bandwidths pushed through the measurement function:
``h_pos`` (horizontal bandwidth of the other position) and ``h_scalar``
(bandwidth of the bias or heading draws). With both zero the kernels are the
plain measurement likelihoods.
"""

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
TWO_PI = 2.0 * math.pi


@njit(cache=True)
def _wrap(a):
    return math.pi - ((math.pi - a) % TWO_PI)


@njit(cache=True)
def _lse(buf, n):
    m = -np.inf
    for k in range(n):
        if buf[k] > m:
            m = buf[k]
    if m == -np.inf:
        return -np.inf
    s = 0.0
    for k in range(n):
        d = buf[k] - m
        if d > -40.0:
            s += math.exp(d)
    return m + math.log(s)


@njit(cache=True)
def _valid_side(ux, uy, uz, vx, vy, vz, bx, by, bz):
    # UE on the BS side of the plane bisecting BS and VA
    wx, wy, wz = bx - vx, by - vy, bz - vz
    dw = (ux - vx) * wx + (uy - vy) * wy + (uz - vz) * wz
    return 2.0 * dw >= wx * wx + wy * wy + wz * wz


@njit(cache=True)
def _widen(sig_el, sig_az, h_pos, h_ang, rho, r):
    # a horizontal displacement h turns the direction by at most h / range
    if h_pos > 0.0:
        e_el = h_pos / max(r, 1e-9)
        e_az = h_pos / max(rho, 1e-9)
    else:
        e_el = 0.0
        e_az = 0.0
    return (math.sqrt(sig_el * sig_el + e_el * e_el),
            math.sqrt(sig_az * sig_az + e_az * e_az + h_ang * h_ang))


@njit(cache=True)
def _mean3(points):
    n = points.shape[0]
    sx = sy = sz = 0.0
    for i in range(n):
        sx += points[i, 0]
        sy += points[i, 1]
        sz += points[i, 2]
    return sx / n, sy / n, sz / n


@njit(cache=True)
def toa_message(target_is_ue, targets, others, bias, weights_log, z, sigma, bs, check_side,
                h_pos=0.0, h_scalar=0.0):
    """TOA factor; 'others' are VA (or BS for LOS) when the target is the UE and vice versa."""
    n = targets.shape[0]
    K = others.shape[0]
    out = np.empty(n)
    buf = np.empty(K)
    sigma = math.sqrt(sigma * sigma + h_pos * h_pos + h_scalar * h_scalar)
    norm = -0.5 * LOG_2PI - math.log(sigma)
    for i in range(n):
        for k in range(K):
            if target_is_ue:
                ux, uy, uz = targets[i, 0], targets[i, 1], targets[i, 2]
                vx, vy, vz = others[k, 0], others[k, 1], others[k, 2]
            else:
                vx, vy, vz = targets[i, 0], targets[i, 1], targets[i, 2]
                ux, uy, uz = others[k, 0], others[k, 1], others[k, 2]
            if check_side and not _valid_side(ux, uy, uz, vx, vy, vz, bs[0], bs[1], bs[2]):
                buf[k] = -np.inf
                continue
            r = math.sqrt((vx - ux) ** 2 + (vy - uy) ** 2 + (vz - uz) ** 2)
            e = (z - r - bias[k]) / sigma
            buf[k] = weights_log[k] - 0.5 * e * e + norm
        out[i] = _lse(buf, K)
    return out


@njit(cache=True)
def doa_message(target_is_ue, targets, others, alpha, weights_log, z_el, z_az,
                sig_el, sig_az, bs, check_side, h_pos=0.0, h_scalar=0.0):
    """DOA (elevation, azimuth) pair factor. For LOS pass the BS as the 'VA'."""
    n = targets.shape[0]
    K = others.shape[0]
    out = np.empty(n)
    buf = np.empty(K)
    # measured world-frame arrival direction per heading draw
    ca = np.empty(K)
    sa = np.empty(K)
    for k in range(K):
        ca[k] = math.cos(z_az + alpha[k])
        sa[k] = math.sin(z_az + alpha[k])
    # kernel widths per draw, with ranges taken from the mean target point
    s1k = np.empty(K)
    s2k = np.empty(K)
    cn = np.empty(K)
    mx, my, mz = _mean3(targets)
    for k in range(K):
        if target_is_ue:
            dx, dy, dz = others[k, 0] - mx, others[k, 1] - my, others[k, 2] - mz
        else:
            dx, dy, dz = mx - others[k, 0], my - others[k, 1], mz - others[k, 2]
        rho = math.sqrt(dx * dx + dy * dy)
        s1k[k], s2k[k] = _widen(sig_el, sig_az, h_pos, h_scalar, rho, math.sqrt(rho * rho + dz * dz))
        cn[k] = -LOG_2PI - math.log(s1k[k] * s2k[k])
    for i in range(n):
        for k in range(K):
            if target_is_ue:
                ux, uy, uz = targets[i, 0], targets[i, 1], targets[i, 2]
                vx, vy, vz = others[k, 0], others[k, 1], others[k, 2]
            else:
                vx, vy, vz = targets[i, 0], targets[i, 1], targets[i, 2]
                ux, uy, uz = others[k, 0], others[k, 1], others[k, 2]
            if check_side and not _valid_side(ux, uy, uz, vx, vy, vz, bs[0], bs[1], bs[2]):
                buf[k] = -np.inf
                continue
            dx, dy, dz = vx - ux, vy - uy, vz - uz
            rho = math.sqrt(dx * dx + dy * dy)
            el = math.atan2(dz, rho)
            # wrapped azimuth residual as the signed angle between two directions
            e_az = math.atan2(dx * sa[k] - dy * ca[k], dx * ca[k] + dy * sa[k])
            e1 = (z_el - el) / s1k[k]
            e2 = e_az / s2k[k]
            buf[k] = weights_log[k] - 0.5 * (e1 * e1 + e2 * e2) + cn[k]
        out[i] = _lse(buf, K)
    return out


@njit(cache=True)
def dod_message(target_is_ue, targets, others, weights_log, z_el, z_az, sig_el, sig_az, bs,
                h_pos=0.0):
    """NLOS DOD pair factor (direction of the incidence point seen from the BS)."""
    n = targets.shape[0]
    K = others.shape[0]
    out = np.empty(n)
    buf = np.empty(K)
    bx, by, bz = bs[0], bs[1], bs[2]
    ca = math.cos(z_az)
    sa = math.sin(z_az)
    s1k = np.empty(K)
    s2k = np.empty(K)
    cn = np.empty(K)
    mx, my, mz = _mean3(targets)
    for k in range(K):
        if target_is_ue:
            ux, uy, uz, vx, vy, vz = mx, my, mz, others[k, 0], others[k, 1], others[k, 2]
        else:
            ux, uy, uz, vx, vy, vz = others[k, 0], others[k, 1], others[k, 2], mx, my, mz
        r = math.sqrt((bx - vx) ** 2 + (by - vy) ** 2 + (bz - vz) ** 2)
        # incidence point lies between BS-side half and the UE; use half the VA range as a floor
        d_ue = math.sqrt((ux - vx) ** 2 + (uy - vy) ** 2 + (uz - vz) ** 2)
        rng_k = max(0.5 * r, d_ue - 0.5 * r)
        s1k[k], s2k[k] = _widen(sig_el, sig_az, h_pos, 0.0, rng_k, rng_k)
        cn[k] = -LOG_2PI - math.log(s1k[k] * s2k[k])
    for i in range(n):
        for k in range(K):
            if target_is_ue:
                ux, uy, uz = targets[i, 0], targets[i, 1], targets[i, 2]
                vx, vy, vz = others[k, 0], others[k, 1], others[k, 2]
            else:
                vx, vy, vz = targets[i, 0], targets[i, 1], targets[i, 2]
                ux, uy, uz = others[k, 0], others[k, 1], others[k, 2]
            wx, wy, wz = bx - vx, by - vy, bz - vz
            dx, dy, dz = ux - vx, uy - vy, uz - vz
            dw = dx * wx + dy * wy + dz * wz
            ww = wx * wx + wy * wy + wz * wz
            if 2.0 * dw < ww or ww <= 0.0:
                buf[k] = -np.inf
                continue
            s = ww / (2.0 * dw)
            gx = vx + s * dx - bx
            gy = vy + s * dy - by
            gz = vz + s * dz - bz
            rho = math.sqrt(gx * gx + gy * gy)
            el = math.atan2(gz, rho)
            e_az = math.atan2(gx * sa - gy * ca, gx * ca + gy * sa)
            e1 = (z_el - el) / s1k[k]
            e2 = e_az / s2k[k]
            buf[k] = weights_log[k] - 0.5 * (e1 * e1 + e2 * e2) + cn[k]
        out[i] = _lse(buf, K)
    return out


@njit(cache=True)
def mixture1d_logpdf(points, centers, logw, sigma, circular):
    """log sum_k w_k N(x; c_k, sigma^2); wrapped differences when circular."""
    n = points.shape[0]
    K = centers.shape[0]
    out = np.empty(n)
    buf = np.empty(K)
    norm = -0.5 * LOG_2PI - math.log(sigma)
    for i in range(n):
        for k in range(K):
            d = points[i] - centers[k]
            if circular:
                d = _wrap(d)
            e = d / sigma
            buf[k] = logw[k] - 0.5 * e * e + norm
        out[i] = _lse(buf, K)
    return out


@njit(cache=True)
def mixture1d_var_logpdf(points, centers, logw, sigmas, circular):
    """As mixture1d_logpdf with a per-component std."""
    n = points.shape[0]
    K = centers.shape[0]
    out = np.empty(n)
    buf = np.empty(K)
    for i in range(n):
        for k in range(K):
            d = points[i] - centers[k]
            if circular:
                d = _wrap(d)
            e = d / sigmas[k]
            buf[k] = logw[k] - 0.5 * e * e - 0.5 * LOG_2PI - math.log(sigmas[k])
        out[i] = _lse(buf, K)
    return out


@njit(cache=True)
def mixture2d_logpdf(points, centers, logw, bw):
    """log sum_k w_k N(x; c_k, diag(bw_k^2)) for 2-D points; bw has shape (K, 2)."""
    n = points.shape[0]
    K = centers.shape[0]
    out = np.empty(n)
    buf = np.empty(K)
    for i in range(n):
        for k in range(K):
            e1 = (points[i, 0] - centers[k, 0]) / bw[k, 0]
            e2 = (points[i, 1] - centers[k, 1]) / bw[k, 1]
            buf[k] = logw[k] - 0.5 * (e1 * e1 + e2 * e2) - LOG_2PI - math.log(bw[k, 0] * bw[k, 1])
        out[i] = _lse(buf, K)
    return out
