import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmwpos.geometry import (
    ChannelParams,
    GeometryError,
    ReflectingSurface,
    UEState,
    VirtualAnchor,
    forward_model,
    incidence_point,
    nlos_params,
    surface_from_va,
    va_from_surface,
    wrap_angle,
    wrong_side,
)

import oracles

BS = np.array([0.0, 0.0, 5.0])
UE = np.array([20.0, 10.0, 0.0])

coord = st.floats(-100, 100, allow_nan=False)
angle = st.floats(-20, 20, allow_nan=False)


# ---- va_from_surface


def test_va_from_surface_examples():
    assert np.allclose(va_from_surface(ReflectingSurface([-10, 0, 5], [1, 0, 0]), BS), [-20, 0, 5])
    assert np.allclose(va_from_surface(ReflectingSurface([40, 0, 5], [-1, 0, 0]), BS), [80, 0, 5])
    assert np.allclose(va_from_surface(ReflectingSurface(BS, [0, 1, 0]), BS), BS)


def test_non_unit_normal_rejected():
    with pytest.raises(ValueError):
        ReflectingSurface([0, 0, 0], [2, 0, 0])


def test_vertical_wall_keeps_bs_height(rng):
    for _ in range(50):
        phi = rng.uniform(-np.pi, np.pi)
        s = ReflectingSurface(rng.uniform(-50, 50, 3), [np.cos(phi), np.sin(phi), 0.0])
        assert va_from_surface(s, BS)[2] == pytest.approx(BS[2], abs=1e-12)


# ---- surface_from_va


def test_surface_from_va_examples():
    s = surface_from_va([-20, 0, 5], BS)
    assert np.allclose(s.normal_u, [1, 0, 0]) and np.allclose(s.point_f, [-10, 0, 5])
    s = surface_from_va([0, -20, 5], BS)
    assert np.allclose(s.normal_u, [0, 1, 0]) and np.allclose(s.point_f, [0, -10, 5])


def test_surface_from_va_degenerate():
    with pytest.raises(GeometryError):
        surface_from_va(BS, BS)


@given(st.tuples(coord, coord, st.floats(-10, 10)))
def test_va_surface_round_trip(va):
    va = np.array(va)
    if np.linalg.norm(va - BS) < 1e-3:
        return
    s = surface_from_va(va, BS)
    assert abs(np.linalg.norm(s.normal_u) - 1) < 1e-9
    assert np.allclose(va_from_surface(s, BS), va, atol=1e-9 * max(1.0, np.abs(va).max()))


# ---- incidence_point


def test_incidence_point_examples():
    assert np.allclose(incidence_point([-20, 0, 5], UE, BS), [-10, 2.5, 3.75])
    xs = incidence_point([0, -20, 5], UE, BS)
    f, u = [0.0, -10.0, 5.0], [0.0, 1.0, 0.0]
    assert xs[1] == pytest.approx(-10.0, abs=1e-12)
    assert np.allclose(xs, oracles.line_plane(list(UE), [0, -20, 5], f, u))


def test_incidence_point_on_plane_when_ue_on_plane():
    # UE placed on the wall itself: the reflection point is the UE
    xs = incidence_point([-20, 0, 5], [-10, 3, 1], BS)
    assert xs[0] == pytest.approx(-10.0)
    assert np.allclose(xs, [-10, 3, 1])


def test_incidence_point_degenerate():
    # UE - VA orthogonal to the normal: line parallel to the wall
    with pytest.raises(GeometryError):
        incidence_point([-20, 0, 5], [-20, 10, 0], BS)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_incidence_on_plane_and_segment(seed):
    ue, bs, f, u = oracles.random_wall_scene(np.random.default_rng(seed))
    va = va_from_surface(ReflectingSurface(f, u), bs)
    xs = incidence_point(va, ue, bs)
    assert abs(np.dot(xs - f, u)) < 1e-9 * max(1.0, np.abs(xs).max())
    t = np.dot(xs - va, np.subtract(ue, va)) / np.dot(np.subtract(ue, va), np.subtract(ue, va))
    assert -1e-12 <= t <= 1 + 1e-12


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_reflection_path_length(seed):
    ue, bs, f, u = oracles.random_wall_scene(np.random.default_rng(seed))
    ue, bs = np.array(ue), np.array(bs)
    va = va_from_surface(ReflectingSurface(f, u), bs)
    xs = incidence_point(va, ue, bs)
    direct = np.linalg.norm(va - ue)
    folded = np.linalg.norm(bs - xs) + np.linalg.norm(xs - ue)
    assert folded == pytest.approx(direct, rel=1e-6)


# ---- forward_model


def test_forward_model_los_example():
    p = forward_model(UEState(UE, 0.0, 0.0), None, BS)
    assert p.is_los
    assert p.toa == pytest.approx(math.sqrt(525), abs=1e-9)
    assert p.dod_az == pytest.approx(0.46365, abs=1e-5)
    assert p.dod_el == pytest.approx(-0.21998, abs=1e-5)
    assert p.doa_az == pytest.approx(-2.67794, abs=1e-5)
    assert p.doa_el == pytest.approx(0.21998, abs=1e-5)


def test_forward_model_nlos_example():
    p = forward_model(UEState(UE, 0.0, 0.0), VirtualAnchor([-20, 0, 5], 0), BS)
    assert p.va_id == 0
    assert p.toa == pytest.approx(math.sqrt(1725), abs=1e-9)
    assert p.dod_az == pytest.approx(math.atan2(2.5, -10.0), abs=1e-12)
    assert p.dod_az == pytest.approx(2.89661, abs=1e-5)
    assert p.doa_az == pytest.approx(-2.89661, abs=1e-5)
    assert p.doa_el == pytest.approx(0.12067, abs=1e-5)


@pytest.mark.parametrize("va", [None, [-20, 0, 5], [80, 0, 5], [0, -20, 5], [0, 80, 5]])
def test_orientation_shifts_doa_azimuth_only(va):
    a = forward_model(UEState(UE, 0.0, 0.0), va, BS).as_vector()
    b = forward_model(UEState(UE, np.pi / 2, 0.0), va, BS).as_vector()
    assert wrap_angle(b[2] - a[2]) == pytest.approx(-np.pi / 2, abs=1e-12)
    assert np.allclose(np.delete(a, 2), np.delete(b, 2), atol=1e-12)


def test_clock_bias_adds_to_toa():
    a = forward_model(UEState(UE, 0.3, 0.0), [-20, 0, 5], BS).as_vector()
    b = forward_model(UEState(UE, 0.3, 7.5), [-20, 0, 5], BS).as_vector()
    assert b[0] - a[0] == pytest.approx(7.5)
    assert np.allclose(a[1:], b[1:])


def test_ue_below_bs_flags_degeneracy():
    p = forward_model(UEState([0, 0, 0]), None, BS)
    assert p.degenerate and p.dod_az == 0.0


def test_ue_at_bs_rejected():
    with pytest.raises(GeometryError):
        forward_model(UEState(BS), None, BS)


def test_mirror_oracle_100_scenes():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        ue, bs, f, u = oracles.random_wall_scene(rng)
        ref, va_ref, _ = oracles.mirror_path(ue, bs, f, u)
        va = va_from_surface(ReflectingSurface(f, u), bs)
        assert np.allclose(va, va_ref, rtol=1e-12, atol=1e-12)
        got = forward_model(UEState(ue), VirtualAnchor(va, 0), bs).as_vector()
        err = np.abs(got - ref)
        err[[2, 4]] = [abs(oracles.angle_diff(got[k], ref[k])) for k in (2, 4)]
        worst = max(worst, float(np.max(err / np.maximum(np.abs(ref), 1.0))))
    assert worst < 1e-6


def test_los_oracle(rng):
    for _ in range(100):
        ue, bs, _, _ = oracles.random_wall_scene(rng)
        got = forward_model(UEState(ue), None, bs).as_vector()
        ref = oracles.los_path(ue, bs)
        assert abs(got[0] - ref[0]) < 1e-9
        for k in range(1, 5):
            assert abs(oracles.angle_diff(got[k], ref[k])) < 1e-9


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), angle, st.floats(-50, 50))
def test_channel_params_ranges(seed, alpha, bias):
    ue, bs, f, u = oracles.random_wall_scene(np.random.default_rng(seed))
    va = va_from_surface(ReflectingSurface(f, u), bs)
    for path in (None, va):
        p = forward_model(UEState(ue, alpha, bias), path, bs)
        assert -np.pi < p.doa_az <= np.pi and -np.pi < p.dod_az <= np.pi
        assert abs(p.doa_el) <= np.pi / 2 and abs(p.dod_el) <= np.pi / 2
        assert p.toa >= bias


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), angle, st.floats(-50, 50))
def test_parameter_independence(seed, alpha, bias):
    ue, bs, f, u = oracles.random_wall_scene(np.random.default_rng(seed))
    va = va_from_surface(ReflectingSurface(f, u), bs)
    a = nlos_params(ue, 0.0, 0.0, va, bs)
    b = nlos_params(ue, alpha, bias, va, bs)
    assert b[1] == a[1]  # doa_el ignores alpha
    assert b[3] == a[3] and b[4] == a[4]  # dod ignores alpha and B
    assert b[0] - a[0] == pytest.approx(bias, abs=1e-9)


# ---- wrap_angle


def test_wrap_angle_examples():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
    assert wrap_angle(-np.pi) == np.pi
    assert wrap_angle(np.pi) == np.pi


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_angle_range_and_congruence(a):
    w = wrap_angle(a)
    assert -np.pi < w <= np.pi
    k = (a - w) / (2 * np.pi)
    assert abs(k - round(k)) < 1e-9


def test_ue_state_wraps_orientation():
    assert UEState(UE, 3 * np.pi / 2).orientation == pytest.approx(-np.pi / 2)
    with pytest.raises(ValueError):
        UEState([np.nan, 0, 0])


# ---- wrong side


def test_wrong_side_sign():
    va = np.array([-20.0, 0, 5])
    assert not wrong_side(UE, va, BS)
    mirrored = np.array([-40.0, 10.0, 0.0])  # UE reflected across x = -10
    assert wrong_side(mirrored, va, BS)
    assert wrong_side(UE, BS, BS)  # degenerate VA counts as invalid
