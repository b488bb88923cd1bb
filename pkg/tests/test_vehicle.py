from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hound.vehicle import (
    ControlCommand,
    GimbalLockError,
    Path,
    RigidState,
    VehicleParams,
    big_car,
    body_rates_to_euler_rates,
    euler_rates_to_body_rates,
    small_car,
    tilt_from_rpy,
    wrap_angle,
)


def test_rollover_limit_is_track_over_twice_height():
    p = small_car()
    assert p.rollover_limit == p.track_width_m / (2 * p.com_height_m)
    assert 0.88 <= p.rollover_limit <= 0.92


def test_big_car_scaling():
    s, b = small_car(), big_car()
    assert b.mass_kg == pytest.approx(8 * s.mass_kg)
    assert b.wheelbase_m == pytest.approx(2 * s.wheelbase_m)
    assert b.roll_inertia_kgm2 == pytest.approx(32 * s.roll_inertia_kgm2)
    assert b.rollover_limit == pytest.approx(s.rollover_limit)


@pytest.mark.parametrize("field,value", [
    ("mass_kg", 0.0), ("track_width_m", -1.0), ("steering_max_rad", math.pi / 2), ("com_to_front_m", 0.2),
])
def test_invalid_params_rejected(field, value):
    with pytest.raises(ValueError):
        VehicleParams(**{field: value})


def test_params_file_round_trip(tmp_path):
    p = big_car()
    p.save(tmp_path / "car.cfg")
    assert VehicleParams.load(tmp_path / "car.cfg") == p
    text = (tmp_path / "car.cfg").read_text()
    assert "mass_kg = 32.0" in text


def test_euler_rates_identity_at_zero_attitude():
    w = euler_rates_to_body_rates((0, 0, 0), (0.1, 0.2, 0.3))
    np.testing.assert_allclose(w, [0.1, 0.2, 0.3], atol=1e-15)


def test_yaw_only_rates_are_yaw_invariant():
    for yaw in np.linspace(-3, 3, 7):
        np.testing.assert_allclose(euler_rates_to_body_rates((0, 0, yaw), (0, 0, 0.7)), [0, 0, 0.7], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-3.1, 3.1), st.floats(-1.0, 1.0), st.floats(-3.1, 3.1),
    st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5),
)
def test_euler_rate_round_trip(r, p, y, a, b, c):
    rpy = (r, p, y)
    w = euler_rates_to_body_rates(rpy, (a, b, c))
    back = body_rates_to_euler_rates(rpy, w)
    np.testing.assert_allclose(back, [a, b, c], atol=1e-9)


def test_gimbal_guard():
    with pytest.raises(GimbalLockError):
        euler_rates_to_body_rates((0, math.pi / 2 - 1e-4, 0), (0, 0, 1))


def test_tilt_examples():
    assert tilt_from_rpy((0, 0, 2.0)) == 0.0
    assert tilt_from_rpy((math.pi / 2, 0, 0)) == pytest.approx(math.pi / 2)
    assert tilt_from_rpy((0.3, 0.4, 1.0)) == pytest.approx(math.acos(math.cos(0.3) * math.cos(0.4)))


def test_tilt_matches_rotated_body_axis():
    # body z in world = R_z(yaw) R_y(pitch) R_x(roll) e_z
    r, p, y = 0.3, 0.4, 1.0
    Rx = np.array([[1, 0, 0], [0, math.cos(r), -math.sin(r)], [0, math.sin(r), math.cos(r)]])
    Ry = np.array([[math.cos(p), 0, math.sin(p)], [0, 1, 0], [-math.sin(p), 0, math.cos(p)]])
    Rz = np.array([[math.cos(y), -math.sin(y), 0], [math.sin(y), math.cos(y), 0], [0, 0, 1]])
    zb = Rz @ Ry @ Rx @ np.array([0, 0, 1.0])
    assert tilt_from_rpy((r, p, y)) == pytest.approx(math.acos(zb[2]), abs=1e-12)


def test_tilt_independent_of_yaw():
    for r, p in [(0.2, -0.5), (1.0, 0.3), (-0.7, -0.9)]:
        betas = [tilt_from_rpy((r, p, y)) for y in np.linspace(-math.pi, math.pi, 50)]
        assert max(betas) - min(betas) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(-100, 100))
def test_wrap_idempotent(x):
    w = wrap_angle(x)
    assert -math.pi < w <= math.pi
    assert wrap_angle(w) == w


def test_rigid_state_wraps_and_tilt_consistent():
    s = RigidState(rpy_rad=(0.2, -0.3, 7.0))
    assert -math.pi < s.rpy_rad[2] <= math.pi
    assert math.cos(s.tilt_rad) == pytest.approx(math.cos(0.2) * math.cos(-0.3), abs=1e-9)


def test_control_command_clipping():
    p = small_car()
    c = ControlCommand(1.0, 40.0).clipped(p, speed_limit=4.0)
    assert c == ControlCommand(p.steering_max_rad, 4.0)
    assert c.is_valid(p)
    assert not ControlCommand(0.0, -1.0).is_valid(p)


def test_path_validation_and_projection():
    with pytest.raises(ValueError):
        Path([[0, 0]])
    with pytest.raises(ValueError):
        Path([[0, 0], [0, 0], [1, 0]])
    path = Path([[0, 0], [10, 0], [10, 10]])
    assert path.length == 20.0
    foot, d, s, h = path.project([[5, 3], [12, 5], [-4, 0], [10, 30]])
    np.testing.assert_allclose(foot, [[5, 0], [10, 5], [0, 0], [10, 10]])
    np.testing.assert_allclose(d, [3, 2, 4, 20])
    np.testing.assert_allclose(s, [5, 15, 0, 20])
    np.testing.assert_allclose(h, [0, math.pi / 2, 0, math.pi / 2])


def test_path_file_round_trip(tmp_path):
    path = Path([[0, 0], [1.5, 0.25], [3, 1]])
    path.save(tmp_path / "p.txt")
    np.testing.assert_array_equal(Path.load(tmp_path / "p.txt").waypoints, path.waypoints)
