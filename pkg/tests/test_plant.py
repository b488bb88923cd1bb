from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from hound.plant import (
    PlantParams,
    RolledOverError,
    big_plant,
    plant_at_rest,
    reset_to_path,
    small_plant,
    step_plant,
    wheel_speed_response,
)
from hound.terrain import generate_terrain
from hound.vehicle import ControlCommand, Path

FLAT = generate_terrain("flat", extent=(80, 80), center=(10, 20))
G = 9.81


def drive(p, steer, v, seconds, emap=FLAT, rng=None, stop_on_roll=True):
    s = plant_at_rest(emap, p, vx=v)
    trace = []
    for _ in range(round(seconds / 0.001)):
        s = step_plant(s, ControlCommand(steer, v), emap, p, 0.001, rng=rng)
        trace.append(s)
        if s.rolled_over and stop_on_roll:
            break
    return s, trace


def critical_demand_speed(p, factor):
    """Speed at which the kinematic lateral demand at full lock is factor * RI_L * g."""
    return math.sqrt(factor * p.vehicle.rollover_limit * G * p.wheelbase_m / math.tan(p.steering_max_rad))


def test_rest_equilibrium():
    p = small_plant()
    s, _ = drive(p, 0.0, 0.0, 1.0)
    half = 0.5 * p.mass_kg * G
    assert s.n_left == pytest.approx(half, rel=1e-6)
    assert s.n_right == pytest.approx(half, rel=1e-6)
    assert s.roll == 0.0
    assert s.imu_acc[2] == pytest.approx(G, rel=1e-6)


def test_hard_turn_below_limit_transfers_load():
    p = small_plant()
    s, trace = drive(p, 0.2, 2.0, 5.0)
    assert not any(t.rolled_over for t in trace)
    ay = s.acc_level[1]
    assert 0 < ay < p.vehicle.rollover_limit * G
    # left turn: the left side is the inner one
    assert 0 < s.n_left < 0.5 * p.mass_kg * G < s.n_right
    he = p.com_height_m + p.jacking_gain_m_rad * abs(s.body_roll_rad)
    contact_track = p.track_width_m + 2 * p.tire_half_width_m
    expected_inner = 0.5 * p.mass_kg * G - p.mass_kg * ay * he / contact_track
    assert s.n_left == pytest.approx(expected_inner, rel=0.03)


@pytest.mark.xfail(strict=True, reason="front tyres saturate below the tip-over demand at this speed; see notes")
def test_step_at_thirteen_tenths_of_limit_rolls_over():
    p = small_plant().stressed()
    v = critical_demand_speed(p, 1.3)
    s, _ = drive(p, p.steering_max_rad, v, 2.0)
    assert s.rolled_over


def test_monotone_rollover_threshold():
    p = small_plant().stressed()
    speeds = np.arange(2.0, 6.01, 0.25)
    rolled = [drive(p, p.steering_max_rad, float(v), 3.0)[0].rolled_over for v in speeds]
    assert not rolled[0] and rolled[-1]
    first = rolled.index(True)
    # allow one sweep step of hysteresis right at the threshold
    assert all(rolled[first + 1:])
    assert not any(rolled[:first])


def test_jacking_increases_roll():
    base = small_plant()
    jacked = replace(base, jacking_gain_m_rad=0.1)
    flat = replace(base, jacking_gain_m_rad=0.0)
    a, _ = drive(jacked, 0.25, 2.2, 3.0)
    b, _ = drive(flat, 0.25, 2.2, 3.0)
    assert a.acc_level[1] == pytest.approx(b.acc_level[1], rel=0.02)
    assert abs(a.body_roll_rad) > abs(b.body_roll_rad)


def test_load_conservation_in_a_slalom():
    p = small_plant().stressed()
    s = plant_at_rest(FLAT, p, vx=3.0)
    tol = 1e-6 * p.mass_kg * G
    for k in range(3000):
        steer = 0.3 * math.sin(2 * math.pi * 0.7 * k * 0.001)
        s = step_plant(s, ControlCommand(steer, 3.0), FLAT, p, 0.001)
        assert s.n_left >= 0 and s.n_right >= 0
        if not s.airborne:
            assert abs(s.n_left + s.n_right - p.mass_kg * s.acc_level[2]) < tol


def test_deterministic_with_seed():
    p = small_plant()
    _, a = drive(p, 0.1, 3.0, 0.5, rng=np.random.default_rng(11))
    _, b = drive(p, 0.1, 3.0, 0.5, rng=np.random.default_rng(11))
    assert a == b
    _, c = drive(p, 0.1, 3.0, 0.5, rng=np.random.default_rng(12))
    assert a[-1].imu_acc != c[-1].imu_acc
    assert a[-1].x == c[-1].x  # noise only touches the sensors


def test_imu_noise_level():
    p = small_plant()
    _, tr = drive(p, 0.0, 0.0, 2.0, rng=np.random.default_rng(0))
    az = np.array([t.imu_acc[2] for t in tr[500:]])
    gz = np.array([t.imu_gyro[2] for t in tr[500:]])
    assert az.std() == pytest.approx(p.imu_acc_noise, rel=0.1)
    assert gz.std() == pytest.approx(p.imu_gyro_noise, rel=0.1)


def test_rolled_over_plant_refuses_to_step():
    p = small_plant().stressed()
    s, _ = drive(p, p.steering_max_rad, 6.0, 3.0)
    assert s.rolled_over
    with pytest.raises(RolledOverError):
        step_plant(s, ControlCommand(0.0, 0.0), FLAT, p, 0.001)


def test_plant_dt_bound():
    p = small_plant()
    s = plant_at_rest(FLAT, p)
    with pytest.raises(ValueError):
        step_plant(s, ControlCommand(0.0, 0.0), FLAT, p, 0.005)


def test_actuator_limits():
    p = small_plant()
    s = plant_at_rest(FLAT, p)
    s = step_plant(s, ControlCommand(0.3, 5.0), FLAT, p, 0.001)
    assert s.actual_steering_rad == pytest.approx(p.steering_rate_rad_s * 0.001)
    assert s.actual_wheelspeed_m_s == pytest.approx(5.0 * 0.001 / p.wheelspeed_time_constant_s)


def test_variants():
    p = small_plant()
    assert p.stressed().friction_coeff == pytest.approx(1.5 * p.friction_coeff)
    assert p.stressed().roll_stiffness_Nm_rad < p.roll_stiffness_Nm_rad
    assert p.offroad().friction_coeff == pytest.approx(0.8 * p.friction_coeff)
    assert big_plant().mass_kg == pytest.approx(8 * p.mass_kg)
    with pytest.raises(ValueError):
        PlantParams(roll_damping_Nms_rad=0.0)
    with pytest.raises(ValueError):
        PlantParams(jacking_gain_m_rad=-0.1)


def test_params_round_trip(tmp_path):
    p = small_plant().stressed()
    p.save(tmp_path / "plant.cfg")
    assert PlantParams.load(tmp_path / "plant.cfg") == p


def test_wheel_speed_response_scales_with_battery():
    p = small_plant()
    sag = replace(p, instantaneous_battery_V=7.4)
    full = wheel_speed_response(0.2, 0.0, p, 0.01)
    low = wheel_speed_response(0.2, 0.0, sag, 0.01)
    assert low / full == pytest.approx(7.4 / 8.4)


STRAIGHT = Path([[0.0, 0.0], [20.0, 0.0]])


def test_reset_on_path_keeps_position():
    p = small_plant()
    s, _ = drive(p, 0.0, 2.0, 0.5)
    r = reset_to_path(s, STRAIGHT)
    assert (r.x, r.y) == pytest.approx((s.x, 0.0), abs=1e-12)
    assert r.vx == r.vy == r.wz == 0.0
    assert not r.rolled_over


def test_reset_projects_lateral_offset():
    p = small_plant()
    s = replace(plant_at_rest(FLAT, p, x=7.0, y=3.0, yaw=1.0, vx=2.0), body_roll_rad=0.4, rolled_over=True)
    r = reset_to_path(s, STRAIGHT, FLAT, p)
    assert (r.x, r.y, r.yaw) == pytest.approx((7.0, 0.0, 0.0), abs=1e-12)
    assert r.body_roll_rad == 0.0 and not r.rolled_over


def test_reset_clamps_to_end():
    s = plant_at_rest(FLAT, small_plant(), x=25.0, y=1.0)
    r = reset_to_path(s, STRAIGHT)
    assert (r.x, r.y) == pytest.approx((20.0, 0.0))
