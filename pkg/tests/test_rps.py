from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hound.plant import plant_at_rest, small_plant, step_plant
from hound.rps import (
    LqrConvergenceError,
    Rps,
    RpsConfig,
    RpsInput,
    WeightlessError,
    coupling,
    critical_lateral_acc,
    feedback_correction,
    lqr_gain,
    rollover_index,
    rps_filter,
    static_steering_limit,
)
from hound.terrain import generate_terrain
from hound.vehicle import ControlCommand, small_car

CFG = RpsConfig.for_vehicle(small_car())
NO_SLACK = replace(CFG, slack_rad=0.0)


def value_iteration_gain(K, q=(10.0, 10.0), r=1.0, horizon=10_000):
    A = np.array([[1.0, 0.0], [K, 1.0]])
    B = np.array([[1.0], [K]])
    Q = np.diag(q)
    P = np.zeros((2, 2))
    for _ in range(horizon):
        S = r + (B.T @ P @ B).item()
        P = Q + A.T @ P @ A - (A.T @ P @ B) @ (B.T @ P @ A) / S
    return ((B.T @ P @ A) / (r + (B.T @ P @ B).item())).ravel()


def test_rollover_index_examples():
    assert rollover_index(0.0, 9.81) == 0.0
    assert rollover_index(4.905, 9.81) == 0.5
    assert rollover_index(8.83, 9.81) == pytest.approx(0.900, abs=1e-3)
    assert rollover_index(-2.0, 4.0) == -0.5
    with pytest.raises(WeightlessError):
        rollover_index(1.0, 0.5)


def test_critical_lateral_acc():
    cfg = replace(CFG, ri_limit=0.9)
    assert critical_lateral_acc(9.81, cfg) == pytest.approx(8.829)
    assert critical_lateral_acc(0.0, cfg) == 0.0
    assert critical_lateral_acc(9.81, replace(cfg, safety_margin=0.8)) == pytest.approx(7.0632)


def test_static_limit_fifteen_degrees():
    inp = RpsInput(acc_y=0.0, acc_z=9.81, wheelspeed=3.0)
    lo, hi = static_steering_limit(inp, NO_SLACK, critical_acc=9.81)
    assert math.degrees(hi) == pytest.approx(15.0, abs=0.1)
    assert lo == -hi


def test_static_limit_low_speed_is_full_range():
    lo, hi = static_steering_limit(RpsInput(0.0, 9.81, wheelspeed=0.1), NO_SLACK)
    assert (lo, hi) == (-CFG.steering_max_rad, CFG.steering_max_rad)


def test_static_limit_on_a_bank():
    inp = RpsInput(0.0, 9.81, wheelspeed=4.0, roll=0.1)
    lo, hi = static_steering_limit(inp, NO_SLACK, critical_acc=8.83)
    L = CFG.wheelbase_m
    assert hi == pytest.approx(math.atan((8.83 - 9.81 * math.sin(0.1)) * L / 16))
    assert lo == pytest.approx(-math.atan((8.83 + 9.81 * math.sin(0.1)) * L / 16))
    assert hi < -lo


def test_slack_widens_interval_until_clamp():
    inp = RpsInput(0.0, 9.81, wheelspeed=5.0)
    widths = []
    for slack in np.linspace(0.0, 0.37, 38):
        lo, hi = static_steering_limit(inp, replace(CFG, slack_rad=float(slack)))
        widths.append((hi, lo))
    his = [h for h, _ in widths]
    free = [h for h in his if h < CFG.steering_max_rad]
    assert len(free) > 3
    assert all(b > a for a, b in zip(free, free[1:]))
    assert his[-1] == CFG.steering_max_rad


def test_lqr_decoupled_closed_form():
    k = lqr_gain(0.0, CFG)
    P = (10 + math.sqrt(140)) / 2
    assert k[0] == pytest.approx(P / (P + 1), abs=1e-8)
    assert k[0] == pytest.approx(0.9161, abs=1e-4)
    assert k[1] == pytest.approx(0.0, abs=1e-8)


def test_lqr_zero_state_cost():
    np.testing.assert_array_equal(lqr_gain(3.0, replace(CFG, lqr_state_penalty=(0.0, 0.0))), [0.0, 0.0])


def test_lqr_matches_value_iteration_at_defaults():
    K = coupling(9.81, CFG)
    assert K == pytest.approx(0.02 * 9.81 * 0.139 / 0.0075)
    np.testing.assert_allclose(lqr_gain(K, CFG), value_iteration_gain(K), atol=1e-8, rtol=0)


def test_lqr_reports_non_convergence():
    with pytest.raises(LqrConvergenceError) as info:
        lqr_gain(coupling(9.81, CFG), CFG, max_iter=3)
    assert info.value.residual > 0
    with pytest.raises(ValueError):
        lqr_gain(float("nan"), CFG)


def test_feedback_fixed_point():
    inp = RpsInput(acc_y=CFG.ri_limit * 9.81, acc_z=9.81, roll_rate=0.0, wheelspeed=3.0)
    assert feedback_correction(inp, CFG) == pytest.approx(0.0, abs=1e-15)


def test_feedback_plug_through():
    cfg = replace(CFG, ri_limit=0.9)
    inp = RpsInput(acc_y=1.0 * 9.81, acc_z=9.81, roll_rate=0.0, wheelspeed=2.0)
    k1 = lqr_gain(coupling(9.81, cfg), cfg)[0]
    expected = -k1 * 0.1 * 9.81 * 0.246 / 4
    assert feedback_correction(inp, cfg) == pytest.approx(expected, rel=1e-9)
    # mirrored for right turns
    right = replace(inp, acc_y=-inp.acc_y)
    assert feedback_correction(right, cfg) == pytest.approx(-expected, rel=1e-9)


def test_feedback_speed_scaling():
    inp = RpsInput(acc_y=9.5, acc_z=9.81, roll_rate=0.3, wheelspeed=2.0)
    a = feedback_correction(inp, CFG)
    b = feedback_correction(replace(inp, wheelspeed=4.0), CFG)
    assert b == pytest.approx(a / 4, rel=1e-12)


def test_feedback_propagates_weightless():
    with pytest.raises(WeightlessError):
        feedback_correction(RpsInput(1.0, 0.1, wheelspeed=2.0), CFG)


def test_pass_through_when_benign():
    inp = RpsInput(acc_y=0.3, acc_z=9.8, roll_rate=0.01, wheelspeed=1.5, steering_cmd=0.05)
    assert rps_filter(inp, CFG) == 0.05


def test_full_lock_is_clamped_to_static_limit():
    inp = RpsInput(acc_y=0.0, acc_z=9.81, wheelspeed=6.0, steering_cmd=CFG.steering_max_rad)
    lo, hi = static_steering_limit(inp, CFG)
    assert hi < CFG.steering_max_rad
    expected = math.atan(CFG.ri_limit * 9.81 * CFG.wheelbase_m / 36) + CFG.slack_rad
    assert rps_filter(inp, CFG) == pytest.approx(expected)


def test_hold_last_when_weightless():
    rps = Rps(CFG)
    first = rps(RpsInput(acc_y=0.0, acc_z=9.81, wheelspeed=6.0, steering_cmd=0.38))
    held = rps(RpsInput(acc_y=0.0, acc_z=0.2, wheelspeed=6.0, steering_cmd=-0.1))
    assert held == first
    assert rps.record is not None and not rps.record.valid
    fresh = Rps(CFG)
    assert fresh(RpsInput(0.0, 0.0, wheelspeed=2.0, steering_cmd=0.2)) == 0.2


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-1.0, 1.0), st.floats(0.6, 15.0), st.floats(-2.0, 2.0),
    st.floats(0.0, 10.0), st.floats(-0.38, 0.38), st.floats(-0.4, 0.4),
)
def test_pass_through_property(ri_frac, az, wx, v, cmd, roll):
    inp = RpsInput(acc_y=ri_frac * 0.999 * CFG.ri_limit * az, acc_z=az, roll_rate=wx, wheelspeed=v,
                   roll=roll, steering_cmd=cmd)
    lo, hi = static_steering_limit(inp, CFG)
    if lo <= cmd <= hi:
        assert Rps(CFG)(inp) == cmd


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-15, 15), st.floats(-1, 15), st.floats(-3, 3), st.floats(0, 10),
                          st.floats(-0.5, 0.5)), min_size=1, max_size=30))
def test_direction_preserved(seq):
    rps = Rps(CFG)
    for ay, az, wx, v, cmd in seq:
        out = rps(RpsInput(acc_y=ay, acc_z=az, roll_rate=wx, wheelspeed=v, steering_cmd=cmd))
        assert abs(out) <= abs(cmd) + 1e-15 or not rps.record.valid
        if rps.record.valid:
            assert out * cmd >= 0


def _recorded_trace():
    p = small_plant().stressed()
    emap = generate_terrain("flat", extent=(60, 60), center=(10, 15))
    s = plant_at_rest(emap, p, vx=5.5)
    out = []
    for k in range(1500):
        s = step_plant(s, ControlCommand(p.steering_max_rad, 5.5), emap, p, 0.001)
        if k % 20 == 19:
            out.append(RpsInput(acc_y=s.imu_acc[1], acc_z=s.imu_acc[2], roll_rate=-s.imu_gyro[0],
                                wheelspeed=s.actual_wheelspeed_m_s, roll=-s.roll,
                                steering_cmd=p.steering_max_rad))
        if s.rolled_over:
            break
    return out


def test_gain_cache_matches_recompute():
    trace = _recorded_trace()
    assert max(abs(i.acc_y / i.acc_z) for i in trace if i.acc_z > 0.5) > CFG.ri_limit
    rps = Rps(CFG)
    pairs = []
    for inp in trace:
        if not inp.acc_z > 0.5:
            continue
        ri = inp.acc_y / inp.acc_z
        cached = feedback_correction(inp, CFG, gain=rps.gain_for(inp.acc_z), ri=ri)
        pairs.append((cached, feedback_correction(inp, CFG, ri=ri)))
    assert 0 < rps.gain_updates < len(trace)
    # 2% of the largest correction on the trace; pointwise wherever the
    # correction is not a near-zero crossing of the two gain terms
    scale = max(abs(e) for _, e in pairs)
    for cached, exact in pairs:
        assert abs(cached - exact) <= 0.02 * scale
        if abs(exact) >= 0.1 * scale:
            assert abs(cached - exact) <= 0.02 * abs(exact)


def test_feedback_engages_on_the_trace():
    rps = Rps(CFG)
    outputs = [rps(inp) for inp in _recorded_trace()]
    lo, hi = static_steering_limit(RpsInput(0.0, 9.81, wheelspeed=5.5), CFG)
    assert min(outputs) < hi - 1e-3


def test_config_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        RpsConfig(slack_rad=0.5)
    with pytest.raises(ValueError):
        RpsConfig(lqr_control_penalty=0.0)
    CFG.save(tmp_path / "rps.cfg")
    assert RpsConfig.load(tmp_path / "rps.cfg") == CFG
