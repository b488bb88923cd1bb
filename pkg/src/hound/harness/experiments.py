"""The three experiment protocols plus log replay.

Every iteration is an independent job: it builds its own plant, filter and
planner, seeds its RNG from ``(scenario seed, iteration)`` and returns one
:class:`RunRecord`. Arms of the same batch share that seed, so the only
thing that differs between them is the arm's declared override.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from hound import config
from hound.dynamics import TireParams, init_model_state, step_noslip3d, step_slip3d
from hound.harness.records import LogBuffer, RunRecord, plant_row, read_csv, summarize_rows, columns
from hound.harness.scenario import Scenario
from hound.llc import OperatorInput, arbitrate
from hound.mppi import CostWeights, Mppi, MppiConfig
from hound.plant import PlantParams, plant_at_rest, reset_to_path, step_plant
from hound.rps import Rps, RpsConfig
from hound.terrain import ElevationMap, generate_terrain
from hound.vehicle import ControlCommand, Path

log = logging.getLogger(__name__)

# what each arm changes relative to the scenario; nothing else may differ
ARM_OVERRIDES = {
    "no_prevention": {"rps_enabled": False},
    "static_limiter": {"rps_enabled": True, "slack_fraction": 0.0, "feedback_enabled": False},
    "full_rps": {"rps_enabled": True, "feedback_enabled": True},
    "rps_on": {"rps_enabled": True, "feedback_enabled": True},
    "rps_off": {"rps_enabled": False},
}


class ExperimentError(RuntimeError):
    """A run could not be carried out (as opposed to a bad config)."""


def resolved_config(sc: Scenario, arm: str) -> dict:
    """Flat mapping of every setting one arm runs with."""
    out = {f"scenario.{k}": v for k, v in config.to_mapping(sc).items() if k != "arms"}
    out["arm.rps_enabled"] = False
    out["arm.slack_fraction"] = sc.slack_fraction
    out["arm.feedback_enabled"] = True
    for k, v in ARM_OVERRIDES.get(arm, {}).items():
        out[f"arm.{k}"] = v
    p = sc.plant_params()
    out.update({f"plant.{k}": v for k, v in config.to_mapping(p).items()})
    if out["arm.rps_enabled"]:
        rc = _rps_config(p, out["arm.slack_fraction"], out["arm.feedback_enabled"])
        out.update({f"rps.{k}": v for k, v in config.to_mapping(rc).items()})
    return out


def _rps_config(p: PlantParams, slack_fraction: float, feedback: bool) -> RpsConfig:
    return RpsConfig.for_vehicle(p.vehicle, slack_fraction=slack_fraction, feedback_enabled=feedback)


def _make_rps(sc: Scenario, arm: str, p: PlantParams) -> Rps | None:
    o = {"rps_enabled": False, "slack_fraction": sc.slack_fraction, "feedback_enabled": True}
    o.update(ARM_OVERRIDES.get(arm, {}))
    if not o["rps_enabled"]:
        return None
    return Rps(_rps_config(p, o["slack_fraction"], o["feedback_enabled"]))


def iteration_rng(seed: int, iteration: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, iteration, stream])


def _derived_seed(seed: int, iteration: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, iteration, stream]).generate_state(1)[0])


def _steps(duration: float, dt: float) -> int:
    return int(round(duration / dt))


def _every(period: float, dt: float) -> int:
    n = int(round(period / dt))
    if n < 1 or abs(n * dt - period) > 1e-9 * max(1.0, period):
        raise config.ConfigError(f"period {period} s is not a multiple of the plant step {dt} s")
    return n


# ---------------------------------------------------------------------------
# isolated rollover
# ---------------------------------------------------------------------------
def _isolated_map(sc: Scenario, speed: float) -> ElevationMap:
    # a left turn from the origin heading +x; the circle widens with V^2
    extent = max(40.0, 1.3 * speed * speed)
    res = 0.25 if sc.terrain_spec().kind == "flat" else 0.1
    return generate_terrain(sc.terrain_spec(), extent=(extent, extent), resolution=res,
                            center=(0.25 * extent, 0.4 * extent))


def isolated_iteration(sc: Scenario, arm: str, iteration: int, speed: float,
                       emap: ElevationMap | None = None, phase: str = "main") -> RunRecord:
    """Drive straight at ``speed``, then hold full left steering until rollover or timeout.

    The car starts already moving at ``speed`` (0.5 s of straight running
    by default lets the actuators and suspension settle before the turn).
    """
    p = sc.plant_params()
    if emap is None:
        emap = _isolated_map(sc, speed)
    dt = sc.plant_dt_s
    every = _every(sc.llc_period_s, dt)
    rng = iteration_rng(sc.seed, iteration)
    rps = _make_rps(sc, arm, p)
    operator = OperatorInput(speed_limit_m_s=p.wheelspeed_max_m_s)
    s = plant_at_rest(emap, p, 0.0, 0.0, 0.0, vx=speed)
    buf = LogBuffer(_steps(sc.timeout_s, dt) + 1)
    cmd = ControlCommand(0.0, speed)
    steer_cmd = 0.0
    rec = None
    for k in range(_steps(sc.timeout_s, dt)):
        if k % every == 0:
            steer_cmd = p.steering_max_rad if s.t >= sc.steer_onset_s - 1e-12 else 0.0
            cmd = arbitrate(ControlCommand(steer_cmd, speed), operator, rps, s.imu_acc,
                            -s.imu_gyro[0], s.actual_wheelspeed_m_s, -s.roll)
            rec = rps.record if rps is not None else None
        s = step_plant(s, cmd, emap, p, dt, rng)
        buf.append(plant_row(s, steer_cmd, cmd.steering_rad, cmd.wheelspeed_m_s, rec))
        if s.rolled_over or abs(s.roll) >= math.pi / 2:
            break
    rows = buf.array()
    meta = {"speed_m_s": speed, "seed": sc.seed, "phase": phase, "penalty_s": sc.penalty_s}
    return RunRecord("isolated_rollover", arm, iteration, meta, rows, summarize_rows(rows, sc.penalty_s))


# ---------------------------------------------------------------------------
# in the loop
# ---------------------------------------------------------------------------
def _loop_map(sc: Scenario, path: Path) -> ElevationMap:
    lo = path.waypoints.min(axis=0) - 10.0
    hi = path.waypoints.max(axis=0) + 10.0
    res = 0.1 if sc.terrain_spec().kind == "flat" else 0.05
    return generate_terrain(sc.terrain_spec(), extent=tuple(hi - lo), resolution=res,
                            center=tuple(0.5 * (hi + lo)))


def in_loop_iteration(sc: Scenario, arm: str, iteration: int, path: Path | None = None,
                      emap: ElevationMap | None = None) -> RunRecord:
    """MPPI (with a detuned friction model) drives the plant down the reference path.

    A rollover resets the car onto the path at rest and counts towards
    the penalised completion time. The run stops at the goal or at the
    completion timeout.
    """
    p = sc.plant_params()
    path = path if path is not None else sc.reference_path()
    emap = emap if emap is not None else _loop_map(sc, path)
    dt = sc.plant_dt_s
    llc_every = _every(sc.llc_period_s, dt)
    plan_every = _every(sc.mppi_period_s, dt)
    rng = iteration_rng(sc.seed, iteration)
    noise = rng.uniform(-1.0, 1.0, 3)
    x0, y0 = path.waypoints[0]
    d = path.waypoints[1] - path.waypoints[0]
    yaw0 = math.atan2(d[1], d[0])
    s = plant_at_rest(emap, p, x0 + sc.start_noise_m * noise[0], y0 + sc.start_noise_m * noise[1],
                      yaw0 + sc.start_noise_rad * noise[2])
    tires = TireParams(friction_coeff=p.friction_coeff * sc.friction_mismatch)
    planner = Mppi(
        p.vehicle, tires,
        MppiConfig(num_samples=sc.mppi_samples, seed=_derived_seed(sc.seed, iteration, 1)),
        CostWeights.for_vehicle(p.vehicle, sc.speed_limit_m_s),
    )
    rps = _make_rps(sc, arm, p)
    operator = OperatorInput(speed_limit_m_s=sc.speed_limit_m_s)
    n_steps = _steps(sc.completion_timeout_s, dt)
    buf = LogBuffer(min(n_steps, 40_000) + 1)
    hlc = ControlCommand(0.0, 0.0)
    cmd = hlc
    rec = None
    diag = (math.nan, math.nan)
    goal = path.goal
    resets = 0
    done = False
    reset_flag = False
    for k in range(n_steps):
        if k % plan_every == 0:
            hlc = planner.plan(s.to_rigid(), emap, path, sc.speed_limit_m_s)
            diag = (planner.diagnostics.min_cost, planner.diagnostics.effective_samples)
        if k % llc_every == 0:
            cmd = arbitrate(hlc, operator, rps, s.imu_acc, -s.imu_gyro[0], s.actual_wheelspeed_m_s, -s.roll)
            rec = rps.record if rps is not None else None
        s = step_plant(s, cmd, emap, p, dt, rng)
        progress = planner.progress_s or 0.0
        done = math.hypot(s.x - goal[0], s.y - goal[1]) < sc.goal_tolerance_m or (
            progress >= path.length - sc.goal_tolerance_m and not s.rolled_over)
        buf.append(plant_row(s, hlc.steering_rad, cmd.steering_rad, cmd.wheelspeed_m_s, rec, diag,
                             progress, reset_flag, done))
        reset_flag = False
        if done:
            break
        if s.rolled_over:
            resets += 1
            s = reset_to_path(s, path, emap, p)
            planner.reset()
            if rps is not None:
                rps.reset()
            hlc = cmd = ControlCommand(0.0, 0.0)
            reset_flag = True
    rows = buf.array()
    meta = {"seed": sc.seed, "phase": "main", "path": sc.path, "penalty_s": sc.penalty_s,
            "resets": resets, "failed": not done}
    summary = summarize_rows(rows, sc.penalty_s)
    if not done:
        log.warning("%s iteration %d did not reach the goal within %.0f s", arm, iteration,
                    sc.completion_timeout_s)
    return RunRecord("in_loop", arm, iteration, meta, rows, summary)


# ---------------------------------------------------------------------------
# model comparison
# ---------------------------------------------------------------------------
@dataclass
class TruthLog:
    """Plant truth sampled at the model rate, plus the plant states for exact replay."""

    t: np.ndarray
    commands: np.ndarray  # (n, 2): command held over [t_k, t_k+1)
    x: np.ndarray  # (n+1, 6): x, y, yaw, vx, vy, wz
    acc: np.ndarray  # (n+1, 3) body specific force
    rates: np.ndarray  # (n+1, 3) body rates
    vel: np.ndarray  # (n+1, 3) body velocity
    states: list = field(default_factory=list)  # PlantState at every sample


def maneuver_commands(sc: Scenario, p: PlantParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """Seeded circles and figure-eights sized for a target lateral acceleration."""
    out = np.zeros((n, 2))
    k = 0
    L = p.wheelbase_m
    while k < n:
        seg = int(rng.integers(100, 200))  # 2 to 4 s at 50 Hz
        v = rng.uniform(0.4, 1.0) * sc.max_speed_m_s
        a = rng.uniform(0.45, 1.0) * sc.max_lateral_acc_m_s2
        delta = min(math.atan(a * L / (v * v)), p.steering_max_rad)
        kind = rng.integers(0, 2)
        tt = np.arange(seg) / 50.0
        if kind == 0:  # circle, random side
            steer = np.full(seg, delta * (1.0 if rng.random() < 0.5 else -1.0))
        else:  # figure eight: steering swings side to side
            period = rng.uniform(2.0, 4.0)
            steer = delta * np.sin(2 * math.pi * tt / period)
        m = min(seg, n - k)
        out[k:k + m, 0] = steer[:m]
        out[k:k + m, 1] = v
        k += m
    return out


def record_truth(sc: Scenario, iteration: int, emap: ElevationMap) -> TruthLog:
    p = sc.plant_params()
    dt = sc.plant_dt_s
    sub = _every(sc.model_dt_s, dt)
    rng = iteration_rng(sc.seed, iteration)
    n = _steps(sc.maneuver_duration_s, sc.model_dt_s)
    cmds = maneuver_commands(sc, p, rng, n)
    s = plant_at_rest(emap, p, 0.0, 0.0, 0.0, vx=float(cmds[0, 1]))
    states = [s]
    for k in range(n):
        u = ControlCommand(float(cmds[k, 0]), float(cmds[k, 1]))
        for _ in range(sub):
            s = step_plant(s, u, emap, p, dt, None)
            if s.rolled_over:
                raise ExperimentError("maneuver rolled the plant over; lower max_lateral_acc_m_s2")
        states.append(s)
    return TruthLog(
        t=np.array([q.t for q in states]), commands=cmds,
        x=np.array([[q.x, q.y, q.yaw, q.vx, q.vy, q.wz] for q in states]),
        acc=np.array([q.acc_body for q in states]),
        rates=np.array([q.gyro_body for q in states]),
        vel=np.array([[q.vx, q.vy, q.vz] for q in states]),
        states=states,
    )


def replay_model(model: str, truth: TruthLog, sc: Scenario, emap: ElevationMap):
    """Predicted (acc, rates, vel) at every truth sample after the first of each sequence."""
    p = sc.plant_params()
    v = p.vehicle
    tires = TireParams(friction_coeff=p.friction_coeff)
    H = sc.sequence_steps
    n = len(truth.commands)
    acc = np.full((n + 1, 3), np.nan)
    rates = np.full((n + 1, 3), np.nan)
    vel = np.full((n + 1, 3), np.nan)
    dt = sc.plant_dt_s
    sub = _every(sc.model_dt_s, dt)
    for k0 in range(0, n, H):
        if model == "plant":
            s = truth.states[k0]
            for k in range(k0, min(k0 + H, n)):
                u = ControlCommand(float(truth.commands[k, 0]), float(truth.commands[k, 1]))
                for _ in range(sub):
                    s = step_plant(s, u, emap, p, dt, None)
                acc[k + 1], rates[k + 1] = s.acc_body, s.gyro_body
                vel[k + 1] = (s.vx, s.vy, s.vz)
            continue
        x, y, yaw, vx, vy, wz = truth.x[k0]
        ms = init_model_state(emap, v, x, y, yaw, vx, vy, wz)
        for k in range(k0, min(k0 + H, n)):
            u = (float(truth.commands[k, 0]), float(truth.commands[k, 1]))
            if model == "slip3d":
                ms = step_slip3d(ms, u, emap, v, tires, sc.model_dt_s)
            elif model == "noslip3d":
                ms = step_noslip3d(ms, u, emap, v, sc.model_dt_s)
            else:
                raise config.ConfigError(f"unknown model {model!r}")
            acc[k + 1] = (float(ms.ax), float(ms.ay), float(ms.az))
            rates[k + 1] = (float(ms.wx), float(ms.wy), float(ms.wz))
            vel[k + 1] = (float(ms.vx), float(ms.vy), float(ms.vz))
    return acc, rates, vel


def l2_error(pred: np.ndarray, truth: np.ndarray) -> float:
    """Root-mean-square vector error over the samples that have a prediction."""
    m = np.all(np.isfinite(pred), axis=1)
    if not m.any():
        return 0.0
    d = pred[m] - truth[m]
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def normalize_errors(errors: dict[str, dict[str, float]]) -> dict[str, dict[str, float]]:
    """Divide each metric by its largest value among models (largest becomes exactly 1)."""
    metrics_ = sorted({k for e in errors.values() for k in e})
    out = {m: {} for m in errors}
    for key in metrics_:
        worst = max(errors[m][key] for m in errors)
        for m in errors:
            out[m][key] = errors[m][key] / worst if worst > 0 else 0.0
    return out


def model_compare_iteration(sc: Scenario, iteration: int, emap: ElevationMap | None = None) -> dict:
    """Raw (unnormalised) errors of every model on one seeded maneuver."""
    if emap is None:
        # the car can wander a full maneuver's distance from the origin in any direction
        reach = sc.max_speed_m_s * sc.maneuver_duration_s + 10.0
        emap = generate_terrain(sc.terrain_spec(), extent=(2 * reach, 2 * reach),
                                resolution=0.1 if sc.terrain_spec().kind == "flat" else 0.05)
    truth = record_truth(sc, iteration, emap)
    out = {}
    for model in sc.resolved_arms():
        acc, rates, vel = replay_model(model, truth, sc, emap)
        out[model] = {
            "acceleration": l2_error(acc, truth.acc),
            "rotation_rate": l2_error(rates, truth.rates),
            "velocity": l2_error(vel, truth.vel),
        }
    return out


def run_model_compare(sc: Scenario) -> dict:
    """Error table: raw and normalised L2 errors, per iteration and aggregated."""
    if sc.protocol != "model_compare":
        raise config.ConfigError("run_model_compare needs protocol = model_compare")
    per_iter = list(_map(sc, _model_job, [(sc, i) for i in range(sc.iterations)]))
    models = sc.resolved_arms()
    keys = ("acceleration", "rotation_rate", "velocity")
    agg = {}
    for m in models:
        agg[m] = {}
        for key in keys:
            # pooled RMS over iterations (equal sample counts per iteration)
            agg[m][key] = float(math.sqrt(np.mean([it[m][key] ** 2 for it in per_iter])))
    return {
        "protocol": "model_compare",
        "models": list(models),
        "raw": agg,
        "normalized": normalize_errors(agg),
        "per_iteration": [{"iteration": i, "raw": it, "normalized": normalize_errors(it)}
                          for i, it in enumerate(per_iter)],
    }


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------
def replay_iteration(sc: Scenario) -> RunRecord:
    """Re-drive the plant with the post-filter commands of a logged run."""
    rows = read_csv(sc.replay_log)
    if rows.shape[0] == 0:
        raise ExperimentError(f"{sc.replay_log}: no rows to replay")
    c = columns(rows)
    p = sc.plant_params()
    margin = 10.0
    lo = np.array([c["x"].min(), c["y"].min()]) - margin
    hi = np.array([c["x"].max(), c["y"].max()]) + margin
    emap = generate_terrain(sc.terrain_spec(), extent=tuple(hi - lo), resolution=0.1,
                            center=tuple(0.5 * (hi + lo)))
    dt = float(rows[0, 0]) if rows.shape[0] == 1 else float(np.median(np.diff(c["t"])))
    s = plant_at_rest(emap, p, float(c["x"][0]), float(c["y"][0]), float(c["yaw"][0]),
                      vx=float(c["wheelspeed_actual"][0]))
    rng = iteration_rng(sc.seed, 0)
    buf = LogBuffer(rows.shape[0] + 1)
    for r in range(rows.shape[0]):
        u = ControlCommand(float(c["steer_out"][r]), float(c["wheelspeed_cmd"][r]))
        s = step_plant(s, u, emap, p, dt, rng)
        buf.append(plant_row(s, float(c["steer_cmd"][r]), u.steering_rad, u.wheelspeed_m_s))
        if s.rolled_over:
            break
    out = buf.array()
    return RunRecord("replay", "replay", 0, {"seed": sc.seed, "phase": "main", "source": sc.replay_log},
                     out, summarize_rows(out, sc.penalty_s))


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------
def _isolated_job(args):
    sc, arm, i, speed, phase, keep = args
    rec = isolated_iteration(sc, arm, i, speed, phase=phase)
    return rec if keep else rec.drop_rows()


def _in_loop_job(args):
    sc, arm, i, keep = args
    rec = in_loop_iteration(sc, arm, i)
    return rec if keep else rec.drop_rows()


def _model_job(args):
    sc, i = args
    return model_compare_iteration(sc, i)


def _map(sc: Scenario, fn: Callable, jobs: list):
    """Run jobs, yielding results in job order whatever the pool does."""
    if sc.workers == 1 or len(jobs) <= 1:
        for j in jobs:
            yield fn(j)
        return
    with ProcessPoolExecutor(max_workers=sc.workers) as pool:
        yield from pool.map(fn, jobs)


def run_isolated_rollover(sc: Scenario, keep_rows: bool = False,
                          on_record: Callable[[RunRecord], None] | None = None) -> list[RunRecord]:
    if sc.protocol != "isolated_rollover":
        raise config.ConfigError("run_isolated_rollover needs protocol = isolated_rollover")
    keep = keep_rows or on_record is not None
    jobs = [(sc, arm, i, sc.sweep_speed(i), "main", keep)
            for arm in sc.resolved_arms() for i in range(sc.iterations)]
    if sc.broad_iterations > 0:
        speeds = sc.broad_speeds()
        for arm in sc.resolved_arms():
            for j in range(sc.broad_iterations * len(speeds)):
                jobs.append((sc, arm, j, speeds[j // sc.broad_iterations], "broad", keep))
    return _finish(_map(sc, _isolated_job, jobs), keep_rows, on_record)


def run_in_loop(sc: Scenario, keep_rows: bool = False,
                on_record: Callable[[RunRecord], None] | None = None) -> list[RunRecord]:
    if sc.protocol != "in_loop":
        raise config.ConfigError("run_in_loop needs protocol = in_loop")
    keep = keep_rows or on_record is not None
    jobs = [(sc, arm, i, keep) for arm in sc.resolved_arms() for i in range(sc.iterations)]
    return _finish(_map(sc, _in_loop_job, jobs), keep_rows, on_record)


def _finish(records, keep_rows, on_record):
    out = []
    for r in records:
        if on_record is not None:
            on_record(r)
        if not keep_rows:
            r.drop_rows()
        out.append(r)
    return out


def run_scenario(sc: Scenario, keep_rows: bool = False, on_record=None):
    """Dispatch on the protocol; model comparison returns its error table."""
    if sc.protocol == "isolated_rollover":
        return run_isolated_rollover(sc, keep_rows, on_record)
    if sc.protocol == "in_loop":
        return run_in_loop(sc, keep_rows, on_record)
    if sc.protocol == "model_compare":
        return run_model_compare(sc)
    rec = replay_iteration(sc)
    return _finish([rec], keep_rows, on_record)


__all__ = [
    "ARM_OVERRIDES", "ExperimentError", "resolved_config", "isolated_iteration", "in_loop_iteration",
    "model_compare_iteration", "run_isolated_rollover", "run_in_loop", "run_model_compare",
    "run_scenario", "replay_iteration", "normalize_errors", "l2_error", "maneuver_commands",
    "record_truth", "replay_model", "iteration_rng",
]
