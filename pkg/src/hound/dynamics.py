"""Controller-side predictive models on non-planar terrain.

``slip3d`` is a single-track model with simplified Pacejka tyres whose
height, roll and pitch come from projecting the tyres onto the elevation
map (tyres never leave the ground, ``V_z = 0``). ``noslip3d`` is the
kinematic bicycle baseline with the same terrain projection.

Both step functions are vectorised: every field of :class:`ModelState`
may be a scalar or an array of samples.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from hound.terrain import ElevationMap, OutOfMapError, contact_pose_arrays
from hound.vehicle import ControlCommand, RigidState, VehicleParams, _guard, tilt

VX_FLOOR = 0.1  # m/s, slip-angle denominator floor
BLEND_SPEED = 0.3  # m/s, below this the model fades to kinematic behaviour
MAX_DT = 0.05


@dataclass(frozen=True)
class TireParams:
    friction_coeff: float = 1.0
    pacejka_B: float = 4.0
    pacejka_C: float = 1.5
    pacejka_D: float = 1.0

    def __post_init__(self):
        if not self.friction_coeff > 0:
            raise ValueError("friction_coeff must be > 0")
        if not self.pacejka_B > 0:
            raise ValueError("pacejka_B must be > 0")
        if not 1.0 <= self.pacejka_C <= 2.5:
            raise ValueError("pacejka_C must lie in [1, 2.5]")
        if not 0.0 < self.pacejka_D <= 1.2:
            raise ValueError("pacejka_D must lie in (0, 1.2]")

    def scaled(self, friction_factor: float) -> TireParams:
        return replace(self, friction_coeff=self.friction_coeff * friction_factor)


def tire_forces(slip_angle, slip_ratio, normal_force, tires: TireParams):
    """Simplified Pacejka forces with a friction-circle cap.

    Args:
        slip_angle: wheel slip angle (rad); positive means the contact
            patch moves to the left of the wheel heading.
        slip_ratio: ``(V_wheel - V_x) / V_x``; positive drives forward.
        normal_force: tyre load in N (negative loads are treated as 0).
        tires: tyre parameters.

    Returns:
        ``(F_x, F_y)`` in the wheel frame.
    """
    fz = np.maximum(normal_force, 0.0)
    peak = tires.friction_coeff * tires.pacejka_D * fz
    B, C = tires.pacejka_B, tires.pacejka_C
    fy = -peak * np.sin(C * np.arctan(B * np.asarray(slip_angle, dtype=float)))
    fx = peak * np.sin(C * np.arctan(B * np.asarray(slip_ratio, dtype=float)))
    mag = np.hypot(fx, fy)
    scale = np.where(mag > peak, peak / np.where(mag > 0, mag, 1.0), 1.0)
    return fx * scale, fy * scale


@dataclass(frozen=True)
class ModelState:
    """State advanced by the rollout models.

    Planar states (x, y, yaw, vx, vy, wz) are integrated; z, roll, pitch
    and the roll/pitch body rates are re-derived from the terrain after
    every step. ``ax, ay, az`` are the model's body specific forces and
    ``fz`` its total normal load. ``on_map`` turns false once any wheel
    point has left the map (non-strict stepping only).
    """

    x: np.ndarray | float = 0.0
    y: np.ndarray | float = 0.0
    yaw: np.ndarray | float = 0.0
    vx: np.ndarray | float = 0.0
    vy: np.ndarray | float = 0.0
    wz: np.ndarray | float = 0.0
    z: np.ndarray | float = 0.0
    roll: np.ndarray | float = 0.0
    pitch: np.ndarray | float = 0.0
    wx: np.ndarray | float = 0.0
    wy: np.ndarray | float = 0.0
    ax: np.ndarray | float = 0.0
    ay: np.ndarray | float = 0.0
    az: np.ndarray | float = 9.81
    fz: np.ndarray | float = 0.0
    on_map: np.ndarray | bool = True

    @property
    def vz(self):
        return 0.0 * np.asarray(self.vx)

    @property
    def beta(self):
        return tilt(self.roll, self.pitch)

    def broadcast(self, n: int) -> ModelState:
        """Copy a scalar state into ``n`` identical samples."""
        kw = {k: np.full(n, getattr(self, k), dtype=bool if k == "on_map" else float)
              for k in self.__dataclass_fields__}
        return ModelState(**kw)

    def take(self, i) -> ModelState:
        return ModelState(**{k: np.asarray(getattr(self, k))[i] for k in self.__dataclass_fields__})

    def to_rigid(self) -> RigidState:
        return RigidState(
            position_world_m=(float(self.x), float(self.y), float(self.z)),
            rpy_rad=(float(self.roll), float(self.pitch), float(self.yaw)),
            vel_body_m_s=(float(self.vx), float(self.vy), 0.0),
            acc_body_m_s2=(float(self.ax), float(self.ay), float(self.az)),
            rates_body_rad_s=(float(self.wx), float(self.wy), float(self.wz)),
        )


def init_model_state(emap: ElevationMap, params: VehicleParams, x=0.0, y=0.0, yaw=0.0,
                     vx=0.0, vy=0.0, wz=0.0, strict: bool = True) -> ModelState:
    """Place the car on the terrain with zero roll/pitch rates."""
    z, roll, pitch, inside = contact_pose_arrays(emap, x, y, yaw, params, strict=strict)
    g = params.gravity_m_s2
    cb = np.cos(roll) * np.cos(pitch)
    return ModelState(
        x=x, y=y, yaw=yaw, vx=vx, vy=vy, wz=wz, z=z, roll=roll, pitch=pitch,
        wx=0.0 * z, wy=0.0 * z, ax=0.0 * z, ay=0.0 * z, az=g * cb, fz=params.mass_kg * g * cb,
        on_map=inside,
    )


def from_rigid(state: RigidState, emap: ElevationMap, params: VehicleParams) -> ModelState:
    x, y, _ = state.position_world_m
    vx, vy, _ = state.vel_body_m_s
    return init_model_state(emap, params, x, y, state.rpy_rad[2], max(vx, 0.0), vy, state.rates_body_rad_s[2])


def _controls(u):
    if isinstance(u, ControlCommand):
        return u.steering_rad, u.wheelspeed_m_s
    steer, ws = u
    return steer, ws


def _check_dt(dt: float) -> None:
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt must lie in (0, {MAX_DT}], got {dt}")


def _terrain_update(s: ModelState, emap, params, x, y, yaw, wz, dt, strict):
    z, roll, pitch, inside = contact_pose_arrays(emap, x, y, yaw, params, strict=strict)
    droll = (roll - s.roll) / dt
    dpitch = (pitch - s.pitch) / dt
    # euler_rates_to_body_rates, first two rows, inlined for the batched hot path
    _guard(pitch)
    sr, cr = np.sin(roll), np.cos(roll)
    wx = droll - np.sin(pitch) * wz
    wy = cr * dpitch + sr * np.cos(pitch) * wz
    return z, roll, pitch, wx, wy, inside


def step_slip3d(s: ModelState, u, emap: ElevationMap, params: VehicleParams, tires: TireParams,
                dt: float, strict: bool = True) -> ModelState:
    """Advance the slip3d model by one semi-implicit Euler step.

    Args:
        s: current state (scalar or batched).
        u: a :class:`ControlCommand` or a ``(steering, wheelspeed)`` pair
            of scalars/arrays.
        emap: elevation map the tyres are projected onto.
        params: vehicle parameters.
        tires: tyre parameters.
        dt: step in seconds, ``0 < dt <= 0.05``.
        strict: raise :class:`OutOfMapError` when the car leaves the map;
            otherwise clamp and clear ``on_map``.
    """
    _check_dt(dt)
    steer, ws = _controls(u)
    m, g = params.mass_kg, params.gravity_m_s2
    lf, lr, L = params.com_to_front_m, params.com_to_rear_m, params.wheelbase_m

    beta = tilt(s.roll, s.pitch)
    fz = np.maximum(m * (g * np.cos(beta) - s.vx * s.wy + s.vy * s.wx), 0.0)
    fz_front = fz * (lr / L)
    fz_rear = fz * (lf / L)

    vx_safe = np.maximum(s.vx, VX_FLOOR)
    alpha_f = np.arctan((s.vy + s.wz * lf) / vx_safe) - steer
    alpha_r = np.arctan((s.vy - s.wz * lr) / vx_safe)
    kappa = (ws - s.vx) / vx_safe

    fxf, fyf = tire_forces(alpha_f, kappa, fz_front, tires)
    fxr, fyr = tire_forces(alpha_r, kappa, fz_rear, tires)

    cd, sd = np.cos(steer), np.sin(steer)
    tire_x = fxr + fxf * cd - fyf * sd
    tire_y = fyr + fyf * cd + fxf * sd
    force_x = tire_x + m * g * np.sin(s.pitch)
    force_y = tire_y + m * g * np.sin(s.roll)
    wz_dot = ((fxf * sd + fyf * cd) * lf - fyr * lr) / params.yaw_inertia_kgm2

    # velocities first, then pose
    vx_new = np.maximum(s.vx + dt * (force_x / m + s.wz * s.vy), 0.0)
    vy_dyn = s.vy + dt * (force_y / m - s.wz * s.vx)
    wz_dyn = s.wz + dt * wz_dot

    w = np.minimum(np.maximum(s.vx / BLEND_SPEED, 0.0), 1.0)
    wz_kin = vx_new * np.tan(steer) / L
    vy_kin = wz_kin * lr
    vy_new = w * vy_dyn + (1.0 - w) * vy_kin
    wz_new = w * wz_dyn + (1.0 - w) * wz_kin

    yaw_new = s.yaw + dt * wz_new
    cy, sy = np.cos(yaw_new), np.sin(yaw_new)
    vfwd = vx_new * np.cos(s.pitch)
    vlat = vy_new * np.cos(s.roll)
    x_new = s.x + dt * (vfwd * cy - vlat * sy)
    y_new = s.y + dt * (vfwd * sy + vlat * cy)

    z, roll, pitch, wx, wy, inside = _terrain_update(s, emap, params, x_new, y_new, yaw_new, wz_new, dt, strict)
    return ModelState(
        x=x_new, y=y_new, yaw=yaw_new, vx=vx_new, vy=vy_new, wz=wz_new,
        z=z, roll=roll, pitch=pitch, wx=wx, wy=wy,
        ax=tire_x / m, ay=tire_y / m, az=fz / m, fz=fz,
        on_map=np.logical_and(s.on_map, inside),
    )


def step_noslip3d(s: ModelState, u, emap: ElevationMap, params: VehicleParams, dt: float,
                  strict: bool = True) -> ModelState:
    """Kinematic bicycle step: no lateral slip, wheel speed is body speed."""
    _check_dt(dt)
    steer, ws = _controls(u)
    L, g, m = params.wheelbase_m, params.gravity_m_s2, params.mass_kg
    ws = np.asarray(ws, dtype=float)
    wz = ws * np.tan(steer) / L
    yaw_new = s.yaw + dt * wz
    v = ws * np.cos(s.pitch)
    x_new = s.x + dt * v * np.cos(yaw_new)
    y_new = s.y + dt * v * np.sin(yaw_new)
    z, roll, pitch, wx, wy, inside = _terrain_update(s, emap, params, x_new, y_new, yaw_new, wz, dt, strict)
    az = np.maximum(g * np.cos(tilt(roll, pitch)) - ws * wy, 0.0)
    return ModelState(
        x=x_new, y=y_new, yaw=yaw_new, vx=ws + 0.0 * s.vx, vy=0.0 * (ws + s.vy), wz=wz,
        z=z, roll=roll, pitch=pitch, wx=wx, wy=wy,
        ax=(ws - s.vx) / dt, ay=ws * ws * np.tan(steer) / L, az=az, fz=m * az,
        on_map=np.logical_and(s.on_map, inside),
    )


def rollout(step, s0: ModelState, controls, dt: float, **kw) -> list[ModelState]:
    """Apply ``step`` along a ``(H, 2)`` control sequence; returns H states."""
    out = []
    s = s0
    for steer, ws in np.asarray(controls, dtype=float):
        s = step(s, (steer, ws), dt=dt, **kw)
        out.append(s)
    return out


__all__ = [
    "TireParams", "ModelState", "tire_forces", "step_slip3d", "step_noslip3d",
    "init_model_state", "from_rigid", "rollout", "OutOfMapError",
]
