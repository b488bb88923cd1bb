"""Ground-truth vehicle simulator that can actually roll over.

The plant keeps the planar single-track motion of the controller model but
adds what the controller does not know about:

* its own tyre curves (a magic-formula variant with separate front and
  rear stiffness, so the car understeers),
* a sprung body that rolls relative to the terrain on two compliant
  contact patches (left and right), with jacking that lifts the centre of
  mass as the body rolls,
* wheel lift, airborne phases and a latched rollover flag,
* a rate-limited steering servo, a lagged wheel-speed actuator and a
  noisy IMU.

The cross-section is simulated in the terrain frame. Each side's
contact force is ``max(0, k * penetration + c * penetration_rate)``.
The per-side spring constants come from the roll stiffness,
``k_side = 2 * k_roll / L_t**2``, so that linearised roll stiffness about
the centre of mass equals ``roll_stiffness_Nm_rad``. Tipping past the
outer contact point happens by itself once the resultant of the outer
patch passes the centre of mass.

Everything here is scalar ``math`` code; the plant runs at 1 kHz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path as FsPath

import numpy as np

from hound import config
from hound.terrain import ElevationMap, contact_pose_fast
from hound.vehicle import ControlCommand, Path, RigidState, VehicleParams, wrap_angle

ROLLOVER_ROLL_RAD = 1.0
ROLLOVER_SPEED_M_S = 0.5
MAX_PLANT_DT = 0.002
_VX_FLOOR = 0.1
_BLEND_SPEED = 0.3


class RolledOverError(RuntimeError):
    """Raised when stepping a plant whose rollover flag has latched."""


@dataclass(frozen=True)
class PlantParams:
    """Vehicle parameters plus the physics the controller never sees."""

    mass_kg: float = 4.0
    wheelbase_m: float = 0.246
    com_to_front_m: float = 0.123
    com_to_rear_m: float = 0.123
    track_width_m: float = 0.25
    com_height_m: float = 0.139
    yaw_inertia_kgm2: float = 0.10
    roll_inertia_kgm2: float = 0.03
    steering_max_rad: float = 0.38
    steering_rate_rad_s: float = 5.2
    wheelspeed_max_m_s: float = 23.0
    gravity_m_s2: float = 9.81
    roll_stiffness_Nm_rad: float = 150.0
    roll_damping_Nms_rad: float = 3.0
    roll_center_height_m: float = 0.0
    jacking_gain_m_rad: float = 0.03
    tire_half_width_m: float = 0.015
    friction_coeff: float = 0.65
    front_grip_ratio: float = 0.9
    tire_front_stiffness: float = 3.0
    tire_rear_stiffness: float = 4.5
    tire_long_stiffness: float = 6.0
    tire_shape: float = 1.6
    tire_curvature: float = 0.3
    wheelspeed_time_constant_s: float = 0.12
    speed_per_duty_m_s: float = 25.0
    nominal_battery_V: float = 8.4
    instantaneous_battery_V: float = 8.4
    imu_acc_noise: float = 0.05
    imu_gyro_noise: float = 0.005

    def __post_init__(self):
        self.vehicle  # runs the shared geometry checks
        for name in ("roll_stiffness_Nm_rad", "roll_damping_Nms_rad", "friction_coeff", "front_grip_ratio",
                     "tire_front_stiffness", "tire_rear_stiffness", "tire_long_stiffness",
                     "wheelspeed_time_constant_s", "speed_per_duty_m_s",
                     "nominal_battery_V", "instantaneous_battery_V"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.jacking_gain_m_rad < 0:
            raise ValueError("jacking_gain_m_rad must be >= 0")
        if self.imu_acc_noise < 0 or self.imu_gyro_noise < 0:
            raise ValueError("IMU noise levels must be >= 0")

    @property
    def vehicle(self) -> VehicleParams:
        names = {f.name for f in fields(VehicleParams)}
        return VehicleParams(**{k: getattr(self, k) for k in names})

    @classmethod
    def from_vehicle(cls, vehicle: VehicleParams, **overrides) -> PlantParams:
        base = {f.name: getattr(vehicle, f.name) for f in fields(VehicleParams)}
        base.update(overrides)
        return cls(**base)

    def stressed(self) -> PlantParams:
        """Grippier tyres and a softer, jackier body: the rollover-prone setup."""
        return replace(
            self,
            friction_coeff=self.friction_coeff * 1.5,
            roll_stiffness_Nm_rad=self.roll_stiffness_Nm_rad * 0.5,
            roll_damping_Nms_rad=self.roll_damping_Nms_rad * 0.5 ** 0.5,
        )

    def offroad(self) -> PlantParams:
        return replace(self, friction_coeff=self.friction_coeff * 0.8)

    def save(self, path: str | FsPath) -> None:
        config.dump_dataclass(self, path)

    @classmethod
    def load(cls, path: str | FsPath) -> PlantParams:
        return config.load_dataclass(cls, path)


def small_plant() -> PlantParams:
    return PlantParams()


def big_plant() -> PlantParams:
    """The small plant scaled like the big car (x2 length, x8 mass)."""
    small = PlantParams()
    v = small.vehicle.scaled(length=2.0, mass=8.0, inertia=32.0)
    # keep the roll mode's damping ratio, stiffness ~ m g h
    return PlantParams.from_vehicle(
        v,
        roll_stiffness_Nm_rad=small.roll_stiffness_Nm_rad * 16.0,
        roll_damping_Nms_rad=small.roll_damping_Nms_rad * math.sqrt(16.0 * 32.0),
        jacking_gain_m_rad=small.jacking_gain_m_rad * 2.0,
        friction_coeff=small.friction_coeff,
        wheelspeed_time_constant_s=small.wheelspeed_time_constant_s * 1.5,
        speed_per_duty_m_s=small.speed_per_duty_m_s * 1.5,
    )


@dataclass(frozen=True)
class PlantState:
    """Simulator truth after a step.

    ``body_roll_rad`` is suspension roll relative to the terrain, with the
    same sign as terrain roll (positive with the right side higher);
    ``roll`` is their sum. ``acc_level`` is specific force in the terrain
    frame (unaffected by body roll); ``acc_body`` is what a perfect IMU on
    the sprung body would measure; ``imu_acc``/``imu_gyro`` add noise.
    """

    t: float = 0.0
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    wz: float = 0.0
    z: float = 0.0
    vz: float = 0.0
    terrain_z: float = 0.0
    terrain_roll: float = 0.0
    terrain_pitch: float = 0.0
    body_roll_rad: float = 0.0
    body_roll_rate_rad_s: float = 0.0
    n_left: float = 0.0
    n_right: float = 0.0
    actual_wheelspeed_m_s: float = 0.0
    actual_steering_rad: float = 0.0
    airborne: bool = False
    rolled_over: bool = False
    acc_level: tuple[float, float, float] = (0.0, 0.0, 9.81)
    acc_body: tuple[float, float, float] = (0.0, 0.0, 9.81)
    gyro_body: tuple[float, float, float] = (0.0, 0.0, 0.0)
    imu_acc: tuple[float, float, float] = (0.0, 0.0, 9.81)
    imu_gyro: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def roll(self) -> float:
        return self.terrain_roll + self.body_roll_rad

    @property
    def pitch(self) -> float:
        return self.terrain_pitch

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    @property
    def normal_load(self) -> float:
        return self.n_left + self.n_right

    def to_rigid(self) -> RigidState:
        return RigidState(
            position_world_m=(self.x, self.y, self.z),
            rpy_rad=(self.roll, self.pitch, self.yaw),
            vel_body_m_s=(self.vx, self.vy, 0.0),
            acc_body_m_s2=self.acc_body,
            rates_body_rad_s=self.gyro_body,
        )


def _contact_half_track(p: PlantParams) -> float:
    # loaded tyres roll onto their outer edge, so contact sits outboard of the wheel centre
    return 0.5 * p.track_width_m + p.tire_half_width_m


def _side_stiffness(p: PlantParams) -> tuple[float, float]:
    w2 = 2.0 * _contact_half_track(p) ** 2
    return p.roll_stiffness_Nm_rad / w2, p.roll_damping_Nms_rad / w2


def static_sag(p: PlantParams) -> float:
    """Spring compression of each side at rest on level ground."""
    k_side, _ = _side_stiffness(p)
    return 0.5 * p.mass_kg * p.gravity_m_s2 / k_side


def plant_at_rest(emap: ElevationMap, p: PlantParams, x: float = 0.0, y: float = 0.0,
                  yaw: float = 0.0, vx: float = 0.0, t: float = 0.0) -> PlantState:
    """Place the plant in static equilibrium (level-ground sag) on the map."""
    zt, rt, pt = contact_pose_fast(emap, x, y, yaw, p)
    g = p.gravity_m_s2
    z = zt + p.com_height_m - static_sag(p)
    half = 0.5 * p.mass_kg * g
    return PlantState(
        t=t, x=x, y=y, yaw=wrap_angle(yaw), vx=vx, z=z, terrain_z=zt, terrain_roll=rt,
        terrain_pitch=pt, n_left=half, n_right=half, actual_wheelspeed_m_s=vx,
        acc_level=(0.0, 0.0, g), acc_body=(0.0, 0.0, g), imu_acc=(0.0, 0.0, g),
    )


def _magic(slip: float, stiffness: float, p: PlantParams) -> float:
    bx = stiffness * slip
    return math.sin(p.tire_shape * math.atan(bx - p.tire_curvature * (bx - math.atan(bx))))


def _axle(alpha: float, kappa: float, load: float, b_lat: float, grip: float, p: PlantParams):
    peak = p.friction_coeff * grip * load
    fy = -peak * _magic(alpha, b_lat, p)
    fx = peak * _magic(kappa, p.tire_long_stiffness, p)
    mag = math.hypot(fx, fy)
    if mag > peak > 0.0:
        fx *= peak / mag
        fy *= peak / mag
    return fx, fy


def step_plant(s: PlantState, u: ControlCommand, emap: ElevationMap, p: PlantParams, dt: float,
               rng: np.random.Generator | None = None) -> PlantState:
    """Advance the plant by ``dt`` (at most 2 ms).

    Args:
        s: current truth.
        u: steering and wheel-speed targets for the actuators.
        emap: terrain.
        p: plant parameters.
        dt: time step.
        rng: source of IMU noise; ``None`` gives a noise-free IMU.

    Raises:
        RolledOverError: if ``s.rolled_over`` is already latched.
        OutOfMapError: when a wheel leaves the terrain map.
    """
    if s.rolled_over:
        raise RolledOverError("plant has rolled over; reset it before stepping again")
    if not 0.0 < dt <= MAX_PLANT_DT:
        raise ValueError(f"plant dt must lie in (0, {MAX_PLANT_DT}]")
    m, g = p.mass_kg, p.gravity_m_s2
    lf, lr, L = p.com_to_front_m, p.com_to_rear_m, p.wheelbase_m
    w = _contact_half_track(p)

    # actuators
    dmax = p.steering_max_rad
    target = min(max(u.steering_rad, -dmax), dmax)
    step = p.steering_rate_rad_s * dt
    steer = s.actual_steering_rad + min(max(target - s.actual_steering_rad, -step), step)
    ws = s.actual_wheelspeed_m_s + (dt / p.wheelspeed_time_constant_s) * (
        min(max(u.wheelspeed_m_s, 0.0), p.wheelspeed_max_m_s) - s.actual_wheelspeed_m_s)

    # terrain under the current footprint
    zt, rt, pt = contact_pose_fast(emap, s.x, s.y, s.yaw, p)
    zt_rate = (zt - s.terrain_z) / dt if s.t > 0.0 else 0.0

    # contact patches; rho is body roll about +x (left side up)
    rho = -s.body_roll_rad
    rho_rate = -s.body_roll_rate_rad_s
    he = p.com_height_m + p.jacking_gain_m_rad * abs(rho)
    cr, sr = math.cos(rho), math.sin(rho)
    zrel = s.z - zt
    vzrel = s.vz - zt_rate
    k_side, c_side = _side_stiffness(p)
    pen_l = he * cr - w * sr - zrel
    pen_r = he * cr + w * sr - zrel
    dpen_l = (-he * sr - w * cr) * rho_rate - vzrel
    dpen_r = (-he * sr + w * cr) * rho_rate - vzrel
    n_l = max(0.0, k_side * pen_l + c_side * dpen_l) if pen_l > 0.0 else 0.0
    n_r = max(0.0, k_side * pen_r + c_side * dpen_r) if pen_r > 0.0 else 0.0
    n_tot = n_l + n_r
    airborne = n_tot <= 0.0

    # planar tyre forces on the axle loads
    vx_safe = max(s.vx, _VX_FLOOR)
    alpha_f = math.atan((s.vy + s.wz * lf) / vx_safe) - steer
    alpha_r = math.atan((s.vy - s.wz * lr) / vx_safe)
    kappa = (ws - s.vx) / vx_safe
    if airborne:
        fxf = fyf = fxr = fyr = 0.0
    else:
        fxf, fyf = _axle(alpha_f, kappa, n_tot * lr / L, p.tire_front_stiffness, p.front_grip_ratio, p)
        fxr, fyr = _axle(alpha_r, kappa, n_tot * lf / L, p.tire_rear_stiffness, 1.0, p)
    cd, sd = math.cos(steer), math.sin(steer)
    tire_x = fxr + fxf * cd - fyf * sd
    tire_y = fyr + fyf * cd + fxf * sd
    wz_dot = ((fxf * sd + fyf * cd) * lf - fyr * lr) / p.yaw_inertia_kgm2

    # roll moment about the centre of mass from both patches
    if airborne:
        torque = 0.0
    else:
        fy_l = tire_y * n_l / n_tot
        fy_r = tire_y - fy_l
        dy_l, dz_l = w * cr + he * sr, w * sr - he * cr
        dy_r, dz_r = -w * cr + he * sr, -w * sr - he * cr
        torque = (dy_l * n_l - dz_l * fy_l) + (dy_r * n_r - dz_r * fy_r)
    rho_rate_new = rho_rate + dt * torque / p.roll_inertia_kgm2
    rho_new = rho + dt * rho_rate_new
    if abs(rho_new) >= 0.5 * math.pi:
        rho_new = math.copysign(0.5 * math.pi, rho_new)
        rho_rate_new = 0.0

    # planar motion (semi-implicit, low-speed kinematic blend)
    ax_grav = g * math.sin(pt)
    ay_grav = g * math.sin(rt)
    vx_new = max(s.vx + dt * (tire_x / m + ax_grav + s.wz * s.vy), 0.0)
    vy_dyn = s.vy + dt * (tire_y / m + ay_grav - s.wz * s.vx)
    wz_dyn = s.wz + dt * wz_dot
    if airborne:
        vy_new, wz_new = vy_dyn, s.wz
    else:
        blend = min(max(s.vx / _BLEND_SPEED, 0.0), 1.0)
        wz_kin = vx_new * math.tan(steer) / L
        vy_new = blend * vy_dyn + (1.0 - blend) * wz_kin * lr
        wz_new = blend * wz_dyn + (1.0 - blend) * wz_kin
    yaw_new = s.yaw + dt * wz_new
    cy, sy = math.cos(yaw_new), math.sin(yaw_new)
    vf = vx_new * math.cos(pt)
    vl = vy_new * math.cos(rt)
    x_new = s.x + dt * (vf * cy - vl * sy)
    y_new = s.y + dt * (vf * sy + vl * cy)
    vz_new = s.vz + dt * (n_tot * math.cos(rt) * math.cos(pt) / m - g)
    z_new = s.z + dt * vz_new

    # sensors
    f_level = (tire_x / m, tire_y / m, n_tot / m)
    f_body = (f_level[0], f_level[1] * cr + f_level[2] * sr, -f_level[1] * sr + f_level[2] * cr)
    roll_total = rt - rho_new
    roll_rate_total = (rt - s.terrain_roll) / dt * (s.t > 0.0) - rho_rate_new
    pitch_rate = (pt - s.terrain_pitch) / dt * (s.t > 0.0)
    sp, cp = math.sin(pt), math.cos(pt)
    sphi, cphi = math.sin(roll_total), math.cos(roll_total)
    gyro = (
        roll_rate_total - sp * wz_new,
        cphi * pitch_rate + sphi * cp * wz_new,
        -sphi * pitch_rate + cphi * cp * wz_new,
    )
    if rng is None:
        imu_acc, imu_gyro = f_body, gyro
    else:
        na = rng.standard_normal(6)
        sa, sg = p.imu_acc_noise, p.imu_gyro_noise
        imu_acc = (f_body[0] + sa * na[0], f_body[1] + sa * na[1], f_body[2] + sa * na[2])
        imu_gyro = (gyro[0] + sg * na[3], gyro[1] + sg * na[4], gyro[2] + sg * na[5])

    speed = math.hypot(vx_new, vy_new)
    rolled = abs(roll_total) > ROLLOVER_ROLL_RAD and speed > ROLLOVER_SPEED_M_S
    return PlantState(
        t=s.t + dt, x=x_new, y=y_new, yaw=wrap_angle(yaw_new), vx=vx_new, vy=vy_new, wz=wz_new,
        z=z_new, vz=vz_new, terrain_z=zt, terrain_roll=rt, terrain_pitch=pt,
        body_roll_rad=-rho_new, body_roll_rate_rad_s=-rho_rate_new,
        n_left=n_l, n_right=n_r, actual_wheelspeed_m_s=ws, actual_steering_rad=steer,
        airborne=airborne, rolled_over=rolled,
        acc_level=f_level, acc_body=f_body, gyro_body=gyro, imu_acc=imu_acc, imu_gyro=imu_gyro,
    )


def wheel_speed_response(duty: float, wheelspeed: float, p: PlantParams, dt: float) -> float:
    """Motor model used with the duty-cycle loop.

    Duty scaled by the battery ratio sets a no-load wheel speed that the
    actual wheel speed lags behind with the actuator time constant.
    """
    target = duty * (p.instantaneous_battery_V / p.nominal_battery_V) * p.speed_per_duty_m_s
    return wheelspeed + (dt / p.wheelspeed_time_constant_s) * (target - wheelspeed)


def reset_to_path(s: PlantState, path: Path, emap: ElevationMap | None = None,
                  p: PlantParams | None = None) -> PlantState:
    """Put the car back on the closest path point, at rest, upright.

    Heading follows the path tangent; beyond either end the projection is
    clamped to the end waypoints. With ``emap`` and ``p`` the car is also
    set down on the terrain in static equilibrium.
    """
    foot, _, _, heading = path.project(np.array([[s.x, s.y]]))
    x, y, yaw = float(foot[0, 0]), float(foot[0, 1]), float(heading[0])
    if emap is not None and p is not None:
        fresh = plant_at_rest(emap, p, x, y, yaw, t=s.t)
        return replace(fresh, actual_steering_rad=s.actual_steering_rad)
    g = s.acc_level[2] if s.acc_level[2] > 0 else 9.81
    return replace(
        s, x=x, y=y, yaw=wrap_angle(yaw), vx=0.0, vy=0.0, wz=0.0, vz=0.0,
        body_roll_rad=0.0, body_roll_rate_rad_s=0.0, actual_wheelspeed_m_s=0.0,
        airborne=False, rolled_over=False, acc_level=(0.0, 0.0, g), acc_body=(0.0, 0.0, g),
        gyro_body=(0.0, 0.0, 0.0), imu_acc=(0.0, 0.0, g), imu_gyro=(0.0, 0.0, 0.0),
    )


__all__ = [
    "PlantParams", "PlantState", "RolledOverError", "small_plant", "big_plant", "plant_at_rest",
    "step_plant", "reset_to_path", "wheel_speed_response", "static_sag",
    "ROLLOVER_ROLL_RAD", "ROLLOVER_SPEED_M_S",
]
