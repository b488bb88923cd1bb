"""Per-step log schema, run records and the per-iteration summary."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from hound.harness import metrics

# Canonical CSV columns, in order. Flags are stored as 0.0 / 1.0.
COLUMNS = (
    "t", "x", "y", "z", "roll", "pitch", "yaw",
    "vx", "vy", "vz", "speed", "wx", "wy", "wz",
    "ax", "ay", "az", "ay_level", "az_level",
    "imu_ax", "imu_ay", "imu_az", "imu_wx", "imu_wy", "imu_wz",
    "n_left", "n_right", "steer_actual", "wheelspeed_actual",
    "steer_cmd", "steer_out", "wheelspeed_cmd",
    "rps_ri", "rps_lo", "rps_hi", "rps_correction", "rps_active",
    "mppi_min_cost", "mppi_ess", "progress_m",
    "airborne", "rolled_over", "reset", "goal_reached",
)
INDEX = {name: i for i, name in enumerate(COLUMNS)}


class LogBuffer:
    """Growable row buffer, one row per plant step."""

    def __init__(self, capacity: int = 4096):
        self._data = np.empty((max(capacity, 16), len(COLUMNS)))
        self.n = 0

    def append(self, row) -> None:
        if self.n == len(self._data):
            self._data = np.concatenate([self._data, np.empty_like(self._data)])
        self._data[self.n] = row
        self.n += 1

    def array(self) -> np.ndarray:
        return self._data[: self.n].copy()


def plant_row(s, steer_cmd, steer_out, ws_cmd, rps_rec=None, mppi=(math.nan, math.nan),
              progress=0.0, reset=False, goal=False) -> tuple:
    """One log row from a plant state and the commands that were active."""
    if rps_rec is None:
        rps_vals = (math.nan, math.nan, math.nan, 0.0, 0.0)
    else:
        rps_vals = (rps_rec.ri, rps_rec.lo, rps_rec.hi, rps_rec.correction, float(rps_rec.active))
    ab, al, g, ia, ig = s.acc_body, s.acc_level, s.gyro_body, s.imu_acc, s.imu_gyro
    return (
        s.t, s.x, s.y, s.z, s.roll, s.pitch, s.yaw,
        s.vx, s.vy, s.vz, math.hypot(s.vx, s.vy), g[0], g[1], g[2],
        ab[0], ab[1], ab[2], al[1], al[2],
        ia[0], ia[1], ia[2], ig[0], ig[1], ig[2],
        s.n_left, s.n_right, s.actual_steering_rad, s.actual_wheelspeed_m_s,
        steer_cmd, steer_out, ws_cmd, *rps_vals, mppi[0], mppi[1], progress,
        float(s.airborne), float(s.rolled_over), float(reset), float(goal),
    )


def columns(rows: np.ndarray) -> dict[str, np.ndarray]:
    return {name: rows[:, i] for i, name in enumerate(COLUMNS)}


def _none_if_nan(x: float):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def summarize_rows(rows: np.ndarray, penalty_s: float = 1.0) -> dict:
    """Per-iteration summary, computed from the log rows alone.

    The turning window starts at the first row with a nonzero steering
    command and stops before the roll angle reaches 90 degrees. The
    peak ratio uses the terrain-frame specific force (rows with
    ``az_level > 0.5``).
    """
    if rows.shape[0] == 0:
        raise ValueError("empty log")
    c = columns(rows)
    t = c["t"]
    turning = np.flatnonzero(c["steer_cmd"] != 0.0)
    start = int(turning[0]) if turning.size else rows.shape[0]
    window = np.zeros(len(t), dtype=bool)
    window[start:] = True
    window &= np.abs(c["roll"]) < math.pi / 2
    valid = window & (c["az_level"] > 0.5)
    peak = float(np.max(np.abs(c["ay_level"][valid] / c["az_level"][valid]))) if valid.any() else 0.0
    min_az = float(np.min(c["az_level"][window])) if window.any() else float(np.min(c["az_level"]))
    events = metrics.extract_rollover_events(c)
    alpha = metrics.max_yaw_accel(t, c["imu_wz"], events) if len(t) >= 3 else [0.0]
    goal = np.flatnonzero(c["goal_reached"] > 0.5)
    completed = bool(goal.size)
    ttc_np = float(t[goal[0]]) if completed else math.nan
    n_ro = len(events)
    return {
        "rolled_over": bool(np.any(c["rolled_over"] > 0.5)),
        "rollovers": n_ro,
        "peak_ratio": peak,
        "min_az": min_az,
        "max_yaw_accel": float(max(alpha)),
        "delayed_az": _none_if_nan(float(np.mean([e.delayed_az for e in events]))) if events else None,
        "completed": completed,
        "ttc_np": _none_if_nan(ttc_np),
        "ttc_p": _none_if_nan(ttc_np + penalty_s * n_ro),
        "duration_s": float(t[-1]),
        "distance_m": metrics.distance_travelled(t, c["speed"]),
    }


@dataclass
class RunRecord:
    """One iteration of one arm: the log rows and their summary."""

    protocol: str
    arm: str
    iteration: int
    meta: dict = field(default_factory=dict)
    rows: np.ndarray | None = None
    summary: dict = field(default_factory=dict)

    def drop_rows(self) -> RunRecord:
        self.rows = None
        return self

    @property
    def label(self) -> str:
        phase = self.meta.get("phase", "main")
        tag = "" if phase == "main" else f"_{phase}"
        return f"{self.arm}{tag}_{self.iteration:03d}"


def write_csv(rows: np.ndarray, path: str | FsPath) -> None:
    """Header plus one line per row; floats written with ``repr`` so they round-trip."""
    lines = [",".join(COLUMNS)]
    lines.extend(",".join(map(repr, r)) for r in rows.tolist())
    FsPath(path).write_text("\n".join(lines) + "\n")


def read_csv(path: str | FsPath) -> np.ndarray:
    text = FsPath(path).read_text().splitlines()
    if not text:
        raise ValueError(f"{path}: empty file")
    header = tuple(h.strip() for h in text[0].split(","))
    if header != COLUMNS:
        missing = [c for c in COLUMNS if c not in header]
        raise ValueError(f"{path}: header does not match the log schema (missing {missing})")
    if len(text) == 1:
        return np.empty((0, len(COLUMNS)))
    return np.array([[float(v) for v in line.split(",")] for line in text[1:] if line], dtype=float)


def read_columns(path: str | FsPath) -> dict[str, np.ndarray]:
    """Any numeric CSV with a header, as a column mapping (for foreign logs)."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float, encoding="utf-8")
    if data.size == 0 or data.dtype.names is None:
        raise ValueError(f"{path}: no data rows")
    data = np.atleast_1d(data)
    return {name: np.asarray(data[name], dtype=float) for name in data.dtype.names}


__all__ = [
    "read_columns", "COLUMNS", "INDEX", "LogBuffer", "RunRecord", "plant_row", "columns", "summarize_rows",
    "write_csv", "read_csv",
]
