"""Log metrics: percentile peaks, 2 Hz smoothing, rollover events."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

ROLL_THRESHOLD_RAD = 1.0
SPEED_THRESHOLD_M_S = 0.5
DELAY_S = 0.2
DEDUP_S = 1.0
YAW_WINDOW_S = 0.5
CUTOFF_HZ = 2.0


def peak_percentile(series, q: float = 99.7) -> float:
    """Empirical ``q``-th percentile with linear interpolation between order statistics."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("peak_percentile needs a nonempty series")
    if not 0.0 <= q <= 100.0:
        raise ValueError("q must lie in [0, 100]")
    return float(np.percentile(x, q, method="linear"))


def lowpass_2hz(series, sample_rate: float) -> np.ndarray:
    """Causal second-order Butterworth at 2 Hz (bilinear transform).

    The filter state starts at the first sample, so a constant input comes
    out unchanged from the first step.
    """
    if not sample_rate > 2.0 * CUTOFF_HZ:
        raise ValueError(f"sample rate {sample_rate} Hz is too low for a {CUTOFF_HZ} Hz cutoff")
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        return x.copy()
    b, a = signal.butter(2, CUTOFF_HZ, btype="low", fs=sample_rate)
    zi = signal.lfilter_zi(b, a) * x[0]
    y, _ = signal.lfilter(b, a, x, zi=zi)
    return y


def sample_rate_of(t) -> float:
    t = np.asarray(t, dtype=float)
    if t.size < 2:
        raise ValueError("need at least two timestamps")
    return 1.0 / float(np.median(np.diff(t)))


@dataclass(frozen=True)
class RolloverEvent:
    t: float
    index: int
    delayed_az: float


def extract_rollover_events(log, az_key: str = "imu_az", dedup_s: float = DEDUP_S) -> list[RolloverEvent]:
    """Rollover events in a log.

    Args:
        log: mapping with ``t``, ``roll``, ``speed`` and ``az_key`` arrays.
        az_key: which vertical-acceleration channel to report.
        dedup_s: upward crossings closer than this to the last kept event
            are dropped.

    Returns:
        One event per upward crossing of ``|roll| > 1.0 and speed > 0.5``,
        each with the 2 Hz filtered vertical acceleration 0.2 s earlier.
    """
    t = np.asarray(log["t"], dtype=float)
    if t.size == 0:
        return []
    cond = (np.abs(np.asarray(log["roll"], dtype=float)) > ROLL_THRESHOLD_RAD) & (
        np.asarray(log["speed"], dtype=float) > SPEED_THRESHOLD_M_S
    )
    rising = cond & ~np.concatenate([[False], cond[:-1]])
    idx = np.flatnonzero(rising)
    if idx.size == 0:
        return []
    az = np.asarray(log[az_key], dtype=float)
    az_f = lowpass_2hz(az, sample_rate_of(t)) if t.size > 1 else az
    events = []
    last = -np.inf
    for k in idx:
        if t[k] - last < dedup_s:
            continue
        last = t[k]
        events.append(RolloverEvent(float(t[k]), int(k), float(np.interp(t[k] - DELAY_S, t, az_f))))
    return events


def yaw_accel(t, wz) -> np.ndarray:
    """Central-difference derivative of the 2 Hz filtered yaw rate."""
    t = np.asarray(t, dtype=float)
    f = lowpass_2hz(wz, sample_rate_of(t))
    return np.gradient(f, t)


def max_yaw_accel(t, wz, events=(), window_s: float = YAW_WINDOW_S) -> list[float]:
    """Peak ``|d wz/dt|`` in the window before each event (or the whole log if none)."""
    t = np.asarray(t, dtype=float)
    if t.size < 3:
        return [0.0]
    acc = np.abs(yaw_accel(t, wz))
    if not events:
        return [float(acc.max())]
    out = []
    for e in events:
        m = (t >= e.t - window_s) & (t <= e.t)
        out.append(float(acc[m].max()) if m.any() else 0.0)
    return out


def distance_travelled(t, speed) -> float:
    t = np.asarray(t, dtype=float)
    v = np.asarray(speed, dtype=float)
    if t.size < 2:
        return 0.0
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(t)))


def log_summary(log, q: float = 99.7) -> dict[str, float]:
    """Peak lateral acceleration and speed, rollovers, delayed A_z and distance for one log.

    ``log`` needs ``t``, ``roll``, ``speed``, ``imu_ay``, ``imu_az`` and ``vx``.
    Acceleration and speed are 2 Hz filtered before taking the peak.
    """
    t = np.asarray(log["t"], dtype=float)
    rate = sample_rate_of(t)
    events = extract_rollover_events(log)
    return {
        "peak_ay": peak_percentile(np.abs(lowpass_2hz(log["imu_ay"], rate)), q),
        "peak_vx": peak_percentile(lowpass_2hz(log["vx"], rate), q),
        "rollovers": len(events),
        "delayed_az": float(np.mean([e.delayed_az for e in events])) if events else float("nan"),
        "distance_m": distance_travelled(t, log["speed"]),
    }


__all__ = [
    "peak_percentile", "lowpass_2hz", "extract_rollover_events", "RolloverEvent", "max_yaw_accel",
    "yaw_accel", "distance_travelled", "log_summary", "sample_rate_of",
]
