"""Body-centric elevation maps.

Grid layout: ``heights[row, col]`` with columns along world +x and rows
along world +y. ``origin`` is the world position of the centre of cell
``[0, 0]``; cell ``[r, c]`` sits at ``origin + resolution * (c, r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hound.vehicle import VehicleParams


class TerrainError(ValueError):
    """Base class for map errors."""


class OutOfMapError(TerrainError):
    """A query point lies outside the map."""


class InvalidCellError(TerrainError):
    """A query touched a cell without a height (only possible before preprocessing)."""


class ElevationMap:
    def __init__(self, heights, resolution: float, origin=(0.0, 0.0), valid=None):
        h = np.array(heights, dtype=float)
        if h.ndim != 2 or min(h.shape) < 2:
            raise TerrainError("heights must be a 2D grid of at least 2x2 cells")
        if not resolution > 0:
            raise TerrainError("resolution must be positive")
        v = np.isfinite(h) if valid is None else np.array(valid, dtype=bool)
        if v.shape != h.shape:
            raise TerrainError("valid mask shape does not match heights")
        if not np.all(np.isfinite(h[v])):
            raise TerrainError("heights must be finite wherever valid")
        h[~v] = np.nan
        h.setflags(write=False)
        v.setflags(write=False)
        self.heights = h
        self.valid = v
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))
        self.all_valid = bool(v.all())
        # a level, fully valid map has the same height everywhere; lookups skip interpolation
        self.level_height = float(h[0, 0]) if self.all_valid and np.all(h == h[0, 0]) else None

    @property
    def height_cells(self) -> int:
        return self.heights.shape[0]

    @property
    def width_cells(self) -> int:
        return self.heights.shape[1]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """``(x_min, x_max, y_min, y_max)`` of the sampleable region."""
        ox, oy = self.origin
        return (
            ox, ox + (self.width_cells - 1) * self.resolution,
            oy, oy + (self.height_cells - 1) * self.resolution,
        )

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (self.origin[0] + col * self.resolution, self.origin[1] + row * self.resolution)

    def save(self, path: str | Path) -> None:
        lines = [
            f"ELEV v1 {self.width_cells} {self.height_cells} {self.resolution!r} "
            f"{self.origin[0]!r} {self.origin[1]!r}"
        ]
        for row in self.heights:
            lines.append(" ".join("nan" if not np.isfinite(v) else repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> ElevationMap:
        text = Path(path).read_text().split("\n", 1)
        header = text[0].split()
        if len(header) != 7 or header[:2] != ["ELEV", "v1"]:
            raise TerrainError(f"{path}: not an ELEV v1 file")
        width, height = int(header[2]), int(header[3])
        res, ox, oy = (float(t) for t in header[4:7])
        values = np.array([float(t) for t in text[1].split()]) if len(text) > 1 else np.array([])
        if values.size != width * height:
            raise TerrainError(f"{path}: expected {width * height} heights, found {values.size}")
        return cls(values.reshape(height, width), res, (ox, oy))


def _fractional_index(emap: ElevationMap, x, y):
    fx = (np.asarray(x, dtype=float) - emap.origin[0]) / emap.resolution
    fy = (np.asarray(y, dtype=float) - emap.origin[1]) / emap.resolution
    return fx, fy


def sample_heights(emap: ElevationMap, x, y, strict: bool = True):
    """Bilinear height lookup at arrays of world points.

    With ``strict=False`` out-of-bounds points are clamped to the map edge
    and reported through the returned ``inside`` mask instead of raising.

    Returns:
        ``(heights, inside)`` arrays shaped like the broadcast of x and y.
    """
    fx, fy = _fractional_index(emap, x, y)
    w, h = emap.width_cells, emap.height_cells
    eps = 1e-9
    inside = (fx >= -eps) & (fx <= w - 1 + eps) & (fy >= -eps) & (fy <= h - 1 + eps)
    if strict and not np.all(inside):
        raise OutOfMapError("query point outside the elevation map")
    if emap.level_height is not None:
        return np.full(np.shape(inside), emap.level_height), inside
    # snap round-off so cell centres hit their stored value exactly
    rx, ry = np.rint(fx), np.rint(fy)
    fx = np.where(np.abs(fx - rx) < eps, rx, fx)
    fy = np.where(np.abs(fy - ry) < eps, ry, fy)
    fx = np.minimum(np.maximum(fx, 0.0), w - 1)
    fy = np.minimum(np.maximum(fy, 0.0), h - 1)
    c0 = np.minimum(np.floor(fx).astype(np.intp), w - 2)
    r0 = np.minimum(np.floor(fy).astype(np.intp), h - 2)
    tx = fx - c0
    ty = fy - r0
    g = emap.heights
    h00 = g[r0, c0]
    h01 = g[r0, c0 + 1]
    h10 = g[r0 + 1, c0]
    h11 = g[r0 + 1, c0 + 1]
    if not emap.all_valid:
        bad = (
            (np.isnan(h00) & ((1 - tx) * (1 - ty) > 0))
            | (np.isnan(h01) & (tx * (1 - ty) > 0))
            | (np.isnan(h10) & ((1 - tx) * ty > 0))
            | (np.isnan(h11) & (tx * ty > 0))
        )
        if np.any(bad & inside):
            raise InvalidCellError("query touches an invalid cell; run preprocess() first")
        h00, h01, h10, h11 = (np.nan_to_num(a) for a in (h00, h01, h10, h11))
    out = (1 - ty) * ((1 - tx) * h00 + tx * h01) + ty * ((1 - tx) * h10 + tx * h11)
    return out, inside


def sample_height(emap: ElevationMap, p) -> float:
    """Bilinear height at a single world point; exact at cell centres."""
    out, _ = sample_heights(emap, p[0], p[1], strict=True)
    return float(out)


def height_at(emap: ElevationMap, x: float, y: float) -> float:
    """Scalar fast path of :func:`sample_height` for fully valid maps.

    The plant calls this thousands of times per simulated second, so it
    avoids numpy dispatch entirely.
    """
    fx = (x - emap.origin[0]) / emap.resolution
    fy = (y - emap.origin[1]) / emap.resolution
    w, h = emap.width_cells, emap.height_cells
    if not (-1e-9 <= fx <= w - 1 + 1e-9 and -1e-9 <= fy <= h - 1 + 1e-9):
        raise OutOfMapError(f"point ({x:.3f}, {y:.3f}) outside the elevation map")
    if not emap.all_valid:
        return sample_height(emap, (x, y))
    fx = min(max(fx, 0.0), w - 1.0)
    fy = min(max(fy, 0.0), h - 1.0)
    c0 = min(int(fx), w - 2)
    r0 = min(int(fy), h - 2)
    tx = fx - c0
    ty = fy - r0
    g = emap.heights
    return (1 - ty) * ((1 - tx) * g[r0, c0] + tx * g[r0, c0 + 1]) + ty * (
        (1 - tx) * g[r0 + 1, c0] + tx * g[r0 + 1, c0 + 1]
    )


@dataclass(frozen=True)
class ContactPose:
    z_m: float
    roll_rad: float
    pitch_rad: float


def wheel_points(x, y, yaw, params: VehicleParams):
    """World positions of the four tyre contact points.

    Returns ``(xs, ys)`` each shaped ``(4, ...)`` in the order front-left,
    front-right, rear-left, rear-right.
    """
    c, s = np.cos(yaw), np.sin(yaw)
    lon = np.array([params.com_to_front_m, params.com_to_front_m, -params.com_to_rear_m, -params.com_to_rear_m])
    lat = 0.5 * params.track_width_m * np.array([1.0, -1.0, 1.0, -1.0])
    shape = (4,) + (1,) * np.ndim(x)
    lon = lon.reshape(shape)
    lat = lat.reshape(shape)
    xs = x + lon * c - lat * s
    ys = y + lon * s + lat * c
    return xs, ys


def contact_pose_arrays(emap: ElevationMap, x, y, yaw, params: VehicleParams, strict: bool = True):
    """Vectorised :func:`fit_contact_pose`.

    Returns:
        ``(z, roll, pitch, inside)`` where ``inside`` flags states whose
        four wheel points are all on the map.
    """
    xs, ys = wheel_points(x, y, yaw, params)
    hs, inside = sample_heights(emap, xs, ys, strict=strict)
    fl, fr, rl, rr = hs[0], hs[1], hs[2], hs[3]
    z = 0.25 * (fl + fr + rl + rr)
    pitch = np.arctan((0.5 * (rl + rr) - 0.5 * (fl + fr)) / params.wheelbase_m)
    roll = np.arctan((0.5 * (fr + rr) - 0.5 * (fl + rl)) / params.track_width_m)
    return z, roll, pitch, np.all(inside, axis=0)


def fit_contact_pose(emap: ElevationMap, pose2d, params: VehicleParams) -> ContactPose:
    """Fit height, roll and pitch from the terrain under the four tyres.

    ``z`` is the mean wheel-point height, pitch compares the rear and front
    axle means over the wheelbase, roll compares right and left side means
    over the track (positive with the right side higher).

    Raises:
        OutOfMapError: if any wheel point is off the map.
    """
    x, y, yaw = pose2d
    z, roll, pitch, _ = contact_pose_arrays(emap, float(x), float(y), float(yaw), params, strict=True)
    return ContactPose(float(z), float(roll), float(pitch))


def contact_pose_fast(emap: ElevationMap, x: float, y: float, yaw: float, params: VehicleParams):
    """Scalar contact fit for the plant; also returns left/right side heights."""
    c, s = math.cos(yaw), math.sin(yaw)
    lf, lr, ht = params.com_to_front_m, params.com_to_rear_m, 0.5 * params.track_width_m
    fl = height_at(emap, x + lf * c - ht * s, y + lf * s + ht * c)
    fr = height_at(emap, x + lf * c + ht * s, y + lf * s - ht * c)
    rl = height_at(emap, x - lr * c - ht * s, y - lr * s + ht * c)
    rr = height_at(emap, x - lr * c + ht * s, y - lr * s - ht * c)
    z = 0.25 * (fl + fr + rl + rr)
    pitch = math.atan((0.5 * (rl + rr) - 0.5 * (fl + fr)) / params.wheelbase_m)
    roll = math.atan((0.5 * (fr + rr) - 0.5 * (fl + rl)) / params.track_width_m)
    return z, roll, pitch


def _median3x3_valid(h: np.ndarray, valid: np.ndarray) -> np.ndarray:
    vals = np.where(valid, h, np.nan)
    padded = np.pad(vals, 1, mode="edge")
    rows, cols = h.shape
    stack = np.stack(
        [padded[1 + dr: 1 + dr + rows, 1 + dc: 1 + dc + cols] for dr in (-1, 0, 1) for dc in (-1, 0, 1)]
    )
    out = np.full_like(h, np.nan)
    if valid.any():
        out[valid] = np.nanmedian(stack[:, valid], axis=0)
    return out


def _nearest_fill(h: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Breadth-first nearest-valid fill on the 4-connected grid.

    Among equally near valid cells the one with the lowest row-major index
    wins. Cells are labelled layer by layer, each taking the minimum
    source label of its already-labelled neighbours.
    """
    rows, cols = h.shape
    label = np.where(valid, np.arange(h.size).reshape(h.shape), -1)
    big = h.size
    while np.any(label < 0):
        lab = np.where(label < 0, big, label)
        pad = np.pad(lab, 1, mode="constant", constant_values=big)
        best = np.minimum.reduce([
            pad[0:rows, 1:cols + 1], pad[2:rows + 2, 1:cols + 1],
            pad[1:rows + 1, 0:cols], pad[1:rows + 1, 2:cols + 2],
        ])
        grow = (label < 0) & (best < big)
        if not grow.any():
            break
        label = np.where(grow, best, label)
    return h.reshape(-1)[label]


def preprocess(emap: ElevationMap, crop_center, crop_size_cells: int) -> ElevationMap:
    """Crop, de-spike and fill a raw map.

    The crop is a ``crop_size_cells`` square centred on the cell nearest
    ``crop_center``. Valid cells get a 3x3 median filter (invalid
    neighbours ignored, edges replicated); invalid cells are then filled
    from the nearest valid cell.

    Raises:
        TerrainError: if the crop window leaves the raw map or no cell in
            it is valid.
    """
    n = int(crop_size_cells)
    if n < 2:
        raise TerrainError("crop_size_cells must be at least 2")
    col = int(round((crop_center[0] - emap.origin[0]) / emap.resolution))
    row = int(round((crop_center[1] - emap.origin[1]) / emap.resolution))
    r0, c0 = row - n // 2, col - n // 2
    if r0 < 0 or c0 < 0 or r0 + n > emap.height_cells or c0 + n > emap.width_cells:
        raise TerrainError("crop window extends past the raw map")
    h = emap.heights[r0:r0 + n, c0:c0 + n]
    v = emap.valid[r0:r0 + n, c0:c0 + n]
    if not v.any():
        raise TerrainError("every cell in the crop window is invalid")
    filtered = _median3x3_valid(h, v)
    filled = _nearest_fill(np.where(v, filtered, 0.0), v)
    return ElevationMap(filled, emap.resolution, emap.cell_center(r0, c0))


@dataclass(frozen=True)
class TerrainSpec:
    """What to generate: ``flat``, ``slope`` (planar grade along +x) or ``offroad``."""

    kind: str = "flat"
    grade: float = 0.0
    seed: int = 0
    amplitude_m: float = 0.3
    wavelength_m: float = 3.0

    @classmethod
    def parse(cls, text: str) -> TerrainSpec:
        """Parse ``flat``, ``slope:<grade>`` or ``offroad:<seed>:<amplitude>:<wavelength>``."""
        parts = text.strip().split(":")
        kind = parts[0]
        if kind == "flat" and len(parts) == 1:
            return cls("flat")
        if kind == "slope" and len(parts) == 2:
            return cls("slope", grade=float(parts[1]))
        if kind == "offroad" and len(parts) == 4:
            return cls("offroad", seed=int(parts[1]), amplitude_m=float(parts[2]), wavelength_m=float(parts[3]))
        raise TerrainError(f"cannot parse terrain spec {text!r}")

    def __str__(self) -> str:
        if self.kind == "slope":
            return f"slope:{self.grade!r}"
        if self.kind == "offroad":
            return f"offroad:{self.seed}:{self.amplitude_m!r}:{self.wavelength_m!r}"
        return "flat"


def generate_terrain(spec: TerrainSpec | str, extent=(20.0, 20.0), resolution: float = 0.05,
                     center=(0.0, 0.0)) -> ElevationMap:
    if isinstance(spec, str):
        spec = TerrainSpec.parse(spec)
    ex, ey = (extent, extent) if np.isscalar(extent) else extent
    if not (ex > 0 and ey > 0 and resolution > 0):
        raise TerrainError("extent and resolution must be positive")
    nx = int(round(ex / resolution)) + 1
    ny = int(round(ey / resolution)) + 1
    origin = (center[0] - 0.5 * (nx - 1) * resolution, center[1] - 0.5 * (ny - 1) * resolution)
    xs = origin[0] + resolution * np.arange(nx)
    ys = origin[1] + resolution * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    if spec.kind == "flat":
        h = np.zeros_like(X)
    elif spec.kind == "slope":
        h = spec.grade * X
    elif spec.kind == "offroad":
        rng = np.random.default_rng(spec.seed)
        n = 8
        amp = spec.amplitude_m / (2 * n)  # keeps peak-to-peak within amplitude_m
        lam = spec.wavelength_m * rng.uniform(0.5, 1.5, n)
        theta = rng.uniform(0.0, np.pi, n)
        phase = rng.uniform(0.0, 2 * np.pi, n)
        h = np.zeros_like(X)
        for k in range(n):
            arg = (2 * np.pi / lam[k]) * (np.cos(theta[k]) * X + np.sin(theta[k]) * Y) + phase[k]
            h += amp * np.sin(arg)
    else:
        raise TerrainError(f"unknown terrain kind {spec.kind!r}")
    return ElevationMap(h, resolution, origin)
