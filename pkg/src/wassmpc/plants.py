"""Ground-truth plants: 2-RC equivalent-circuit battery and kinematic bicycle.

Both are stepped with forward Euler at fixed sample times.  The vehicle study
also carries a Gaussian-sum obstacle field whose super-cutoff region defines
the obstacles.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# Battery
# ----------------------------------------------------------------------


class OCVCurve:
    """Monotone open-circuit voltage vs state of charge, tabulated on [0, 1].

    Linear interpolation on a 201-point grid; values are clamped monotone
    nondecreasing at construction.
    """

    def __init__(self, soc_grid: np.ndarray, volts: np.ndarray):
        soc_grid = np.asarray(soc_grid, dtype=float)
        volts = np.maximum.accumulate(np.asarray(volts, dtype=float))
        if soc_grid.shape != volts.shape or soc_grid.ndim != 1:
            raise ValueError("grid and values must be 1-D and equal length")
        self.soc_grid = soc_grid
        self.volts = volts

    def __call__(self, soc):
        return np.interp(soc, self.soc_grid, self.volts)

    @classmethod
    def synthetic(
        cls,
        base: float = 3.2,
        slope: float = 0.10,
        dip_amp: float = 0.1,
        dip_rate: float = 35.0,
        knee_amp: float = 0.1,
        knee_rate: float = 25.0,
        step_amp: float = 0.0075,
        step_width: float = 0.02,
        points: int = 201,
    ) -> "OCVCurve":
        """Plateau-then-knee profile: low-end dip, gentle slope, exponential knee.

        A train of small monotone plateau steps mimics the staged structure of
        measured phosphate-chemistry curves; ``step_amp = 0`` gives the smooth
        profile.
        """
        s = np.linspace(0.0, 1.0, points)
        v = base + slope * s - dip_amp * np.exp(-dip_rate * s) + knee_amp * np.exp(
            knee_rate * (s - 1.0)
        )
        if step_amp > 0.0:
            for center in np.linspace(0.25, 0.75, 6):
                v += step_amp * np.tanh((s - center) / step_width)
        return cls(s, v)


@dataclass(frozen=True)
class BatteryParams:
    """Equivalent-circuit constants; charge capacity is the SOC-integrator gain."""

    q: float = 8280.0
    r0: float = 0.01
    r1: float = 0.01
    r2: float = 0.02
    c1: float = 2500.0
    c2: float = 70000.0
    dt: float = 1.0
    ocv: OCVCurve = field(default_factory=OCVCurve.synthetic)

    def __post_init__(self) -> None:
        for name in ("q", "r0", "r1", "r2", "c1", "c2", "dt"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"battery parameter {name} must be positive")


@dataclass(frozen=True)
class BatteryState:
    soc: float
    v_rc1: float = 0.0
    v_rc2: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.soc, self.v_rc1, self.v_rc2])


def battery_step(
    state: BatteryState, current: float, params: BatteryParams
) -> tuple[BatteryState, float]:
    """One forward-Euler update; the returned voltage is at the pre-update state."""
    voltage = float(
        params.ocv(state.soc) + state.v_rc1 + state.v_rc2 + current * params.r0
    )
    soc = state.soc + current * params.dt / params.q
    if soc < 0.0 or soc > 1.0:
        logger.debug("soc clipped from %.6f", soc)
        soc = min(max(soc, 0.0), 1.0)
    v1 = state.v_rc1 - params.dt / (params.r1 * params.c1) * state.v_rc1 \
        + params.dt / params.c1 * current
    v2 = state.v_rc2 - params.dt / (params.r2 * params.c2) * state.v_rc2 \
        + params.dt / params.c2 * current
    return BatteryState(soc=soc, v_rc1=v1, v_rc2=v2), voltage


# ----------------------------------------------------------------------
# Vehicle
# ----------------------------------------------------------------------


def wrap_angle(angle: float) -> float:
    """Wrap into (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class VehicleParams:
    length: float = 0.5
    dt: float = 0.2


@dataclass(frozen=True)
class VehicleState:
    x1: float
    x2: float
    heading: float
    speed: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.heading, self.speed])


def bicycle_step(state: VehicleState, u: np.ndarray, params: VehicleParams) -> VehicleState:
    """Forward-Euler kinematic bicycle update, heading wrapped to (-pi, pi]."""
    accel, steer = float(u[0]), float(u[1])
    dt = params.dt
    return VehicleState(
        x1=state.x1 + dt * state.speed * math.cos(state.heading),
        x2=state.x2 + dt * state.speed * math.sin(state.heading),
        heading=wrap_angle(state.heading + dt * state.speed * math.tan(steer) / params.length),
        speed=state.speed + dt * accel,
    )


# ----------------------------------------------------------------------
# Obstacle field
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ObstacleField:
    """Gaussian-sum barrier values on a regular grid over the square arena.

    ``z[i, j]`` holds the value at ``(coords[i], coords[j])``; positions are
    clamped into the arena before bilinear interpolation.
    """

    coords: np.ndarray
    z: np.ndarray
    cutoff: float
    resolution: float
    seed: int
    components: tuple = ()

    @property
    def extent(self) -> float:
        return float(self.coords[-1])

    @property
    def min_z(self) -> float:
        return float(self.z.min())

    def inside(self, position: np.ndarray) -> bool:
        x, y = float(position[0]), float(position[1])
        return 0.0 <= x <= self.extent and 0.0 <= y <= self.extent

    def value(self, positions: np.ndarray) -> np.ndarray:
        """Bilinear interpolation at (x, y) rows; positions clamped to the grid."""
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        px = np.clip(pos[:, 0], 0.0, self.extent) / self.resolution
        py = np.clip(pos[:, 1], 0.0, self.extent) / self.resolution
        ix = np.clip(px.astype(int), 0, self.coords.size - 2)
        iy = np.clip(py.astype(int), 0, self.coords.size - 2)
        fx = px - ix
        fy = py - iy
        z = self.z
        vals = (
            z[ix, iy] * (1 - fx) * (1 - fy)
            + z[ix + 1, iy] * fx * (1 - fy)
            + z[ix, iy + 1] * (1 - fx) * fy
            + z[ix + 1, iy + 1] * fx * fy
        )
        return vals if np.asarray(positions).ndim > 1 else float(vals[0])

    def violation_depth(self, position: np.ndarray) -> float:
        """Euclidean distance (m) from an unsafe position to the nearest safe cell."""
        dist = _safe_distance_grid(self)
        x = np.clip(float(position[0]), 0.0, self.extent) / self.resolution
        y = np.clip(float(position[1]), 0.0, self.extent) / self.resolution
        i = int(round(x))
        j = int(round(y))
        return float(dist[i, j]) * self.resolution

    def save_text(self, path: str) -> None:
        """Header (width, height, resolution, cutoff) then row-major values."""
        with open(path, "w") as fh:
            n = self.coords.size
            fh.write(f"{n} {n} {self.resolution!r} {self.cutoff!r}\n")
            for row in self.z:
                fh.write(" ".join(repr(v) for v in row.tolist()) + "\n")

    @classmethod
    def load_text(cls, path: str) -> "ObstacleField":
        with open(path) as fh:
            header = fh.readline().split()
            width, height = int(header[0]), int(header[1])
            resolution, cutoff = float(header[2]), float(header[3])
            z = np.loadtxt(fh, dtype=float).reshape(width, height)
        coords = np.arange(width) * resolution
        return cls(coords=coords, z=z, cutoff=cutoff, resolution=resolution, seed=-1)


_distance_cache: dict[int, np.ndarray] = {}


def _safe_distance_grid(f: ObstacleField) -> np.ndarray:
    key = id(f)
    if key not in _distance_cache:
        unsafe = f.z > f.cutoff
        _distance_cache[key] = ndimage.distance_transform_edt(unsafe)
    return _distance_cache[key]


def _corridor_exists(
    safe: np.ndarray,
    start_cell: tuple[int, int],
    resolution: float,
    width_m: float,
    progress_m: float,
) -> bool:
    """Flood-fill check: the eroded safe region must connect the start cell to
    cells whose coordinate sum reaches ``progress_m``."""
    radius = int(round(0.5 * width_m / resolution))
    span = np.arange(-radius, radius + 1)
    disk = span[:, None] ** 2 + span[None, :] ** 2 <= radius**2
    eroded = ndimage.binary_erosion(safe, structure=disk)
    if not eroded[start_cell]:
        return False
    labels, _ = ndimage.label(eroded)
    component = labels == labels[start_cell]
    n = safe.shape[0]
    idx = np.arange(n) * resolution
    coord_sum = idx[:, None] + idx[None, :]
    return bool(np.any(component & (coord_sum >= progress_m)))


def generate_obstacle_field(
    seed: int,
    n_gaussians: int = 12,
    cutoff_quantile: float = 0.80,
    extent: float = 100.0,
    resolution: float = 0.25,
    amplitude_range: tuple[float, float] = (0.5, 1.5),
    sigma_range: tuple[float, float] = (4.0, 12.0),
    start: tuple[float, float] = (5.0, 10.0),
    corridor_width_m: float = 3.0,
    corridor_progress_m: float = 170.0,
    max_attempts: int = 100,
) -> ObstacleField:
    """Seeded Gaussian-sum field; regenerates until the start position is safe
    and a corridor of the required width leads toward the far corner."""
    coords = np.arange(0.0, extent + resolution / 2, resolution)
    gx, gy = np.meshgrid(coords, coords, indexing="ij")
    start_cell = (int(round(start[0] / resolution)), int(round(start[1] / resolution)))

    for attempt in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), attempt]))
        z = np.zeros_like(gx)
        components = []
        for _ in range(n_gaussians):
            cx, cy = rng.uniform(0.0, extent, size=2)
            amp = rng.uniform(*amplitude_range)
            sigma = rng.uniform(*sigma_range)
            z += amp * np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2.0 * sigma**2))
            components.append((cx, cy, sigma, amp))
        cutoff = float(np.quantile(z, cutoff_quantile))
        safe = z <= cutoff
        if z[start_cell] >= cutoff and n_gaussians > 0:
            continue
        if not _corridor_exists(safe, start_cell, resolution, corridor_width_m,
                                corridor_progress_m):
            continue
        return ObstacleField(
            coords=coords,
            z=z,
            cutoff=cutoff,
            resolution=resolution,
            seed=int(seed),
            components=tuple(components),
        )
    raise RuntimeError(f"no admissible obstacle field after {max_attempts} attempts")
