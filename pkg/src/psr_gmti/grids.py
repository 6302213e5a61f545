"""Scene/velocity grids, antenna trajectories, radar parameters and the
geometric primitives (range, range variation, phase) of monostatic SAR.

Units are SI throughout: meters, seconds, m/s, rad/s.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

C0 = 2.998e8


class OffGridVelocityError(ValueError):
    """Raised when a velocity does not lie on the velocity grid."""


@dataclass(frozen=True)
class Topography:
    """Ground height ``psi(x)`` and its gradient.

    Both callables take an array of shape ``(..., 2)`` of horizontal
    positions. ``height`` returns shape ``(...)`` and ``gradient`` returns
    shape ``(..., 2)``.
    """

    height: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    @classmethod
    def flat(cls, level: float = 0.0) -> "Topography":
        return cls(
            height=lambda xy: np.full(np.shape(xy)[:-1], float(level)),
            gradient=lambda xy: np.zeros(np.shape(xy), dtype=float),
            name="flat",
        )

    @classmethod
    def plane(cls, slope_x: float, slope_y: float, offset: float = 0.0) -> "Topography":
        """Tilted plane ``psi(x) = offset + slope_x*x1 + slope_y*x2``."""
        g = np.array([slope_x, slope_y], dtype=float)

        def height(xy):
            xy = np.asarray(xy, dtype=float)
            return offset + xy @ g

        def gradient(xy):
            return np.broadcast_to(g, np.shape(xy)).astype(float)

        return cls(height=height, gradient=gradient, name="plane")

    @property
    def is_flat(self) -> bool:
        return self.name == "flat"


FLAT = Topography.flat()


def _axis_samples(lo: float, hi: float, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("sample count must be >= 1")
    if n == 1:
        if lo != hi:
            raise ValueError("a single-sample axis needs lo == hi")
        return np.array([float(lo)])
    if hi <= lo:
        raise ValueError("axis upper bound must exceed lower bound")
    step = (hi - lo) / (n - 1)
    return lo + step * np.arange(n)


@dataclass(frozen=True)
class SceneGrid:
    """Uniform ``ny x nx`` pixel grid on the ground plane.

    Pixel ``k`` sits at ``(row, col) = divmod(k, nx)`` and its center is
    ``origin + (col * dx, row * dy)``. Spacing is ``extent / (n - 1)``, so
    the first and last pixel centers lie on the scene boundary.
    """

    extent_x: float
    extent_y: float
    nx: int
    ny: int
    origin: Tuple[float, float] = (0.0, 0.0)
    topography: Topography = field(default=FLAT, compare=False)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("scene grid needs at least 2 pixels per axis")
        if self.extent_x <= 0 or self.extent_y <= 0:
            raise ValueError("scene extent must be positive")

    @property
    def n_pixels(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return self.extent_x / (self.nx - 1)

    @property
    def dy(self) -> float:
        return self.extent_y / (self.ny - 1)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def pixel_centers(self) -> np.ndarray:
        """``(N, 2)`` array of pixel centers in row-major order."""
        rows, cols = np.divmod(np.arange(self.n_pixels), self.nx)
        return np.column_stack(
            [self.origin[0] + cols * self.dx, self.origin[1] + rows * self.dy]
        )

    def pixel_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.ny and 0 <= col < self.nx):
            raise IndexError(f"pixel ({row}, {col}) outside {self.ny}x{self.nx} grid")
        return int(row) * self.nx + int(col)

    def pixel_rowcol(self, k: int) -> Tuple[int, int]:
        if not 0 <= k < self.n_pixels:
            raise IndexError(f"pixel index {k} out of range")
        row, col = divmod(int(k), self.nx)
        return row, col

    def nearest_pixel(self, xy: Sequence[float]) -> Tuple[int, int]:
        col = int(round((xy[0] - self.origin[0]) / self.dx))
        row = int(round((xy[1] - self.origin[1]) / self.dy))
        return min(max(row, 0), self.ny - 1), min(max(col, 0), self.nx - 1)

    def heights(self) -> np.ndarray:
        return np.asarray(self.topography.height(self.pixel_centers), dtype=float)

    def gradients(self) -> np.ndarray:
        return np.asarray(self.topography.gradient(self.pixel_centers), dtype=float)


def _pair(v) -> Tuple[float, float]:
    if np.ndim(v) == 0:
        return float(v), float(v)
    a, b = v
    return float(a), float(b)


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform grid of hypothesized 2D velocities.

    ``samples[k']`` for ``k' = iy * mx + ix`` is ``(vx[ix], vy[iy])``. The
    zero velocity must be a grid point; its index is ``stationary_index``.

    Parameters
    ----------
    v_min, v_max : float or pair of float
        Per-axis bounds in m/s. A scalar applies to both axes.
    mx, my : int
        Sample counts along the x and y velocity axes.
    """

    v_min: Union[float, Tuple[float, float]]
    v_max: Union[float, Tuple[float, float]]
    mx: int
    my: int

    def __post_init__(self):
        # validates and caches; zero must be exactly on-grid
        lo_x, lo_y = _pair(self.v_min)
        hi_x, hi_y = _pair(self.v_max)
        vx = self._snap_zero(_axis_samples(lo_x, hi_x, self.mx))
        vy = self._snap_zero(_axis_samples(lo_y, hi_y, self.my))
        zx = np.flatnonzero(vx == 0.0)
        zy = np.flatnonzero(vy == 0.0)
        if zx.size != 1 or zy.size != 1:
            raise ValueError("velocity grid must contain the zero velocity exactly")
        object.__setattr__(self, "_vx", vx)
        object.__setattr__(self, "_vy", vy)
        object.__setattr__(self, "_stationary", int(zy[0]) * self.mx + int(zx[0]))

    @staticmethod
    def _snap_zero(axis: np.ndarray) -> np.ndarray:
        if axis.size == 1:
            return axis
        step = axis[1] - axis[0]
        axis = axis.copy()
        axis[np.abs(axis) < 1e-9 * step] = 0.0
        return axis

    @classmethod
    def symmetric(cls, v_max: float, m: int) -> "VelocityGrid":
        """Square grid over ``[-v_max, v_max]^2`` with ``m`` samples per axis."""
        return cls(-v_max, v_max, m, m)

    @property
    def axis_x(self) -> np.ndarray:
        return self._vx

    @property
    def axis_y(self) -> np.ndarray:
        return self._vy

    @property
    def spacing(self) -> Tuple[float, float]:
        dx = self._vx[1] - self._vx[0] if self.mx > 1 else 0.0
        dy = self._vy[1] - self._vy[0] if self.my > 1 else 0.0
        return float(dx), float(dy)

    @property
    def n_velocities(self) -> int:
        return self.mx * self.my

    @property
    def stationary_index(self) -> int:
        return self._stationary

    @property
    def samples(self) -> np.ndarray:
        iy, ix = np.divmod(np.arange(self.n_velocities), self.mx)
        return np.column_stack([self._vx[ix], self._vy[iy]])

    def index_of(self, velocity: Sequence[float]) -> int:
        """Index of an on-grid velocity; raises OffGridVelocityError otherwise."""
        vx, vy = float(velocity[0]), float(velocity[1])
        ix = self._axis_index(self._vx, vx)
        iy = self._axis_index(self._vy, vy)
        if ix is None or iy is None:
            raise OffGridVelocityError(f"velocity ({vx}, {vy}) is not on the velocity grid")
        return iy * self.mx + ix

    @staticmethod
    def _axis_index(axis: np.ndarray, v: float) -> Optional[int]:
        step = axis[1] - axis[0] if axis.size > 1 else 1.0
        i = int(np.argmin(np.abs(axis - v)))
        return i if abs(axis[i] - v) <= 1e-9 * step else None

    def contains(self, velocity: Sequence[float]) -> bool:
        try:
            self.index_of(velocity)
        except OffGridVelocityError:
            return False
        return True


@dataclass(frozen=True)
class CircularTrajectory:
    """Constant-altitude circular flight path.

    The platform angle is ``2*pi*s/S``, so one full circle is flown over the
    aperture time ``S`` and ``gamma(0) = center + (radius, 0, altitude)``.
    """

    center: Tuple[float, float]
    radius: float
    altitude: float
    aperture_time: float
    n_slow: int

    kind = "circular"

    def __post_init__(self):
        if self.radius <= 0 or self.aperture_time <= 0:
            raise ValueError("radius and aperture time must be positive")
        if self.n_slow < 1:
            raise ValueError("need at least one slow-time sample")

    @property
    def slow_time_samples(self) -> np.ndarray:
        if self.n_slow == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.aperture_time, self.n_slow)

    @property
    def platform_speed(self) -> float:
        return 2 * np.pi * self.radius / self.aperture_time

    def position(self, s) -> np.ndarray:
        """Antenna position(s), shape ``(..., 3)``."""
        theta = 2 * np.pi * np.asarray(s, dtype=float) / self.aperture_time
        return np.stack(
            [
                self.center[0] + self.radius * np.cos(theta),
                self.center[1] + self.radius * np.sin(theta),
                np.full_like(theta, self.altitude),
            ],
            axis=-1,
        )

    def min_altitude(self) -> float:
        return float(self.altitude)


@dataclass(frozen=True, eq=False)
class WaypointTrajectory:
    """Piecewise-linear path through a table of ``(time, x, y, z)`` waypoints."""

    times: np.ndarray
    points: np.ndarray
    n_slow: int

    kind = "waypoint-table"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.points, dtype=float)
        if t.ndim != 1 or p.shape != (t.size, 3):
            raise ValueError("waypoints need times (K,) and points (K, 3)")
        if t.size < 2 or np.any(np.diff(t) <= 0):
            raise ValueError("waypoint times must be strictly increasing")
        if not np.all(np.isfinite(p)):
            raise ValueError("waypoints must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    @property
    def aperture_time(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def slow_time_samples(self) -> np.ndarray:
        return np.linspace(0.0, self.aperture_time, self.n_slow)

    def position(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float) + self.times[0]
        return np.stack([np.interp(s, self.times, self.points[:, i]) for i in range(3)], axis=-1)

    def min_altitude(self) -> float:
        return float(self.points[:, 2].min())


Trajectory = Union[CircularTrajectory, WaypointTrajectory]


@dataclass(frozen=True)
class RadarParams:
    """Stepped-frequency radar: ``n_freq`` angular frequencies spanning the band."""

    center_frequency: float = 9.45e9
    bandwidth: float = 50e6
    n_freq: int = 100
    c0: float = C0

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.n_freq < 1:
            raise ValueError("need at least one frequency sample")
        if self.center_frequency - self.bandwidth / 2 <= 0:
            raise ValueError("band must lie at positive frequencies")

    @property
    def omegas(self) -> np.ndarray:
        if self.n_freq == 1:
            return np.array([2 * np.pi * self.center_frequency])
        f = np.linspace(
            self.center_frequency - self.bandwidth / 2,
            self.center_frequency + self.bandwidth / 2,
            self.n_freq,
        )
        return 2 * np.pi * f

    @property
    def range_resolution(self) -> float:
        return self.c0 / (2 * self.bandwidth)


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Everything that determines the lifted forward operator."""

    scene: SceneGrid
    velocities: VelocityGrid
    trajectory: Trajectory
    radar: RadarParams

    def __post_init__(self):
        if self.trajectory.min_altitude() <= float(np.max(self.scene.heights())):
            raise ValueError("trajectory must stay above the scene")

    @property
    def n_slow(self) -> int:
        return self.trajectory.n_slow

    @property
    def n_freq(self) -> int:
        return self.radar.n_freq

    @property
    def n_measurements(self) -> int:
        return self.n_slow * self.n_freq

    @property
    def shape(self) -> Tuple[int, int]:
        """PSR matrix shape ``(M, N)``."""
        return (self.velocities.n_velocities, self.scene.n_pixels)

    @property
    def stationary_index(self) -> int:
        return self.velocities.stationary_index

    def min_detectable_speed(self) -> float:
        return min_detectable_speed(
            self.radar.bandwidth, self.trajectory.aperture_time, self.radar.c0
        )


# --- geometric primitives -------------------------------------------------


def lifted_velocity(x, nu, topography: Topography = FLAT) -> np.ndarray:
    """3D velocity ``[nu, grad psi(x) . nu]`` of a scatterer moving on the ground."""
    x = np.asarray(x, dtype=float)
    nu = np.asarray(nu, dtype=float)
    vz = np.sum(np.asarray(topography.gradient(x)) * nu, axis=-1)
    return np.concatenate([np.broadcast_to(nu, np.broadcast_shapes(nu.shape, x.shape)),
                           np.asarray(vz)[..., None]], axis=-1)


def ground_point(x, topography: Topography = FLAT) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, np.asarray(topography.height(x))[..., None]], axis=-1)


def scatterer_position(x, nu, s, topography: Topography = FLAT) -> np.ndarray:
    """Position ``[x, psi(x)] + v s`` of a constant-velocity ground scatterer."""
    return ground_point(x, topography) + lifted_velocity(x, nu, topography) * np.asarray(s)[..., None]


def two_way_range(trajectory: Trajectory, s, x, topography: Topography = FLAT) -> np.ndarray:
    """Monostatic two-way range ``2 |gamma(s) - [x, psi(x)]|``."""
    gamma = trajectory.position(s)
    return 2.0 * np.linalg.norm(gamma - ground_point(x, topography), axis=-1)


def look_direction(trajectory: Trajectory, s, x, topography: Topography = FLAT) -> np.ndarray:
    """Unit vector from the antenna at ``gamma(s)`` to the ground point ``x``."""
    diff = ground_point(x, topography) - trajectory.position(s)
    return diff / np.linalg.norm(diff, axis=-1, keepdims=True)


def range_variation(trajectory: Trajectory, s, x, nu, topography: Topography = FLAT) -> np.ndarray:
    """Velocity-induced range term ``2 s (u_hat . v)``."""
    u = look_direction(trajectory, s, x, topography)
    v = lifted_velocity(x, nu, topography)
    return 2.0 * np.asarray(s, dtype=float) * np.sum(u * v, axis=-1)


def phase(omega, trajectory: Trajectory, s, x, nu, topography: Topography = FLAT,
          c0: float = C0) -> np.ndarray:
    """Propagation phase ``omega * (R + B) / c0`` in radians."""
    total = two_way_range(trajectory, s, x, topography) + range_variation(
        trajectory, s, x, nu, topography
    )
    return np.asarray(omega, dtype=float) * total / c0


def min_detectable_speed(bandwidth: float, aperture_time: float, c0: float = C0) -> float:
    """Slowest speed that leaves a range cell within the aperture, ``c0 / (2 B S)``."""
    if bandwidth <= 0 or aperture_time <= 0:
        raise ValueError("bandwidth and aperture time must be positive")
    return c0 / (2.0 * bandwidth * aperture_time)


def paper_trajectory(n_slow: int = 512) -> CircularTrajectory:
    """Circle of radius 11 km about (11 km, 11 km) at 6.5 km altitude, 262.5 s aperture."""
    return CircularTrajectory(
        center=(11_000.0, 11_000.0), radius=11_000.0, altitude=6_500.0,
        aperture_time=262.5, n_slow=n_slow,
    )


def paper_geometry(center_frequency: float = 9.45e9) -> AcquisitionGeometry:
    """Full-size setup: 31x31 px over 100 m, 21x21 velocities on [-20, 20] m/s,
    512 slow-time x 100 frequency samples."""
    return AcquisitionGeometry(
        scene=SceneGrid(100.0, 100.0, 31, 31),
        velocities=VelocityGrid.symmetric(20.0, 21),
        trajectory=paper_trajectory(512),
        radar=RadarParams(center_frequency=center_frequency, bandwidth=50e6, n_freq=100),
    )


def desk_geometry() -> AcquisitionGeometry:
    """Reduced setup that runs in seconds: 15x15 px, 7x7 velocities on
    [-18, 18] m/s, 64 slow-time x 32 frequency samples."""
    return AcquisitionGeometry(
        scene=SceneGrid(100.0, 100.0, 15, 15),
        velocities=VelocityGrid.symmetric(18.0, 7),
        trajectory=paper_trajectory(64),
        radar=RadarParams(n_freq=32),
    )


def toy_geometry(n_pixels: int = 9, n_velocities: int = 5, velocity_step: float = 6.0,
                 n_slow: int = 32, n_freq: int = 32, extent: float = 100.0) -> AcquisitionGeometry:
    """Small square geometry for validation runs.

    ``n_velocities`` odd gives a symmetric square velocity grid; ``3`` gives
    the three-sample line ``(-step, 0), (0, 0), (step, 0)``.
    """
    if n_velocities == 3:
        vel = VelocityGrid((-velocity_step, 0.0), (velocity_step, 0.0), 3, 1)
    else:
        vel = VelocityGrid.symmetric(velocity_step * (n_velocities // 2), n_velocities)
    return AcquisitionGeometry(
        scene=SceneGrid(extent, extent, n_pixels, n_pixels),
        velocities=vel,
        trajectory=paper_trajectory(n_slow),
        radar=RadarParams(n_freq=n_freq),
    )
