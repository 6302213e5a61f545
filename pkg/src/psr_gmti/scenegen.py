"""Synthetic ground truth: target layouts, Rayleigh clutter, and noise at a
prescribed SNR / SCR / SCNR.

All ratios follow the amplitude convention ``10 * log10(std_a / std_b)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .forward import LiftedOperator, Measurements
from .grids import AcquisitionGeometry, SceneGrid, VelocityGrid
from .psr import build_psr

RAYLEIGH_STD_FACTOR = np.sqrt((4.0 - np.pi) / 2.0)
MAX_SNR_DB = 300.0

RngLike = Union[None, int, Sequence[int], np.random.Generator]


class UnreachableRatioError(ValueError):
    """The requested SCNR cannot be met with nonnegative noise."""


def make_rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class PointTarget:
    pixel: Tuple[int, int]
    velocity: Tuple[float, float] = (0.0, 0.0)
    reflectivity: float = 1.0

    def __post_init__(self):
        if self.reflectivity < 0:
            raise ValueError("reflectivity must be nonnegative")

    @property
    def is_moving(self) -> bool:
        return bool(self.velocity[0] != 0 or self.velocity[1] != 0)


@dataclass(frozen=True)
class ExtendedTarget:
    """Stationary rectangle spanning inclusive row and column ranges."""

    rows: Tuple[int, int]
    cols: Tuple[int, int]
    reflectivity: float = 1.0

    def pixels(self) -> List[Tuple[int, int]]:
        return [(r, c) for r in range(self.rows[0], self.rows[1] + 1)
                for c in range(self.cols[0], self.cols[1] + 1)]


@dataclass
class GroundTruthScene:
    point_targets: Tuple[PointTarget, ...]
    extended_targets: Tuple[ExtendedTarget, ...] = ()
    clutter: Optional[np.ndarray] = None
    rng_seed: Optional[int] = None

    def __post_init__(self):
        self.point_targets = tuple(self.point_targets)
        self.extended_targets = tuple(self.extended_targets)

    @property
    def movers(self) -> List[PointTarget]:
        return [t for t in self.point_targets if t.is_moving]

    @property
    def n_movers(self) -> int:
        return len(self.movers)

    def occupied_pixels(self) -> Set[Tuple[int, int]]:
        pix = {tuple(t.pixel) for t in self.point_targets}
        for ext in self.extended_targets:
            pix.update(ext.pixels())
        return pix

    def foreground_image(self, grid: SceneGrid) -> np.ndarray:
        """``N``-pixel image holding mover reflectivities, zero elsewhere."""
        img = np.zeros(grid.n_pixels)
        for t in self.movers:
            img[grid.pixel_index(*t.pixel)] = t.reflectivity
        return img

    def truth_support(self, grid: SceneGrid, velocities: VelocityGrid) -> Set[Tuple[int, int]]:
        """``{(pixel index, velocity index)}`` of every mover."""
        return {(grid.pixel_index(*t.pixel), velocities.index_of(t.velocity)) for t in self.movers}

    def save_manifest(self, path, grid: SceneGrid, velocities: VelocityGrid) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "row", "col", "pixel_index", "vx", "vy", "velocity_index",
                        "reflectivity"])
            for t in self.point_targets:
                kind = "mover" if t.is_moving else "stationary"
                w.writerow([kind, t.pixel[0], t.pixel[1], grid.pixel_index(*t.pixel),
                            repr(float(t.velocity[0])), repr(float(t.velocity[1])),
                            velocities.index_of(t.velocity), repr(float(t.reflectivity))])
            for e in self.extended_targets:
                for r, c in e.pixels():
                    w.writerow(["extended", r, c, grid.pixel_index(r, c), "0.0", "0.0",
                                velocities.stationary_index, repr(float(e.reflectivity))])

    @staticmethod
    def load_manifest(path) -> "GroundTruthScene":
        points = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["kind"] == "extended":
                    continue
                points.append(PointTarget((int(row["row"]), int(row["col"])),
                                          (float(row["vx"]), float(row["vy"])),
                                          float(row["reflectivity"])))
        return GroundTruthScene(tuple(points))


# --- layouts --------------------------------------------------------------

# 1-based pixels as published, converted to 0-based (row, col) below.
PAPER_SCRIPTED = (
    ((10, 5), (14.0, 12.0)),
    ((10, 6), (2.0, -4.0)),
    ((29, 12), (6.0, 10.0)),
    ((3, 14), (6.0, 10.0)),
    ((11, 17), (8.0, -12.0)),
    ((12, 18), (8.0, -14.0)),
)
PAPER_EXTENDED = ExtendedTarget(rows=(18, 21), cols=(20, 25))

# Same three configurations (adjacent pair, distant pair sharing a velocity,
# close pair with neighboring velocities) laid out for a 15x15 / 7x7 grid.
DESK_SCRIPTED = (
    ((4, 2), (12.0, 12.0)),
    ((4, 3), (6.0, -6.0)),
    ((13, 6), (6.0, 12.0)),
    ((1, 7), (6.0, 12.0)),
    ((5, 8), (6.0, -12.0)),
    ((6, 9), (6.0, -18.0)),
)
DESK_EXTENDED = ExtendedTarget(rows=(9, 10), cols=(10, 12))


def _eligible_velocities(geometry: AcquisitionGeometry) -> np.ndarray:
    v = geometry.velocities.samples
    speed = np.hypot(v[:, 0], v[:, 1])
    idx = np.arange(len(v))
    ok = (idx != geometry.stationary_index) & (speed > geometry.min_detectable_speed())
    return idx[ok]


def random_movers(geometry: AcquisitionGeometry, n: int, rng: RngLike,
                  exclude: Iterable[Tuple[int, int]] = (),
                  reflectivity: float = 1.0) -> List[PointTarget]:
    """``n`` movers on distinct free pixels with uniform on-grid velocities.

    Pixels are drawn first, then velocities, from the same generator.
    """
    rng = make_rng(rng)
    grid = geometry.scene
    taken = {grid.pixel_index(*p) for p in exclude}
    free = np.array([k for k in range(grid.n_pixels) if k not in taken], dtype=int)
    if n > free.size:
        raise ValueError(f"cannot place {n} movers on {free.size} free pixels")
    pix = rng.choice(free, size=n, replace=False)
    vidx = rng.choice(_eligible_velocities(geometry), size=n, replace=True)
    samples = geometry.velocities.samples
    return [PointTarget(grid.pixel_rowcol(int(k)),
                        (float(samples[j, 0]), float(samples[j, 1])), reflectivity)
            for k, j in zip(pix, vidx)]


def _scripted_scene(geometry, scripted, extended, n_random, seed, zero_based):
    grid = geometry.scene
    targets = []
    for pix, vel in scripted:
        row, col = (pix if zero_based else (pix[0] - 1, pix[1] - 1))
        if not (0 <= row < grid.ny and 0 <= col < grid.nx):
            raise ValueError(f"grid {grid.ny}x{grid.nx} too small for scripted pixel {pix}")
        geometry.velocities.index_of(vel)
        targets.append(PointTarget((row, col), vel))
    for r, c in extended.pixels():
        if not (0 <= r < grid.ny and 0 <= c < grid.nx):
            raise ValueError("grid too small for the extended target")
    occupied = [t.pixel for t in targets] + extended.pixels()
    targets += random_movers(geometry, n_random, np.random.default_rng([seed, 0]), occupied)
    return GroundTruthScene(tuple(targets), (extended,), None, seed)


def paper_scene(geometry: AcquisitionGeometry, seed: int = 0) -> GroundTruthScene:
    """Six scripted movers, six random movers and one extended stationary
    target on the 31x31 pixel / 2 m/s velocity grid; unit reflectivities."""
    return _scripted_scene(geometry, PAPER_SCRIPTED, PAPER_EXTENDED, 6, seed, zero_based=False)


def desk_scene(geometry: AcquisitionGeometry, seed: int = 0) -> GroundTruthScene:
    """Reduced counterpart of :func:`paper_scene` for the 15x15 / 7x7 desk grid."""
    return _scripted_scene(geometry, DESK_SCRIPTED, DESK_EXTENDED, 6, seed, zero_based=True)


def dense_scene(geometry: AcquisitionGeometry, n_movers: int, seed: int = 0,
                clutter_sigma: Optional[float] = None) -> GroundTruthScene:
    """``n_movers`` random movers on distinct pixels; optional stationary clutter
    on the remaining pixels."""
    if n_movers > geometry.scene.n_pixels:
        raise ValueError("more movers than pixels")
    movers = random_movers(geometry, n_movers, np.random.default_rng([seed, 0]))
    scene = GroundTruthScene(tuple(movers), (), None, seed)
    if clutter_sigma:
        scene = add_rayleigh_clutter(scene, clutter_sigma, geometry.scene,
                                     np.random.default_rng([seed, 1]))
    return scene


# --- clutter and noise ------------------------------------------------------


def add_rayleigh_clutter(scene: GroundTruthScene, sigma_b: float, grid: SceneGrid,
                         rng: RngLike = None) -> GroundTruthScene:
    """Independent Rayleigh amplitudes on every pixel, with standard deviation
    ``sigma_b``. Mover pixels are masked out when the PSR is built."""
    if sigma_b < 0:
        raise ValueError("sigma_b must be nonnegative")
    if rng is None:
        rng = [scene.rng_seed or 0, 1]
    rng = make_rng(rng)
    scale = sigma_b / RAYLEIGH_STD_FACTOR
    clutter = rng.rayleigh(scale=1.0, size=grid.n_pixels) * scale
    return replace(scene, clutter=clutter)


def _clutter_pixels(scene: GroundTruthScene, grid: SceneGrid) -> np.ndarray:
    mask = np.ones(grid.n_pixels, dtype=bool)
    for t in scene.movers:
        mask[grid.pixel_index(*t.pixel)] = False
    return mask


def clutter_std(scene: GroundTruthScene, grid: SceneGrid) -> float:
    if scene.clutter is None:
        return 0.0
    return float(np.std(np.asarray(scene.clutter)[_clutter_pixels(scene, grid)]))


def foreground_std(scene: GroundTruthScene, grid: SceneGrid) -> float:
    return float(np.std(scene.foreground_image(grid)))


def measure_scr(scene: GroundTruthScene, grid: SceneGrid) -> float:
    return 10.0 * np.log10(foreground_std(scene, grid) / clutter_std(scene, grid))


def set_scr(scene: GroundTruthScene, scr_db: float, grid: SceneGrid,
            rng: RngLike = None) -> GroundTruthScene:
    """Rescale the clutter so that ``10 log10(sigma_f / sigma_b) = scr_db``.

    ``sigma_f`` is the standard deviation of the mover foreground image and
    ``sigma_b`` that of the clutter over the pixels it occupies. Mover
    reflectivities are untouched. A scene without clutter gets fresh
    Rayleigh clutter first.
    """
    if not scene.movers:
        raise ValueError("SCR is undefined without movers")
    sigma_f = foreground_std(scene, grid)
    target = sigma_f / 10.0 ** (scr_db / 10.0)
    if scene.clutter is None:
        scene = add_rayleigh_clutter(scene, 1.0, grid, rng)
    current = clutter_std(scene, grid)
    if current == 0:
        raise ValueError("existing clutter is constant; cannot rescale")
    return replace(scene, clutter=np.asarray(scene.clutter) * (target / current))


def data_std(x) -> float:
    x = x.data if isinstance(x, Measurements) else np.asarray(x)
    return float(np.std(x))


def complex_noise(n: int, sigma: float, rng: RngLike) -> np.ndarray:
    """Circular complex Gaussian samples with total standard deviation ``sigma``."""
    rng = make_rng(rng)
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return z * (sigma / np.sqrt(2.0))


def add_awgn(d: Measurements, snr_db: float, rng: RngLike = None) -> Measurements:
    """Add white noise with ``sigma_n = sigma_d / 10**(snr_db / 10)``."""
    sigma_d = data_std(d)
    if sigma_d == 0:
        raise ValueError("SNR is undefined for all-zero data")
    snr_db = min(float(snr_db), MAX_SNR_DB)
    sigma_n = sigma_d / 10.0 ** (snr_db / 10.0)
    return d.with_data(d.data + complex_noise(d.data.size, sigma_n, rng))


def scnr_noise_sigma(sigma_d: float, sigma_c: float, scnr_db: float) -> float:
    """Noise level making ``sigma_d / (sigma_c + sigma_n)`` equal ``10**(scnr_db/10)``."""
    sigma_n = sigma_d / 10.0 ** (scnr_db / 10.0) - sigma_c
    if sigma_n < -1e-12 * max(sigma_d, sigma_c, 1e-300):
        limit = 10.0 * np.log10(sigma_d / sigma_c) if sigma_c > 0 else np.inf
        raise UnreachableRatioError(
            f"SCNR {scnr_db} dB exceeds the clutter-limited maximum {limit:.2f} dB"
        )
    return max(sigma_n, 0.0)


def set_scnr(scene: GroundTruthScene, op: LiftedOperator, scnr_db: float,
             rng: RngLike = None) -> Measurements:
    """Simulate data at a target signal-to-clutter-plus-noise ratio.

    ``sigma_d`` is measured on the mover-only data and ``sigma_c`` on the
    data of the whole stationary component; the noise level closes the gap.
    """
    g = op.geometry
    dec = build_psr(scene, g.scene, g.velocities)
    d_m, d_c = op.forward(np.stack([dec.q_nu, dec.q_s]))
    sigma_n = scnr_noise_sigma(data_std(d_m), data_std(d_c), scnr_db)
    data = d_m + d_c + complex_noise(d_m.size, sigma_n, rng)
    return Measurements(data, op.n_slow, op.L)


def simulate(scene: GroundTruthScene, op: LiftedOperator) -> Measurements:
    """Noiseless data of a scene."""
    g = op.geometry
    return op.measure(build_psr(scene, g.scene, g.velocities).total)
