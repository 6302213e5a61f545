"""Ground moving target imaging by phase-space reflectivity (PSR) recovery.

The PSR matrix ``Q`` has one row per hypothesized velocity and one column
per scene pixel. Its zero-velocity row holds the stationary scene and the
remaining rows hold sparse movers. Data are simulated through the lifted
SAR forward model :class:`LiftedOperator`, and ``Q`` is recovered with
:func:`pgd`, :func:`fista`, :func:`admm` or :func:`nonconvex_pgd`.
"""

from .forward import LiftedOperator, Measurements, read_flat, write_flat
from .grids import (
    C0,
    AcquisitionGeometry,
    CircularTrajectory,
    OffGridVelocityError,
    RadarParams,
    SceneGrid,
    Topography,
    VelocityGrid,
    WaypointTrajectory,
    desk_geometry,
    paper_geometry,
    toy_geometry,
)
from .metrics import Detection, DetectionReport, count_false_alarms, detect, l2_error, ppv, ssim
from .psr import (
    PsrDecomposition,
    SceneConflictError,
    build_psr,
    hard_threshold_topk,
    moving_image,
    project_moving,
    project_stationary,
    soft_threshold,
    stationary_image,
    velocity_estimates,
)
from .scenegen import (
    ExtendedTarget,
    GroundTruthScene,
    PointTarget,
    add_awgn,
    add_rayleigh_clutter,
    dense_scene,
    desk_scene,
    paper_scene,
    set_scnr,
    set_scr,
    simulate,
)
from .solvers import (
    LineSearchError,
    RecoveryResult,
    SolverConfig,
    SolverDivergedError,
    admm,
    fista,
    nonconvex_pgd,
    pgd,
    solve,
)

__version__ = "0.1.0"

__all__ = [
    "AcquisitionGeometry",
    "C0",
    "CircularTrajectory",
    "Detection",
    "DetectionReport",
    "ExtendedTarget",
    "GroundTruthScene",
    "LiftedOperator",
    "LineSearchError",
    "Measurements",
    "OffGridVelocityError",
    "PointTarget",
    "PsrDecomposition",
    "RadarParams",
    "RecoveryResult",
    "SceneConflictError",
    "SceneGrid",
    "SolverConfig",
    "SolverDivergedError",
    "Topography",
    "VelocityGrid",
    "WaypointTrajectory",
    "add_awgn",
    "add_rayleigh_clutter",
    "admm",
    "build_psr",
    "count_false_alarms",
    "dense_scene",
    "desk_geometry",
    "desk_scene",
    "detect",
    "fista",
    "hard_threshold_topk",
    "l2_error",
    "moving_image",
    "nonconvex_pgd",
    "paper_geometry",
    "paper_scene",
    "pgd",
    "ppv",
    "project_moving",
    "project_stationary",
    "read_flat",
    "set_scnr",
    "set_scr",
    "simulate",
    "soft_threshold",
    "solve",
    "ssim",
    "stationary_image",
    "toy_geometry",
    "velocity_estimates",
    "write_flat",
]
