"""Config-driven experiment runner, scaling benchmark and image rendering.

Experiment files are TOML. A minimal desk-scale SNR sweep::

    seed = 0

    [geometry]
    preset = "desk"

    [scene]
    kind = "desk"

    [sweep]
    variable = "snr"
    values = [-12, 0, 12]
    realizations = 5

    [solver]
    name = "pgd"
    lam = 0.2
    gradient_mode = "exact"

    [output]
    directory = "out/snr"

See ``configs/`` for the full schema with every key spelled out.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .forward import LiftedOperator, read_flat
from .grids import (
    AcquisitionGeometry,
    CircularTrajectory,
    RadarParams,
    SceneGrid,
    VelocityGrid,
    WaypointTrajectory,
    desk_geometry,
    paper_geometry,
    toy_geometry,
)
from .metrics import detect, l2_error, ppv, ssim
from .psr import build_psr, load_matrix_csv, moving_image, stationary_image
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
from .solvers import LineSearchError, SolverConfig, SolverDivergedError, solve

log = logging.getLogger(__name__)

SWEEP_VARIABLES = ("snr", "scr", "scnr", "lambda", "k")
SCENE_KINDS = ("paper", "desk", "dense", "explicit")
METRIC_COLUMNS = ("sweep_var", "value_db", "ssim", "ppv", "l2_error", "tp", "fp", "fn",
                  "detections", "diverged")
RUN_COLUMNS = ("sweep_var", "value_db", "realization", "ssim", "ppv", "l2_error", "tp", "fp",
               "fn", "detections", "iterations", "status")
# kernel entries above which a run is flagged as long
LARGE_PROBLEM = 2e8


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# --- configuration ------------------------------------------------------------


@dataclass
class SweepSpec:
    variable: str
    values: Tuple[float, ...]
    realizations: int = 1

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ConfigError(f"sweep variable must be one of {SWEEP_VARIABLES}")
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        if not self.values:
            raise ConfigError("sweep needs at least one value")


@dataclass
class ExperimentConfig:
    """Everything a run needs, parsed from a TOML tree.

    ``raw`` keeps the (override-applied) tree; its canonical JSON hash
    identifies the experiment in every output.
    """

    geometry: AcquisitionGeometry
    scene: Dict[str, Any]
    sweep: SweepSpec
    solver: str
    solver_config: SolverConfig
    noise: Dict[str, Any] = field(default_factory=dict)
    output_dir: Path = Path("out")
    formats: Tuple[str, ...] = ("csv", "pgm")
    floor_db: float = -40.0
    seed: int = 0
    raw: Dict[str, Any] = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(tree: Dict[str, Any]) -> str:
    blob = json.dumps(tree, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _km(block, key, default=None):
    """Read ``key`` in meters, accepting a ``<key>_km`` variant."""
    if key + "_km" in block:
        return np.asarray(block[key + "_km"], dtype=float) * 1e3
    if key + "_m" in block:
        return np.asarray(block[key + "_m"], dtype=float)
    if key in block:
        return np.asarray(block[key], dtype=float)
    return default


def _pair(v, name):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size == 1:
        return float(v[0]), float(v[0])
    if v.size != 2:
        raise ConfigError(f"{name} must be a scalar or a pair")
    return float(v[0]), float(v[1])


_PRESETS = {"desk": desk_geometry, "paper": paper_geometry, "toy": toy_geometry}


def build_geometry(block: Dict[str, Any]) -> AcquisitionGeometry:
    """Geometry from the ``[geometry]`` table; keys override the preset."""
    preset = block.get("preset", "desk")
    if preset not in _PRESETS:
        raise ConfigError(f"unknown geometry preset {preset!r}")
    base = _PRESETS[preset]()
    scene, vel, traj, radar = base.scene, base.velocities, base.trajectory, base.radar

    if any(k in block for k in ("pixels", "extent", "extent_m", "extent_km")):
        nx, ny = (int(v) for v in _pair(block.get("pixels", (scene.nx, scene.ny)), "pixels"))
        ext = _km(block, "extent", np.array([scene.extent_x, scene.extent_y]))
        ex, ey = _pair(ext, "extent")
        scene = SceneGrid(ex, ey, nx, ny)
    if any(k in block for k in ("velocity_max", "velocity_min", "velocity_samples")):
        mx, my = (int(v) for v in _pair(block.get("velocity_samples", (vel.mx, vel.my)),
                                        "velocity_samples"))
        vmax = _pair(block.get("velocity_max", vel.v_max), "velocity_max")
        vmin = _pair(block.get("velocity_min", tuple(-v for v in vmax)), "velocity_min")
        vel = VelocityGrid(vmin, vmax, mx, my)

    tb = block.get("trajectory", {})
    if tb:
        kind = tb.get("kind", "circular")
        n_slow = int(tb.get("n_slow", traj.slow_time_samples.size))
        if kind == "circular":
            center = _km(tb, "center", np.asarray(getattr(traj, "center", (11e3, 11e3))))
            traj = CircularTrajectory(
                center=tuple(float(c) for c in center),
                radius=float(_km(tb, "radius", getattr(traj, "radius", 11e3))),
                altitude=float(_km(tb, "altitude", getattr(traj, "altitude", 6.5e3))),
                aperture_time=float(tb.get("aperture_time_s", getattr(traj, "aperture_time", 262.5))),
                n_slow=n_slow,
            )
        elif kind == "waypoints":
            wp = np.asarray(tb.get("waypoints_km", []), dtype=float)
            if wp.ndim != 2 or wp.shape[1] != 4:
                raise ConfigError("waypoints_km must be rows of [t_s, x_km, y_km, z_km]")
            traj = WaypointTrajectory(wp[:, 0], wp[:, 1:] * 1e3, n_slow)
        else:
            raise ConfigError(f"unknown trajectory kind {kind!r}")

    rb = block.get("radar", {})
    if rb:
        radar = RadarParams(
            center_frequency=float(rb.get("center_frequency_hz", radar.center_frequency)),
            bandwidth=float(rb.get("bandwidth_hz", radar.bandwidth)),
            n_freq=int(rb.get("n_freq", radar.n_freq)),
        )
    try:
        return AcquisitionGeometry(scene, vel, traj, radar)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _sweep_values(block) -> Tuple[float, ...]:
    if "values" in block:
        return tuple(float(v) for v in block["values"])
    try:
        start, stop, step = float(block["start"]), float(block["stop"]), float(block["step"])
    except KeyError as exc:
        raise ConfigError("sweep needs 'values' or 'start'/'stop'/'step'") from exc
    if step == 0 or (stop - start) / step < 0:
        raise ConfigError("sweep step has the wrong sign")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(float(np.round(start + i * step, 12)) for i in range(n))


_SOLVER_FIELDS = {f.name for f in fields(SolverConfig)}
_SOLVER_ALIASES = {"lambda": "lam", "k": "k_cardinality"}


def solver_config_from(block: Dict[str, Any]) -> SolverConfig:
    kw = {}
    for key, value in block.items():
        if key == "name":
            continue
        key = _SOLVER_ALIASES.get(key, key)
        if key not in _SOLVER_FIELDS:
            raise ConfigError(f"unknown solver key {key!r}")
        kw[key] = value
    return SolverConfig(**kw)


def set_dotted(tree: Dict[str, Any], dotted: str, value: Any) -> None:
    """Set ``tree[a][b] = value`` for ``dotted = "a.b"``, creating tables."""
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {p!r} is not a table")
    node[parts[-1]] = value


def parse_config(tree: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Validate a config tree. ``overrides`` maps dotted keys to values."""
    tree = copy.deepcopy(tree)
    for key, value in (overrides or {}).items():
        set_dotted(tree, key, value)

    known = {"seed", "geometry", "scene", "noise", "sweep", "solver", "output"}
    unknown = set(tree) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")

    geometry = build_geometry(tree.get("geometry", {}))
    scene = dict(tree.get("scene", {"kind": "desk"}))
    if scene.get("kind", "desk") not in SCENE_KINDS:
        raise ConfigError(f"scene kind must be one of {SCENE_KINDS}")

    sb = tree.get("sweep")
    if not isinstance(sb, dict) or "variable" not in sb:
        raise ConfigError("config needs a [sweep] table with one 'variable'")
    if isinstance(sb["variable"], (list, tuple)):
        raise ConfigError("exactly one sweep variable is allowed")
    sweep = SweepSpec(sb["variable"], _sweep_values(sb), int(sb.get("realizations", 1)))

    sv = dict(tree.get("solver", {}))
    name = sv.get("name", "pgd")
    cfg = solver_config_from(sv)
    if sweep.variable == "k":
        if name != "nonconvex":
            raise ConfigError("a k sweep needs the nonconvex solver")
        cfg = replace(cfg, k_cardinality=int(sweep.values[0]))
    try:
        cfg.validate(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    out = tree.get("output", {})
    formats = tuple(out.get("formats", ("csv", "pgm")))
    if set(formats) - {"csv", "pgm"}:
        raise ConfigError("output formats are 'csv' and 'pgm'")
    return ExperimentConfig(
        geometry=geometry,
        scene=scene,
        sweep=sweep,
        solver=name,
        solver_config=cfg,
        noise=dict(tree.get("noise", {})),
        output_dir=Path(out.get("directory", "out")),
        formats=formats,
        floor_db=float(out.get("floor_db", -40.0)),
        seed=int(tree.get("seed", 0)),
        raw=tree,
    )


def load_config(path, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    with open(path, "rb") as fh:
        tree = tomllib.load(fh)
    return parse_config(tree, overrides)


# --- scenes and data ------------------------------------------------------------


def _explicit_scene(block) -> GroundTruthScene:
    pts = [PointTarget(tuple(int(v) for v in t["pixel"]),
                       tuple(float(v) for v in t.get("velocity", (0.0, 0.0))),
                       float(t.get("reflectivity", 1.0)))
           for t in block.get("targets", [])]
    ext = [ExtendedTarget(tuple(e["rows"]), tuple(e["cols"]), float(e.get("reflectivity", 1.0)))
           for e in block.get("extended", [])]
    return GroundTruthScene(tuple(pts), tuple(ext))


def build_scene(block: Dict[str, Any], geometry: AcquisitionGeometry, seed: int) -> GroundTruthScene:
    kind = block.get("kind", "desk")
    if kind == "paper":
        scene = paper_scene(geometry, seed)
    elif kind == "desk":
        scene = desk_scene(geometry, seed)
    elif kind == "dense":
        n = block.get("n_movers")
        if n is None:
            n = int(round(float(block.get("density", 0.25)) * geometry.scene.n_pixels))
        scene = dense_scene(geometry, int(n), seed)
    else:
        scene = _explicit_scene(block)
    sigma = block.get("clutter_sigma")
    if sigma:
        scene = add_rayleigh_clutter(scene, float(sigma), geometry.scene, [seed, 1])
    return scene


def _noisy_data(cfg: ExperimentConfig, op, scene, variable, value, rng):
    """Apply the sweep variable (or the fixed noise settings) and simulate."""
    grid = cfg.geometry.scene
    snr = cfg.noise.get("snr_db")
    if variable == "scr":
        scene = set_scr(scene, value, grid, rng)
    elif variable == "scnr":
        scene = set_scr(scene, float(cfg.noise.get("scr_db", 0.0)), grid, rng)
        return scene, set_scnr(scene, op, value, rng)
    elif "scr_db" in cfg.noise:
        scene = set_scr(scene, float(cfg.noise["scr_db"]), grid, rng)
    d = simulate(scene, op)
    if variable == "snr":
        d = add_awgn(d, value, rng)
    elif snr is not None:
        d = add_awgn(d, float(snr), rng)
    return scene, d


# --- images -----------------------------------------------------------------------


def render_image(x, floor_db: float = -40.0, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Log-scale 8-bit image of a nonnegative array.

    ``20 log10(x / max)`` is clamped to ``[floor_db, 0]`` and mapped linearly
    onto ``[0, 255]``, rounding half to even (so -20 dB of a -40 dB floor
    lands on 128). An all-zero input renders black, with a warning.
    """
    if floor_db >= 0:
        raise ValueError("floor_db must be negative")
    x = np.asarray(x, dtype=float)
    if shape is not None:
        x = x.reshape(shape)
    if np.any(x < 0):
        raise ValueError("render_image expects nonnegative input")
    peak = x.max() if x.size else 0.0
    if peak <= 0:
        warnings.warn("all-zero image rendered black", RuntimeWarning, stacklevel=2)
        return np.zeros(x.shape, dtype=np.uint8)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(x / peak)
    db = np.clip(db, floor_db, 0.0)
    return np.rint(255.0 * (db - floor_db) / -floor_db).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 2:
        raise ValueError("PGM images are 2D")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError("not an 8-bit binary PGM file")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return data.reshape(h, w).copy()


def load_matrix(path) -> np.ndarray:
    """Matrix from CSV or the flat binary format (magnitude for complex data)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_matrix_csv(path)
    arr = read_flat(path)
    return np.abs(arr) if np.iscomplexobj(arr) else arr


# --- runs ---------------------------------------------------------------------


@dataclass
class ExperimentRecord:
    config_hash: str
    runs: List[Dict[str, Any]]
    aggregates: List[Dict[str, Any]]
    timing: List[Dict[str, Any]]
    output_dir: Optional[Path] = None

    def aggregate_for(self, value: float) -> Dict[str, Any]:
        for row in self.aggregates:
            if row["value_db"] == value:
                return row
        raise KeyError(value)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def aggregate(runs: List[Dict[str, Any]], variable: str, values: Sequence[float]) -> List[Dict[str, Any]]:
    """Mean over realizations for every sweep value.

    PPV averages only runs where it is defined; diverged runs are excluded
    from every mean and counted in ``diverged``.
    """
    out = []
    for v in values:
        rows = [r for r in runs if r["value_db"] == v]
        ok = [r for r in rows if r["status"] == "ok"]
        row = {"sweep_var": variable, "value_db": v, "diverged": len(rows) - len(ok)}
        for key in ("ssim", "l2_error", "tp", "fp", "fn", "detections"):
            row[key] = float(np.mean([r[key] for r in ok])) if ok else float("nan")
        pp = [r["ppv"] for r in ok if not math.isnan(r["ppv"])]
        row["ppv"] = float(np.mean(pp)) if pp else float("nan")
        out.append(row)
    return out


def _run_label(variable, value, j) -> str:
    return f"{variable}_{value:g}_r{j}".replace("-", "m")


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentRecord:
    """Run every sweep value and realization of ``cfg``.

    Realization ``j`` uses the same ground-truth layout at every sweep value
    (seeded by ``(seed, j)``); noise and clutter draws use the substream
    ``(seed, sweep_index, j)``.
    """
    g = cfg.geometry
    entries = g.n_measurements * g.shape[0] * g.shape[1]
    if entries > LARGE_PROBLEM:
        warnings.warn(
            f"operator has {entries:.2e} kernel entries; each solver run may take hours",
            RuntimeWarning, stacklevel=2,
        )
    op = LiftedOperator(g)
    out = Path(cfg.output_dir)
    if write:
        (out / "runs").mkdir(parents=True, exist_ok=True)
        _write_config_echo(cfg, out)

    variable = cfg.sweep.variable
    runs, timing = [], []
    scenes = {}
    for i, value in enumerate(cfg.sweep.values):
        for j in range(cfg.sweep.realizations):
            if j not in scenes:
                scenes[j] = build_scene(cfg.scene, g, int(np.random.SeedSequence([cfg.seed, j])
                                                            .generate_state(1)[0]))
                if write:
                    scenes[j].save_manifest(out / f"manifest_r{j}.csv", g.scene, g.velocities)
            rng = np.random.default_rng([cfg.seed, i, j])
            row, result, extra = _single_run(cfg, op, scenes[j], variable, value, rng)
            row["realization"] = j
            runs.append(row)
            if result is not None:
                timing.append({"sweep_var": variable, "value_db": value, "realization": j,
                               "median_iter_ms": 1e3 * float(np.median(result.wall_time)),
                               "total_s": float(np.sum(result.wall_time))})
            if write and result is not None:
                _write_run_files(cfg, out / "runs" / _run_label(variable, value, j),
                                 op, result, extra)
            log.info("%s=%g r%d: %s", variable, value, j, row["status"])

    aggregates = aggregate(runs, variable, cfg.sweep.values)
    record = ExperimentRecord(cfg.hash, runs, aggregates, timing, out if write else None)
    if write:
        _write_csv(out / "runs.csv", RUN_COLUMNS, runs)
        _write_csv(out / "metrics.csv", METRIC_COLUMNS, aggregates)
        _write_csv(out / "timing.csv",
                   ("sweep_var", "value_db", "realization", "median_iter_ms", "total_s"), timing)
    return record


def _single_run(cfg, op, scene, variable, value, rng):
    g = cfg.geometry
    scfg = cfg.solver_config
    if variable == "lambda":
        scfg = replace(scfg, lam=float(value))
    elif variable == "k":
        scfg = replace(scfg, k_cardinality=int(value))
    scene, d = _noisy_data(cfg, op, scene, variable, value, rng)
    truth = build_psr(scene, g.scene, g.velocities)
    row = {"sweep_var": variable, "value_db": value}
    try:
        result = solve(cfg.solver, d, op, scfg, truth=truth)
    except (SolverDivergedError, LineSearchError) as exc:
        row.update(ssim=float("nan"), ppv=float("nan"), l2_error=float("nan"), tp=0, fp=0,
                   fn=0, detections=0, iterations=0, status=f"diverged: {exc}")
        return row, None, None
    rep = ppv(detect(result.q_nu), scene, g.scene, g.velocities)
    row.update(
        ssim=ssim(moving_image(result.q_nu), scene.foreground_image(g.scene)),
        ppv=rep.ppv,
        l2_error=l2_error(truth.total, result.q_s, result.q_nu),
        tp=rep.true_positives, fp=rep.false_positives, fn=rep.false_negatives,
        detections=rep.n_detections, iterations=result.iterations, status="ok",
    )
    return row, result, d


def _write_run_files(cfg, run_dir: Path, op, result, d) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    shape = cfg.geometry.scene.shape
    if "csv" in cfg.formats:
        result.save_history(run_dir / "residuals.csv")
    if "pgm" in cfg.formats:
        vs = result.stationary_index
        naive = np.abs(op.adjoint(d)[vs])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            images = {
                "moving.pgm": moving_image(result.q_nu),
                "stationary.pgm": stationary_image(result.q_s, vs),
                "backprojection.pgm": naive,
            }
            for name, img in images.items():
                write_pgm(run_dir / name, render_image(img, cfg.floor_db, shape))


def _write_config_echo(cfg: ExperimentConfig, out: Path) -> None:
    with open(out / "config.json", "w") as fh:
        json.dump({"hash": cfg.hash, "config": cfg.raw}, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# --- scaling benchmark ------------------------------------------------------------


@dataclass
class BenchmarkResult:
    rows: List[Dict[str, Any]]
    slopes: Dict[str, float]

    def save(self, path) -> None:
        _write_csv(path, ("solver", "M", "N", "MN", "median_iter_s"), self.rows)


def benchmark_scaling(sizes: Sequence[Tuple[int, int]], solvers=("pgd", "admm", "nonconvex"),
                      iterations: int = 20, repeats: int = 3, seed: int = 0,
                      lam: float = 0.2) -> BenchmarkResult:
    """Median per-iteration wall time in approximate-gradient mode.

    The backprojection ``G`` is drawn at random, so the one-time adjoint is
    excluded by construction. Every (solver, size) pair is timed ``repeats``
    times with sizes interleaved; each repeat contributes the median over its
    iterations and the smallest of those medians is kept, which filters out
    interference from other processes. The log-log slope against ``M*N``
    comes from a least-squares line fit.
    """
    sizes = [(int(m), int(n)) for m, n in sizes]
    mn = np.array([m * n for m, n in sizes], dtype=float)
    if len(sizes) < 3 or mn.max() < 4 * mn.min():
        raise ValueError("need at least 3 sizes spanning 4x in M*N")
    rng = np.random.default_rng(seed)
    inputs = [rng.random(size) for size in sizes]
    best = {}
    for _ in range(repeats):
        for solver in solvers:
            for size, G in zip(sizes, inputs):
                M, N = size
                cfg = SolverConfig(lam=lam, max_iters=iterations,
                                   k_cardinality=max(1, M * N // 100) if solver == "nonconvex" else None)
                res = solve(solver, None, None, cfg, G=G, stationary_index=M // 2)
                t = float(np.median(res.wall_time))
                key = (solver, size)
                best[key] = min(best.get(key, np.inf), t)
    rows = [{"solver": solver, "M": M, "N": N, "MN": M * N, "median_iter_s": best[(solver, (M, N))]}
            for solver in solvers for (M, N) in sizes]
    slopes = {}
    for solver in solvers:
        t = np.array([r["median_iter_s"] for r in rows if r["solver"] == solver])
        slopes[solver] = float(np.polyfit(np.log(mn), np.log(t), 1)[0])
    return BenchmarkResult(rows, slopes)
