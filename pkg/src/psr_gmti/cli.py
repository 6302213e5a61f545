"""``psr-gmti`` command line: run experiments, time solvers, render matrices."""

from __future__ import annotations

import argparse
import ast
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from . import harness
from .psr import moving_image, project_moving, stationary_image
from .solvers import SOLVERS, SolverConfig


def _parse_value(text: str):
    """TOML-ish scalar: numbers, booleans, quoted or bare strings, lists."""
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _solver_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("solver settings (override [solver])")
    for f in fields(SolverConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "lam":
            group.add_argument("--lam", "--lambda", dest="lam", type=float, default=None)
        elif f.type in ("bool", bool):
            group.add_argument(flag, dest=f.name, type=_parse_value, default=None, metavar="BOOL")
        elif f.name in ("gradient_mode", "threshold_convention"):
            group.add_argument(flag, dest=f.name, default=None)
        elif f.name in ("max_iters", "check_every", "cg_maxiter", "k_cardinality"):
            group.add_argument(flag, dest=f.name, type=int, default=None)
        else:
            group.add_argument(flag, dest=f.name, type=float, default=None)


def _sizes(text: str):
    """``"49x4096,49x8192"`` -> ``[(49, 4096), (49, 8192)]``."""
    out = []
    for part in text.split(","):
        m, _, n = part.strip().lower().partition("x")
        out.append((int(m), int(n)))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="psr-gmti", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", type=Path)
    run.add_argument("--seed", type=int)
    run.add_argument("--solver", choices=SOLVERS)
    run.add_argument("--out", type=Path, help="output directory")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override any config key, e.g. sweep.realizations=2")
    _solver_flags(run)

    bench = sub.add_parser("bench", help="per-iteration scaling benchmark")
    bench.add_argument("sizes", type=_sizes, help="comma-separated MxN list, e.g. 49x4096,49x8192,49x16384")
    bench.add_argument("--solvers", default="pgd,admm,nonconvex")
    bench.add_argument("--iterations", type=int, default=20)
    bench.add_argument("--repeats", type=int, default=3)
    bench.add_argument("--out", type=Path, default=Path("bench.csv"))

    ren = sub.add_parser("render", help="log-scale PGM of a matrix file (CSV or flat binary)")
    ren.add_argument("matrix", type=Path)
    ren.add_argument("--out", type=Path)
    ren.add_argument("--floor-db", type=float, default=-40.0)
    ren.add_argument("--view", choices=("matrix", "moving", "stationary"), default="matrix",
                     help="render the matrix itself, or the moving/stationary image of a PSR matrix")
    ren.add_argument("--shape", type=lambda s: tuple(int(v) for v in s.lower().split("x")),
                     metavar="ROWSxCOLS", help="image shape for the moving/stationary views")
    ren.add_argument("--stationary-index", type=int)
    return p


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = _parse_value(value)
    if args.seed is not None:
        out["seed"] = args.seed
    if args.solver is not None:
        out["solver.name"] = args.solver
    if args.out is not None:
        out["output.directory"] = str(args.out)
    for f in fields(SolverConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            out["solver." + f.name] = v
    return out


def cmd_run(args) -> int:
    try:
        cfg = harness.load_config(args.config, _overrides(args))
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    record = harness.run_experiment(cfg)
    print(f"config {record.config_hash} -> {record.output_dir}")
    for row in record.aggregates:
        print(f"  {row['sweep_var']}={row['value_db']:g}: ssim={row['ssim']:.4f} "
              f"ppv={row['ppv']:.3f} fp={row['fp']:g} fn={row['fn']:g}")
    return 0


def cmd_bench(args) -> int:
    solvers = tuple(s.strip() for s in args.solvers.split(",") if s.strip())
    result = harness.benchmark_scaling(args.sizes, solvers, args.iterations, args.repeats)
    result.save(args.out)
    for name, slope in result.slopes.items():
        print(f"{name}: log-log slope {slope:.3f}")
    return 0


def cmd_render(args) -> int:
    mat = harness.load_matrix(args.matrix)
    if args.view != "matrix":
        if args.shape is None:
            raise SystemExit("--shape is required for the moving/stationary views")
        vs = args.stationary_index if args.stationary_index is not None else mat.shape[0] // 2
        mat = (moving_image(project_moving(mat, vs)) if args.view == "moving"
               else stationary_image(mat, vs))
        mat = mat.reshape(args.shape)
    elif mat.ndim == 1:
        mat = mat.reshape(1, -1)
    img = harness.render_image(mat, args.floor_db)
    out = args.out or args.matrix.with_suffix(".pgm")
    harness.write_pgm(out, img)
    print(out)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return {"run": cmd_run, "bench": cmd_bench, "render": cmd_render}[args.command](args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
