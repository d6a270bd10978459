"""Command-line entry point: ``optosteady {structure,sweep,figure5,solve}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from .bench import MethodSpec, RunConfig
from .liouvillian import build_system
from .reorder import rcm
from .solve import Method, SolverError, solve_system
from .sparse import Permutation, matrix_market_write, permute_symmetric, symmetrized_pattern

log = logging.getLogger("optosteady")

EXIT_OK = 0
EXIT_FAILED_POINTS = 1
EXIT_USAGE = 2


def read_permutation(path) -> Permutation:
    """JSON ``{"forward": [...]}`` (``forward[old] = new``) or ``{"order": [...]}``."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, list):
        return Permutation(np.asarray(data))
    if "forward" in data:
        return Permutation(np.asarray(data["forward"]))
    if "order" in data:
        return Permutation.from_order(np.asarray(data["order"]))
    raise ValueError(f"{path}: expected a 'forward' or 'order' list")


def write_permutation(path, perm: Permutation) -> None:
    Path(path).write_text(json.dumps({"size": perm.size, "forward": perm.forward.tolist()}) + "\n")


def _export_mm(directory, system, perm: Permutation | None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    matrix_market_write(d / "constrained_natural.mtx", system.constrained, "trace-constrained Liouvillian")
    if perm is not None:
        matrix_market_write(d / "constrained_reordered.mtx", permute_symmetric(system.constrained, perm))
    np.savetxt(d / "rhs.txt", np.column_stack([system.rhs.real, system.rhs.imag]))


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key = key.strip()
        if key not in bench.MODEL_KEYS:
            raise ValueError(f"unknown model key {key!r}")
        out[key] = float(val)
    return out


def _apply_overrides(args, cfg: RunConfig) -> RunConfig:
    changes = _parse_set(args.set)
    if changes:
        cfg.model = cfg.model.with_(**changes)
    ilu_kw = {}
    if args.drop_tol is not None:
        ilu_kw["drop_tol"] = args.drop_tol
    if args.fill is not None:
        ilu_kw["fill_factor"] = args.fill
    if ilu_kw:
        cfg.ilu = replace(cfg.ilu, **ilu_kw)
    solver_kw = {}
    if args.restart is not None:
        solver_kw["restart"] = args.restart
    if args.tol is not None:
        solver_kw["tolerance"] = args.tol
    if args.max_iter is not None:
        solver_kw["max_iterations"] = args.max_iter
    cfg.solver = {**cfg.solver, **solver_kw}
    if args.method:
        names = [s.strip() for s in args.method.split(",") if s.strip()]
        cfg.methods = [MethodSpec(bench.solver_from_sections(n, cfg.solver, cfg.ilu)) for n in names]
    elif solver_kw or ilu_kw:
        cfg.methods = [
            replace(m, solver=replace(m.solver, ilu=replace(m.solver.ilu, **ilu_kw), **solver_kw))
            for m in cfg.methods
        ]
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI-style run description")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a model parameter")
    p.add_argument("--method", help="solver method(s), comma separated: " + ", ".join(m.value for m in Method))
    p.add_argument("--drop-tol", type=float, help="ILU drop tolerance d")
    p.add_argument("--fill", type=float, help="ILU fill factor p")
    p.add_argument("--restart", type=int, help="GMRES restart length")
    p.add_argument("--tol", type=float, help="requested relative residual")
    p.add_argument("--max-iter", type=int, help="GMRES iteration cap")
    p.add_argument("--output", help="output path")
    p.add_argument("--parallel", type=int, default=1, help="worker processes for sweeps (default serial)")
    p.add_argument("--export-mm", metavar="DIR", help="write Matrix Market files of the system")
    p.add_argument("--perm-in", metavar="JSON", help="use this ordering instead of computing one")
    p.add_argument("--perm-out", metavar="JSON", help="write the ordering used")
    p.add_argument("--allow-failures", action="store_true", help="exit 0 even if points failed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="optosteady", description="Sparse steady states of optomechanical systems")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("structure", help="NNZ, bandwidth and profile before and after RCM")
    _add_common(s)
    s.add_argument("--patterns", metavar="DIR", help="dump sparsity patterns as row,col CSV")

    s = sub.add_parser("sweep", help="solver comparison over a parameter sweep")
    _add_common(s)
    s.add_argument("--variable", choices=bench.SWEEP_VARIABLES)
    s.add_argument("--values", help="comma list or linspace(a, b, n)")
    s.add_argument("--repetitions", type=int)

    s = sub.add_parser("figure5", help="mechanical Wigner function and phonon statistics")
    _add_common(s)
    s.add_argument("--grid-points", type=int)
    s.add_argument("--segment-floor", type=float, help="ignore minima below this fraction of the peak")
    s.add_argument("--smooth-window", type=int, help="moving-average width for segmentation (odd)")

    s = sub.add_parser("solve", help="one steady state")
    _add_common(s)
    return ap


def _cmd_structure(args, cfg: RunConfig) -> int:
    report = bench.run_structure_report(cfg.model, args.patterns)
    print(report.format())
    if args.output:
        Path(args.output).write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    if args.export_mm or args.perm_out:
        system = build_system(cfg.model)
        perm = read_permutation(args.perm_in) if args.perm_in else rcm(symmetrized_pattern(system.constrained))
        if args.export_mm:
            _export_mm(args.export_mm, system, perm)
        if args.perm_out:
            write_permutation(args.perm_out, perm)
    return EXIT_OK


def _cmd_sweep(args, cfg: RunConfig) -> int:
    if args.variable:
        cfg.sweep_variable = args.variable
    if args.values:
        cfg.sweep_values = bench.parse_values(args.values)
    if args.repetitions is not None:
        cfg.repetitions = args.repetitions
    if args.perm_in or args.perm_out or args.export_mm:
        log.warning("--perm-in/--perm-out/--export-mm apply to 'solve' and 'structure' only")
    sweep = cfg.sweep(parallel=args.parallel)
    out = args.output or cfg.output
    records = bench.run_sweep(sweep, out)
    if not out:
        bench.write_records(sys.stdout, records)
    failed = [r for r in records if not r.converged]
    for r in failed:
        log.warning("not converged: %s=%s %s %s", sweep.sweep_variable, r.sweep_value, r.method, r.error)
    return EXIT_OK if not failed or args.allow_failures else EXIT_FAILED_POINTS


def _single_solver(cfg: RunConfig):
    if len(cfg.methods) != 1:
        raise ValueError("this command takes exactly one method")
    spec = cfg.methods[0]
    model = cfg.model.with_(**spec.overrides) if spec.overrides else cfg.model
    return model, spec.solver


def _cmd_solve(args, cfg: RunConfig) -> int:
    model, solver = _single_solver(cfg)
    system = build_system(model)
    perm = read_permutation(args.perm_in) if args.perm_in else None
    try:
        res = solve_system(system, solver, perm)
    except SolverError as exc:
        log.error("solve failed at %s", exc)
        return EXIT_OK if args.allow_failures else EXIT_FAILED_POINTS
    if args.export_mm:
        _export_mm(args.export_mm, system, res.permutation)
    if args.perm_out:
        if res.permutation is None:
            log.warning("method %s used no ordering; writing the identity", solver.method.value)
        write_permutation(args.perm_out, res.permutation or Permutation.identity(system.dim))
    summary = {
        "method": res.method.value,
        "converged": bool(res.converged),
        "residual_norm": float(res.residual_norm),
        "tolerance": float(res.tolerance),
        "iterations": int(res.iterations),
        "fill_factor": float(res.fill_factor),
        "condest": float(res.condest),
        "wall_time": float(res.wall_time),
        "ordering_time": float(res.ordering_time),
        "trace": float(np.trace(res.rho).real),
    }
    print(json.dumps(summary, indent=2))
    if args.output:
        if args.output.endswith(".npy"):
            np.save(args.output, res.rho)
        else:
            Path(args.output).write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK if res.converged or args.allow_failures else EXIT_FAILED_POINTS


def _cmd_figure5(args, cfg: RunConfig) -> int:
    model, solver = _single_solver(cfg)
    opts = dict(cfg.figure5)
    if args.grid_points is not None:
        opts["grid_points"] = args.grid_points
    if args.segment_floor is not None:
        opts["segment_floor"] = args.segment_floor
    if args.smooth_window is not None:
        opts["smooth_window"] = args.smooth_window
    perm = read_permutation(args.perm_in) if args.perm_in else None
    try:
        report = bench.run_figure5(model, solver, out_dir=args.output, permutation=perm, **opts)
    except SolverError as exc:
        log.error("solve failed at %s", exc)
        return EXIT_OK if args.allow_failures else EXIT_FAILED_POINTS
    print(json.dumps(report.as_dict(), indent=2))
    return EXIT_OK if report.converged or args.allow_failures else EXIT_FAILED_POINTS


COMMANDS = {"structure": _cmd_structure, "sweep": _cmd_sweep, "solve": _cmd_solve, "figure5": _cmd_figure5}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = bench.load_config(args.config)
        cfg = _apply_overrides(args, cfg)
    except (OSError, ValueError, KeyError) as exc:
        print(f"optosteady: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, cfg)
    except ValueError as exc:
        print(f"optosteady: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
