"""Benchmark harness: structure reports, solver sweeps and the phonon-statistics pipeline."""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import analysis
from .fock import TruncationConfig
from .liouvillian import ModelParams, build_system
from .precond import IluConfig
from .reorder import rcm
from .solve import Method, SolverConfig, SolverError, solve_system
from .sparse import (
    ComplexSparseMatrix,
    Permutation,
    StructureMetrics,
    matvec,
    permute_symmetric,
    structure_metrics,
    symmetrized_pattern,
)

log = logging.getLogger(__name__)

SWEEP_VARIABLES = ("detuning", "n_mech", "n_cavity")
MODEL_KEYS = ("delta", "g0", "drive", "kappa", "q_mech", "n_th", "omega_m", "n_cavity", "n_mech")


# ------------------------------------------------------------------ structure


@dataclass(frozen=True)
class StructureReport:
    n_cavity: int
    n_mech: int
    natural: StructureMetrics
    reordered: StructureMetrics

    @property
    def nnz(self) -> int:
        return self.natural.nnz

    @property
    def bandwidth_ratio(self) -> float:
        return self.natural.total_bandwidth / self.reordered.total_bandwidth

    @property
    def profile_ratio(self) -> float:
        return self.natural.total_profile / self.reordered.total_profile

    def format(self) -> str:
        n, r = self.natural, self.reordered
        return "\n".join(
            [
                f"truncation      N_c={self.n_cavity} N_m={self.n_mech}",
                f"NNZ             {self.nnz}",
                f"bandwidth B     natural={n.total_bandwidth} rcm={r.total_bandwidth} "
                f"ratio={self.bandwidth_ratio:.3f}",
                f"profile P       natural={n.total_profile} rcm={r.total_profile} "
                f"ratio={self.profile_ratio:.3f}",
                f"B lower/upper   natural={n.lower_bandwidth}/{n.upper_bandwidth} "
                f"rcm={r.lower_bandwidth}/{r.upper_bandwidth}",
            ]
        )

    def as_dict(self) -> dict:
        return {
            "n_cavity": self.n_cavity,
            "n_mech": self.n_mech,
            "nnz": self.nnz,
            "natural": asdict(self.natural),
            "rcm": asdict(self.reordered),
            "bandwidth_ratio": self.bandwidth_ratio,
            "profile_ratio": self.profile_ratio,
        }


def _write_pattern(path: Path, a: ComplexSparseMatrix) -> None:
    rows, cols, _ = a.to_coo()
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["row", "col"])
        out.writerows(zip(rows.tolist(), cols.tolist()))


def run_structure_report(p: ModelParams, pattern_dir: str | os.PathLike | None = None) -> StructureReport:
    """NNZ, bandwidth and profile of ``L~`` in natural and RCM order.

    With ``pattern_dir`` the two sparsity patterns are also written as
    ``row,col`` coordinate lists for plotting.
    """
    system = build_system(p)
    a = system.constrained
    perm = rcm(symmetrized_pattern(a))
    ap = permute_symmetric(a, perm)
    report = StructureReport(p.trunc.n_cavity, p.trunc.n_mech, structure_metrics(a), structure_metrics(ap))
    if pattern_dir is not None:
        d = Path(pattern_dir)
        d.mkdir(parents=True, exist_ok=True)
        tag = f"nc{p.trunc.n_cavity}_nm{p.trunc.n_mech}"
        _write_pattern(d / f"pattern_natural_{tag}.csv", a)
        _write_pattern(d / f"pattern_rcm_{tag}.csv", ap)
    return report


# ---------------------------------------------------------------------- sweep


@dataclass(frozen=True)
class MethodSpec:
    """A solver configuration with a row label and optional model overrides (e.g. ``n_th``)."""

    solver: SolverConfig
    label: str = ""
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.label:
            object.__setattr__(self, "label", self.solver.method.value)
        bad = set(self.overrides) - set(MODEL_KEYS)
        if bad:
            raise ValueError(f"unknown model override(s): {sorted(bad)}")


@dataclass(frozen=True)
class SweepConfig:
    model: ModelParams
    sweep_variable: str
    sweep_values: tuple
    methods: tuple
    ilu: IluConfig = field(default_factory=IluConfig)
    repetitions: int = 3
    output_path: str | None = None
    parallel: int = 1

    def __post_init__(self):
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ValueError(f"sweep_variable must be one of {SWEEP_VARIABLES}")
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        if not self.sweep_values:
            raise ValueError("sweep_values must be nonempty")
        methods = tuple(m if isinstance(m, MethodSpec) else MethodSpec(m) for m in self.methods)
        if not methods:
            raise ValueError("at least one method is required")
        labels = [m.label for m in methods]
        if len(set(labels)) != len(labels):
            raise ValueError(f"method labels must be unique: {labels}")
        object.__setattr__(self, "methods", methods)
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.parallel < 1:
            raise ValueError("parallel must be >= 1")

    def model_at(self, value, spec: MethodSpec | None = None) -> ModelParams:
        if self.sweep_variable == "detuning":
            p = self.model.with_(delta=float(value))
        else:
            p = self.model.with_(**{self.sweep_variable: int(value)})
        if spec is not None and spec.overrides:
            p = p.with_(**spec.overrides)
        return p


@dataclass
class BenchRecord:
    sweep_value: float
    method: str
    fill_factor: float = math.nan
    iterations: int = 0
    condest: float = math.nan
    wall_time: float = math.nan
    ordering_time: float = math.nan
    speedup_vs_direct: float | None = None
    converged: bool = False
    residual_norm: float = math.nan
    bandwidth_before: int = 0
    bandwidth_after: int = 0
    profile_before: int = 0
    profile_after: int = 0
    nnz: int = 0
    error: str = ""


CSV_COLUMNS = tuple(f.name for f in fields(BenchRecord))
TIMING_COLUMNS = ("wall_time", "ordering_time", "speedup_vs_direct")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_records(stream, records: list[BenchRecord]) -> None:
    out = csv.writer(stream)
    out.writerow(CSV_COLUMNS)
    for r in records:
        out.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def write_records_csv(path, records: list[BenchRecord]) -> None:
    with open(path, "w", newline="") as fh:
        write_records(fh, records)


def read_records_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _verify_residual(a: ComplexSparseMatrix, b: np.ndarray, x: np.ndarray) -> float:
    return float(np.linalg.norm(matvec(a, x) - b) / np.linalg.norm(b))


def run_point(cfg: SweepConfig, value, spec: MethodSpec) -> BenchRecord:
    """One sweep value with one method; failures become non-converged rows."""
    rec = BenchRecord(sweep_value=float(value), method=spec.label)
    try:
        p = cfg.model_at(value, spec)
        system = build_system(p)
    except (ValueError, ArithmeticError) as exc:
        rec.error = f"assembly: {exc}"
        return rec
    a = system.constrained
    before = structure_metrics(a)
    rec.nnz = before.nnz
    rec.bandwidth_before = rec.bandwidth_after = before.total_bandwidth
    rec.profile_before = rec.profile_after = before.total_profile
    times, order_times = [], []
    res = None
    try:
        for _ in range(cfg.repetitions):
            res = solve_system(system, spec.solver)
            times.append(res.wall_time)
            order_times.append(res.ordering_time)
    except (SolverError, MemoryError) as exc:
        rec.error = str(exc)
        log.warning("sweep point %s / %s failed: %s", value, spec.label, exc)
        return rec
    if res.permutation is not None:
        after = structure_metrics(permute_symmetric(a, res.permutation))
        rec.bandwidth_after = after.total_bandwidth
        rec.profile_after = after.total_profile
    rec.fill_factor = float(res.fill_factor)
    rec.iterations = int(res.iterations)
    rec.condest = float(res.condest)
    rec.wall_time = float(np.mean(times))
    rec.ordering_time = float(np.mean(order_times))
    rec.residual_norm = _verify_residual(a, system.rhs, res.raw_solution)
    rec.converged = bool(res.converged and rec.residual_norm <= res.tolerance)
    if not rec.converged:
        rec.error = f"residual {rec.residual_norm:.3e} above tolerance {res.tolerance:.3e}"
    return rec


_WARM: set = set()


def warm_up(methods) -> None:
    """Load compiled kernels on a tiny system so the first timed point is fair.

    Runs once per method and process.
    """
    todo = [m for m in methods if m.solver.method not in _WARM]
    if not todo:
        return
    tiny = build_system(ModelParams(-0.5, 0.1, 0.1, 0.5, 10.0, 0.5, TruncationConfig(2, 2)))
    for spec in todo:
        _WARM.add(spec.solver.method)
        try:
            solve_system(tiny, spec.solver)
        except SolverError:
            pass


def _run_value(args) -> list[BenchRecord]:
    cfg, value = args
    warm_up(cfg.methods)
    return [run_point(cfg, value, spec) for spec in cfg.methods]


def _fill_speedups(records: list[BenchRecord], cfg: SweepConfig) -> None:
    direct = [m.label for m in cfg.methods if m.solver.method is Method.DIRECT_LU]
    if not direct:
        return
    base = direct[0]
    by_value: dict[float, dict[str, BenchRecord]] = {}
    for r in records:
        by_value.setdefault(r.sweep_value, {})[r.method] = r
    for rows in by_value.values():
        ref = rows.get(base)
        if ref is None or not ref.converged:
            continue
        for r in rows.values():
            if r.converged and r.wall_time > 0:
                r.speedup_vs_direct = ref.wall_time / r.wall_time


def run_sweep(cfg: SweepConfig, output_path=None) -> list[BenchRecord]:
    """Run every sweep value with every method and write the CSV.

    Rows are ordered by sweep value, then by method as configured, whether
    or not the points ran in parallel.
    """
    jobs = [(cfg, v) for v in cfg.sweep_values]
    if cfg.parallel > 1:
        with ProcessPoolExecutor(max_workers=cfg.parallel) as pool:
            chunks = list(pool.map(_run_value, jobs))
    else:
        chunks = [_run_value(j) for j in jobs]
    records = [r for chunk in chunks for r in chunk]
    _fill_speedups(records, cfg)
    path = output_path or cfg.output_path
    if path:
        write_records_csv(path, records)
    return records


# ------------------------------------------------------------------- figure 5


@dataclass(frozen=True)
class Figure5Report:
    distribution: analysis.PhononDistribution
    cycles: list
    wigner: analysis.WignerGrid
    fano: float
    negativity: float
    converged: bool
    residual_norm: float
    iterations: int

    def as_dict(self) -> dict:
        return {
            "mean_phonons": self.distribution.mean,
            "fano": self.fano,
            "negativity": self.negativity,
            "wigner_integral": self.wigner.integral,
            "wigner_coarse": bool(self.wigner.coarse),
            "converged": bool(self.converged),
            "residual_norm": float(self.residual_norm),
            "iterations": int(self.iterations),
            "limit_cycles": [
                {"start": c.start, "stop": c.stop, "weight": c.weight, "mean": c.mean, "fano": c.fano}
                for c in self.cycles
            ],
        }


def run_figure5(
    p: ModelParams,
    solver: SolverConfig = SolverConfig(),
    grid_points: int = 201,
    out_dir: str | os.PathLike | None = None,
    segment_floor: float = 1e-8,
    smooth_window: int = 3,
    permutation: Permutation | None = None,
) -> Figure5Report:
    """Mechanical Wigner function, phonon distribution and limit-cycle fits.

    Solver failures propagate.  With ``out_dir``, writes ``wigner.csv``,
    ``distribution.csv`` and ``summary.json``.
    """
    system = build_system(p)
    res = solve_system(system, solver, permutation)
    rho_m = analysis.partial_trace_mech(res.rho, p.trunc)
    dist = analysis.PhononDistribution.from_density_matrix(rho_m)
    cycles = analysis.fit_limit_cycles(dist, segment_floor, smooth_window)
    axis = analysis.default_axis(dist.mean, grid_points)
    w = analysis.wigner(rho_m, axis, axis)
    total_fano = dist.variance / dist.mean if dist.mean > 0 else math.nan
    report = Figure5Report(dist, cycles, w, total_fano, w.negative_fraction, res.converged, res.residual_norm, res.iterations)
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        analysis.write_wigner_csv(d / "wigner.csv", w)
        analysis.write_distribution_csv(d / "distribution.csv", dist, cycles)
        (d / "summary.json").write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    return report


# --------------------------------------------------------------------- config


def parse_values(text: str) -> list[float]:
    """``"a, b, c"`` or ``"linspace(start, stop, count)"``."""
    text = text.strip()
    if text.startswith("linspace(") and text.endswith(")"):
        parts = [s.strip() for s in text[len("linspace(") : -1].split(",")]
        if len(parts) != 3:
            raise ValueError(f"linspace needs three arguments: {text!r}")
        return np.linspace(float(parts[0]), float(parts[1]), int(parts[2])).tolist()
    vals = [float(s) for s in text.replace("\n", ",").split(",") if s.strip()]
    if not vals:
        raise ValueError("empty value list")
    return vals


DEFAULT_MODEL = dict(delta=-1.0, g0=0.5, drive=0.1, kappa=0.2, q_mech=1e4, n_th=3.0, omega_m=1.0, n_cavity=4, n_mech=40)


def model_from_mapping(m) -> ModelParams:
    vals = dict(DEFAULT_MODEL)
    for k, v in m.items():
        if k not in MODEL_KEYS:
            raise ValueError(f"unknown model key {k!r}")
        vals[k] = v
    trunc = TruncationConfig(int(vals.pop("n_cavity")), int(vals.pop("n_mech")))
    return ModelParams(trunc=trunc, **{k: float(v) for k, v in vals.items()})


_ILU_KEYS = {"drop_tol": float, "fill_factor": float, "pivot_threshold": float}
_SOLVER_KEYS = {"restart": int, "max_iterations": int, "tolerance": float, "ordering": str, "shift": complex}


def _typed(section, spec) -> dict:
    return {k: spec[k](section[k]) for k in spec if k in section}


def solver_from_sections(method: str, base: dict, ilu: IluConfig, sect=None) -> SolverConfig:
    kw = dict(base)
    ilu_kw = {}
    if sect is not None:
        kw.update(_typed(sect, _SOLVER_KEYS))
        ilu_kw = _typed(sect, _ILU_KEYS)
    return SolverConfig(method=Method(method), ilu=replace(ilu, **ilu_kw), **kw)


@dataclass
class RunConfig:
    """Everything a config file can describe."""

    model: ModelParams
    ilu: IluConfig
    solver: dict
    methods: list
    sweep_variable: str = "detuning"
    sweep_values: list = field(default_factory=list)
    repetitions: int = 3
    output: str | None = None
    figure5: dict = field(default_factory=dict)

    def sweep(self, **changes) -> SweepConfig:
        kw = dict(
            model=self.model,
            sweep_variable=self.sweep_variable,
            sweep_values=self.sweep_values or [self._current_value()],
            methods=self.methods,
            ilu=self.ilu,
            repetitions=self.repetitions,
            output_path=self.output,
        )
        kw.update(changes)
        return SweepConfig(**kw)

    def _current_value(self):
        if self.sweep_variable == "detuning":
            return self.model.delta
        return getattr(self.model.trunc, self.sweep_variable)


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Read an INI-style run description (see README for the grammar)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    if path is not None:
        with open(path) as fh:
            cp.read_file(fh)
    if text is not None:
        cp.read_string(text)
    model = model_from_mapping(dict(cp["model"])) if cp.has_section("model") else model_from_mapping({})
    ilu = IluConfig(**_typed(cp["ilu"], _ILU_KEYS)) if cp.has_section("ilu") else IluConfig()
    solver = _typed(cp["solver"], _SOLVER_KEYS) if cp.has_section("solver") else {}
    methods = []
    for name in cp.sections():
        if not name.startswith("method."):
            continue
        sect = cp[name]
        label = name[len("method.") :]
        overrides = {k: float(sect[k]) for k in MODEL_KEYS if k in sect}
        methods.append(MethodSpec(solver_from_sections(sect.get("method", label), solver, ilu, sect), label, overrides))
    sw = cp["sweep"] if cp.has_section("sweep") else {}
    if not methods:
        names = [s.strip() for s in sw.get("methods", Method.GMRES_ILU_RCM.value).split(",") if s.strip()]
        methods = [MethodSpec(solver_from_sections(n, solver, ilu)) for n in names]
    fig5 = {}
    if cp.has_section("figure5"):
        f = cp["figure5"]
        fig5 = {
            "grid_points": int(f.get("grid_points", 201)),
            "segment_floor": float(f.get("segment_floor", 1e-8)),
            "smooth_window": int(f.get("smooth_window", 3)),
        }
    return RunConfig(
        model=model,
        ilu=ilu,
        solver=solver,
        methods=methods,
        sweep_variable=sw.get("variable", "detuning"),
        sweep_values=parse_values(sw["values"]) if "values" in sw else [],
        repetitions=int(sw.get("repetitions", 3)),
        output=sw.get("output"),
        figure5=fig5,
    )
