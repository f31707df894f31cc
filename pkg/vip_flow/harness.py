"""
Benchmark harness: manufactured-solution convergence, stability and inf-sup
studies, the Kovasznay table and the lid-driven cavity run.

Each study returns plain dataclasses; writing files is left to the callers
(``write_*`` helpers at the end of this module).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assembly import BoundaryCondition, FlowField, assemble_interpolation
from .builders import AssemblyConfig, ProblemBuilder, SolverConfig, StokesProblem
from .errors import VipError
from .io import GhiaTable, load_ghia, write_csv
from .models import KovasznayParams, RunConfig
from .navier_stokes import (
    PicardTrace,
    cavity_problem,
    kovasznay_field,
    kovasznay_problem,
    picard_solve,
)
from .postprocess import (
    FieldSamples,
    compute_streamfunction,
    extract_centerline,
    sample_fields,
    scaled_norm,
)
from .solver import FactorizationCache, InfSupEstimate, estimate_infsup, solve_stokes

logger = logging.getLogger(__name__)

ORDER_FLOOR = 1e-13
TWO_PI = 2.0 * math.pi

Field2 = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]
Field1 = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ManufacturedSolution:
    """Analytic (v, q) with the forcing -Lap v + grad q that produces it."""

    name: str
    velocity: Field2
    pressure: Field1
    forcing: Field2


def _periodic_velocity(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # v = (d psi/dy, -d psi/dx) with psi = sin(2 pi x) sin(2 pi y)
    return (
        TWO_PI * np.sin(TWO_PI * x) * np.cos(TWO_PI * y),
        -TWO_PI * np.cos(TWO_PI * x) * np.sin(TWO_PI * y),
    )


def _periodic_forcing(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    u, v = _periodic_velocity(x, y)
    k2 = 2.0 * TWO_PI**2
    return k2 * u - TWO_PI * np.sin(TWO_PI * x), k2 * v


PERIODIC_STOKES = ManufacturedSolution(
    name="periodic-trig",
    velocity=_periodic_velocity,
    pressure=lambda x, y: np.cos(TWO_PI * x),
    forcing=_periodic_forcing,
)

POLYNOMIAL_STOKES = ManufacturedSolution(
    name="polynomial",
    velocity=lambda x, y: (x**2, -2.0 * x * y),
    pressure=lambda x, y: x + y,
    forcing=lambda x, y: (-np.ones_like(x), np.ones_like(x)),
)


@dataclass
class ErrorRecord:
    h: float
    e_DU: float = math.nan
    e_P: float = math.nan
    e_U: float = math.nan
    order_DU: Optional[float] = None
    order_P: Optional[float] = None
    order_U: Optional[float] = None
    residual: float = math.nan
    failed: bool = False
    message: str = ""

    def csv_row(self) -> List[Optional[float]]:
        return [self.h, self.e_DU, self.e_P, self.e_U, self.order_DU, self.order_P]


ERRORS_HEADER = ["h", "e_DU", "e_P", "e_U", "order_DU", "order_P"]


@dataclass
class ConvergenceTable:
    solution: str
    records: List[ErrorRecord]

    @property
    def partial(self) -> bool:
        return any(record.failed for record in self.records)

    def summary(self) -> Dict[str, Optional[float]]:
        done = [r for r in self.records if not r.failed]
        orders_du = [r.order_DU for r in done if r.order_DU is not None]
        orders_p = [r.order_P for r in done if r.order_P is not None]
        return {
            "levels": len(self.records),
            "min_order_DU": min(orders_du) if orders_du else None,
            "min_order_P": min(orders_p) if orders_p else None,
            "finest_e_DU": done[-1].e_DU if done else None,
            "finest_e_P": done[-1].e_P if done else None,
        }


def observed_order(coarse: float, fine: float, h_coarse: float, h_fine: float) -> Optional[float]:
    """log(e_coarse / e_fine) / log(h_coarse / h_fine); None near round-off."""
    if coarse <= ORDER_FLOOR or fine <= ORDER_FLOOR or h_coarse == h_fine:
        return None
    return math.log(coarse / fine) / math.log(h_coarse / h_fine)


def fill_orders(records: Sequence[ErrorRecord]) -> None:
    for prev, rec in zip(records, records[1:]):
        if prev.failed or rec.failed:
            continue
        rec.order_DU = observed_order(prev.e_DU, rec.e_DU, prev.h, rec.h)
        rec.order_P = observed_order(prev.e_P, rec.e_P, prev.h, rec.h)
        rec.order_U = observed_order(prev.e_U, rec.e_U, prev.h, rec.h)


def assembly_config(config: RunConfig, viscosity: float = 1.0) -> AssemblyConfig:
    return AssemblyConfig(
        laplacian_mode=config.laplacian_mode,
        gradient_mode=config.assembly.gradient_mode,
        viscosity=viscosity,
    )


def solver_config(config: RunConfig) -> SolverConfig:
    section = config.solver
    return SolverConfig(
        method=section.method,
        tol=section.tol,
        dense_limit=section.dense_limit,
        max_iter=section.max_iter,
    )


def build_problem(
    config: RunConfig,
    h: float,
    boundary: Optional[BoundaryCondition] = None,
    forcing=None,
    check_realization: bool = True,
) -> StokesProblem:
    """Problem for one spacing from the discretization and assembly sections."""
    disc = config.discretization
    builder = (
        ProblemBuilder()
        .with_domain(config.domain)
        .with_spacing(h)
        .with_degree(disc.m)
        .with_dilation(disc.dilation)
        .with_perturbation(disc.perturbation, disc.seed)
        .with_layout(disc.layout)
        .with_assembly(assembly_config(config))
    )
    if disc.nodes_file is not None:
        builder = builder.with_nodes_from_file(disc.nodes_file)
    if boundary is not None:
        builder = builder.with_boundary(boundary)
    if forcing is not None:
        builder = builder.with_forcing(forcing)
    if not check_realization:
        builder = builder.without_realization_check()
    return builder.build()


def manufactured_for(config: RunConfig) -> ManufacturedSolution:
    return POLYNOMIAL_STOKES if config.problem.kind == "stokes-polynomial" else PERIODIC_STOKES


def discretization_errors(
    problem: StokesProblem, computed: FlowField, solution: ManufacturedSolution
) -> Tuple[float, float, float]:
    """
    Scaled errors against nodal samples of the truth.

    e_DU = h |D(U - v(x_I))|, e_P = h |Psi_T(P - q(x_I))| after removing the
    pressure modes with D P = 0 (the constants among them) from the
    difference, e_U = h |Psi_T(U - v(x_I))|.
    """
    system = problem.system
    h = problem.h
    truth = FlowField.sample(problem.nodes, solution.velocity, solution.pressure)
    diff_u = computed.u - truth.u
    diff_v = computed.v - truth.v
    grad = system.velocity_grad
    e_du = scaled_norm(np.concatenate([grad @ diff_u, grad @ diff_v]), h)

    interp = assemble_interpolation(problem.kernel, problem.grid.points)
    modes = system.pressure_modes()
    p_diff = computed.P - truth.P
    p_diff = p_diff - modes @ (modes.T @ p_diff)
    e_p = scaled_norm(interp @ p_diff, h)
    e_u = scaled_norm(np.concatenate([interp @ diff_u, interp @ diff_v]), h)
    return e_du, e_p, e_u


def _convergence_level(
    config: RunConfig,
    h: float,
    solution: ManufacturedSolution,
    cache: Optional[FactorizationCache],
) -> ErrorRecord:
    boundary = None
    if not config.domain.fully_periodic:
        boundary = BoundaryCondition(velocity=solution.velocity, name=solution.name)
    problem = build_problem(config, h, boundary=boundary, forcing=solution.forcing)
    computed, report = solve_stokes(
        problem.system, solution.forcing, solver_config(config), cache=cache
    )
    e_du, e_p, e_u = discretization_errors(problem, computed, solution)
    logger.info(
        "Convergence level done",
        extra={"h": h, "e_DU": e_du, "e_P": e_p, "e_U": e_u},
    )
    return ErrorRecord(h=h, e_DU=e_du, e_P=e_p, e_U=e_u, residual=report.residual_norm)


def _run_levels(
    h_values: Sequence[float],
    task: Callable[[float], object],
    workers: int,
    prefix: str,
) -> List[object]:
    """Run one task per spacing, possibly concurrently, results in h order."""
    if workers <= 1 or len(h_values) <= 1:
        return [task(h) for h in h_values]
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix=prefix) as pool:
        futures = [pool.submit(task, h) for h in h_values]
        return [future.result() for future in futures]


def run_convergence_study(
    config: RunConfig,
    solution: Optional[ManufacturedSolution] = None,
    cache: Optional[FactorizationCache] = None,
) -> ConvergenceTable:
    """
    Errors and observed orders over config.discretization.h (coarse to fine).

    A failing level is recorded as failed together with every finer level,
    and the table is flagged partial.
    """
    solution = solution or manufactured_for(config)
    h_values = config.discretization.h

    def task(h: float) -> ErrorRecord:
        try:
            return _convergence_level(config, h, solution, cache)
        except VipError as exc:
            logger.error("Convergence level failed", extra={"h": h, "error": exc.to_dict()})
            return ErrorRecord(h=h, failed=True, message=str(exc))

    records: List[ErrorRecord] = list(
        _run_levels(h_values, task, config.solver.workers, "vip_converge")
    )
    first_failure = next((i for i, r in enumerate(records) if r.failed), None)
    if first_failure is not None:
        for rec in records[first_failure + 1:]:
            rec.failed = True
            rec.message = rec.message or "skipped after a coarser level failed"
    fill_orders(records)
    return ConvergenceTable(solution=solution.name, records=records)


# Stability

_STABILITY_MODES = ((1, 0), (0, 1), (1, 1), (2, 1), (1, 2), (2, 2))
_TRIG = (np.sin, np.cos)


def random_smooth_forcing(seed: Sequence[int]) -> Field2:
    """Random coefficients on fixed low-wavenumber trigonometric modes."""
    rng = np.random.default_rng(list(seed))
    coefficients = rng.standard_normal((2, len(_STABILITY_MODES), 2, 2))

    def forcing(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        out = [np.zeros_like(x), np.zeros_like(x)]
        for comp in range(2):
            for mode, (k, l) in enumerate(_STABILITY_MODES):
                for a, fx in enumerate(_TRIG):
                    for b, fy in enumerate(_TRIG):
                        c = coefficients[comp, mode, a, b]
                        out[comp] = out[comp] + c * fx(TWO_PI * k * x) * fy(TWO_PI * l * y)
        return out[0], out[1]

    return forcing


@dataclass
class StabilityRecord:
    h: float
    ratios: List[float]

    @property
    def max_ratio(self) -> float:
        return max(self.ratios)

    @property
    def min_ratio(self) -> float:
        return min(self.ratios)

    @property
    def spread(self) -> float:
        return self.max_ratio / self.min_ratio


def stability_ratio(problem: StokesProblem, computed: FlowField, forcing_values: np.ndarray) -> float:
    """(|DU| + |P|) / |F|."""
    grad = problem.system.velocity_grad
    du = np.concatenate([grad @ computed.u, grad @ computed.v])
    return float(
        (np.linalg.norm(du) + np.linalg.norm(computed.P)) / np.linalg.norm(forcing_values)
    )


def run_stability_study(
    config: RunConfig,
    h_values: Optional[Sequence[float]] = None,
    samples: Optional[int] = None,
    cache: Optional[FactorizationCache] = None,
) -> List[StabilityRecord]:
    """Stability ratio over random smooth forcings, same draws at every h."""
    h_values = list(h_values or config.discretization.h)
    samples = samples or config.solver.samples
    seed = config.discretization.seed
    if cache is None:
        cache = FactorizationCache(max_size=1)
    forcings = [random_smooth_forcing((seed, s)) for s in range(samples)]

    records = []
    for h in h_values:
        problem = build_problem(config, h)
        pts = problem.grid.points
        ratios = []
        for forcing in forcings:
            fx, fy = forcing(pts[:, 0], pts[:, 1])
            values = np.concatenate([fx, fy])
            computed, _ = solve_stokes(
                problem.system, values, solver_config(config), cache=cache
            )
            ratios.append(stability_ratio(problem, computed, values))
        record = StabilityRecord(h=h, ratios=ratios)
        logger.info(
            "Stability level done",
            extra={"h": h, "max_ratio": record.max_ratio, "min_ratio": record.min_ratio},
        )
        records.append(record)
    return records


def run_infsup_study(config: RunConfig, h_values: Optional[Sequence[float]] = None) -> List[InfSupEstimate]:
    h_values = list(h_values or config.discretization.h)

    def task(h: float) -> InfSupEstimate:
        return estimate_infsup(build_problem(config, h).system)

    return list(_run_levels(h_values, task, config.solver.workers, "vip_infsup"))


# Navier-Stokes benchmarks


@dataclass
class KovasznayRecord:
    h: float
    e_U_rel: float
    e_P: float
    iterations: int
    order_U: Optional[float] = None
    trace: Optional[PicardTrace] = None

    def csv_row(self) -> List[Optional[float]]:
        return [self.h, self.e_U_rel, self.e_P, self.order_U, self.iterations]


KOVASZNAY_HEADER = ["h", "e_U_rel", "e_P", "order_U", "iterations"]


def kovasznay_errors(
    problem: StokesProblem, computed: FlowField, params: KovasznayParams
) -> Tuple[float, float]:
    """Relative l2 velocity error and mean-aligned scaled pressure error at T."""
    pts = problem.grid.points
    u_t, v_t, p_t = kovasznay_field(params, pts[:, 0], pts[:, 1])
    interp = assemble_interpolation(problem.kernel, pts)
    u_h, v_h, p_h = interp @ computed.u, interp @ computed.v, interp @ computed.P
    e_u = float(
        np.linalg.norm(np.concatenate([u_h - u_t, v_h - v_t]))
        / np.linalg.norm(np.concatenate([u_t, v_t]))
    )
    e_p = scaled_norm((p_h - p_h.mean()) - (p_t - p_t.mean()), problem.h)
    return e_u, e_p


def run_kovasznay_study(config: RunConfig) -> List[KovasznayRecord]:
    params = KovasznayParams(Re=config.problem.Re)
    picard = config.picard_config
    disc = config.discretization
    records: List[KovasznayRecord] = []
    for h in disc.h:
        problem = kovasznay_problem(
            h,
            params,
            degree=disc.m,
            dilation=disc.dilation,
            perturbation=disc.perturbation,
            seed=disc.seed,
            domain=config.domain,
        )
        computed, trace = picard_solve(
            problem.system, picard, solver_config=solver_config(config)
        )
        e_u, e_p = kovasznay_errors(problem, computed, params)
        record = KovasznayRecord(h=h, e_U_rel=e_u, e_P=e_p, iterations=trace.iterations, trace=trace)
        if records:
            record.order_U = observed_order(records[-1].e_U_rel, e_u, records[-1].h, h)
        logger.info(
            "Kovasznay level done",
            extra={"h": h, "e_U_rel": e_u, "e_P": e_p, "iterations": trace.iterations},
        )
        records.append(record)
    return records


@dataclass
class CavityResult:
    h: float
    Re: float
    flow: FlowField
    trace: PicardTrace
    centerline_u: List[Tuple[float, float]]
    centerline_v: List[Tuple[float, float]]
    comparison: List[Tuple[str, float, float, float, float]] = field(default_factory=list)
    samples: Optional[FieldSamples] = None

    @property
    def max_deviation_u(self) -> Optional[float]:
        devs = [row[4] for row in self.comparison if row[0] == "u"]
        return max(devs) if devs else None

    @property
    def max_deviation_v(self) -> Optional[float]:
        devs = [row[4] for row in self.comparison if row[0] == "v"]
        return max(devs) if devs else None


def compare_with_ghia(
    field_: FlowField,
    kernel,
    ghia: GhiaTable,
    Re: int,
) -> List[Tuple[str, float, float, float, float]]:
    """(component, coord, computed, reference, |deviation|) at the reference points."""
    rows = []
    for component, line, coords, reference in (
        ("u", "vertical", ghia.y, ghia.u.get(Re)),
        ("v", "horizontal", ghia.x, ghia.v.get(Re)),
    ):
        if reference is None:
            continue
        pts = np.column_stack(
            [np.full_like(coords, 0.5), coords] if line == "vertical" else [coords, np.full_like(coords, 0.5)]
        )
        interp = assemble_interpolation(kernel, pts)
        values = interp @ (field_.u if component == "u" else field_.v)
        for coord, computed, ref in zip(coords, values, reference):
            rows.append((component, float(coord), float(computed), float(ref), abs(float(computed) - float(ref))))
    return rows


def run_cavity(config: RunConfig, h: Optional[float] = None, ghia: Optional[GhiaTable] = None) -> CavityResult:
    """Lid-driven cavity at the finest configured spacing."""
    h = h or min(config.discretization.h)
    picard = config.picard_config
    problem = cavity_problem(
        h,
        degree=config.discretization.m,
        dilation=config.discretization.dilation,
        regularized=config.assembly.regularized_lid,
    )
    computed, trace = picard_solve(problem.system, picard, solver_config=solver_config(config))
    samples = config.output.centerline_samples
    kernel = problem.kernel
    result = CavityResult(
        h=h,
        Re=picard.Re,
        flow=computed,
        trace=trace,
        centerline_u=extract_centerline(computed, kernel, "vertical", 0.5, samples, "u"),
        centerline_v=extract_centerline(computed, kernel, "horizontal", 0.5, samples, "v"),
    )
    if ghia is None:
        ghia = load_ghia(config.output.ghia_file)
    re_key = int(round(picard.Re))
    if re_key in ghia.reynolds_numbers:
        result.comparison = compare_with_ghia(computed, kernel, ghia, re_key)
    else:
        logger.warning("No reference data for this Reynolds number", extra={"Re": picard.Re})
    psi = compute_streamfunction(computed, kernel, problem.grid)
    result.samples = sample_fields(computed, kernel, config.output.field_samples, psi)
    logger.info(
        "Cavity run done",
        extra={"h": h, "Re": picard.Re, "iterations": trace.iterations, "max_dev_u": result.max_deviation_u},
    )
    return result


# Writers


def write_errors(table: ConvergenceTable, directory: Path) -> Path:
    return write_csv(directory / "errors.csv", ERRORS_HEADER, [r.csv_row() for r in table.records])


def write_infsup(estimates: Sequence[InfSupEstimate], directory: Path) -> Path:
    return write_csv(directory / "infsup.csv", ["h", "mu"], [[e.h, e.mu] for e in estimates])


def write_stability(records: Sequence[StabilityRecord], directory: Path) -> Path:
    rows = [[r.h, s, ratio] for r in records for s, ratio in enumerate(r.ratios)]
    return write_csv(directory / "stability.csv", ["h", "sample", "ratio"], rows)


def write_kovasznay(records: Sequence[KovasznayRecord], directory: Path) -> Path:
    return write_csv(directory / "kovasznay.csv", KOVASZNAY_HEADER, [r.csv_row() for r in records])


def write_cavity(result: CavityResult, directory: Path) -> List[Path]:
    paths = [
        write_csv(directory / "centerline_u.csv", ["y", "u"], result.centerline_u),
        write_csv(directory / "centerline_v.csv", ["x", "v"], result.centerline_v),
    ]
    if result.comparison:
        paths.append(
            write_csv(
                directory / "ghia_comparison.csv",
                ["component", "coord", "computed", "reference", "deviation"],
                result.comparison,
            )
        )
    if result.samples is not None:
        paths.append(
            write_csv(
                directory / "fields.csv",
                ["x", "y", "u", "v", "p", "vorticity", "streamfunction"],
                result.samples.rows(),
            )
        )
    return paths
