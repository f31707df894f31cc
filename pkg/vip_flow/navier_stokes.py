"""
Steady Navier-Stokes by Picard (Oseen) iteration on the VIP Stokes core.

Each step solves

    -(1/Re) A u + (w . grad) u + D p = f,   D* u = 0

with w the previous iterate projected to the virtual points, then relaxes
the update. The Stokes solution of the same data is the starting iterate.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .assembly import BoundaryCondition, FlowField, SaddleSystem, assemble_interpolation
from .builders import AssemblyConfig, ProblemBuilder, SolverConfig, StokesProblem
from .errors import NoConvergenceError
from .kernel import DX, DY, MLSRKKernel
from .models import Domain, KovasznayParams, PicardConfig
from .solver import solve_stokes

logger = logging.getLogger(__name__)

# updates below the floor that no longer halve are round-off
STAGNATION_FLOOR = 1e-8
STAGNATION_RATIO = 0.5

KOVASZNAY_DOMAIN = Domain(bounds=((-0.5, 1.5), (0.0, 2.0)), periodic=(False, False))


def kovasznay_field(
    params: KovasznayParams, x: np.ndarray, y: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    lam = params.lam
    ex = np.exp(lam * np.asarray(x, dtype=float))
    two_pi_y = 2.0 * math.pi * np.asarray(y, dtype=float)
    u = 1.0 - ex * np.cos(two_pi_y)
    v = lam / (2.0 * math.pi) * ex * np.sin(two_pi_y)
    p = 0.5 * (1.0 - ex**2)
    return u, v, p


def kovasznay_convection(
    params: KovasznayParams, x: np.ndarray, y: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form (u . grad) u of the Kovasznay field."""
    lam = params.lam
    k = 2.0 * math.pi
    ex = np.exp(lam * np.asarray(x, dtype=float))
    c, s = np.cos(k * np.asarray(y)), np.sin(k * np.asarray(y))
    u, v, _ = kovasznay_field(params, x, y)
    u_x, u_y = -lam * ex * c, k * ex * s
    v_x, v_y = lam**2 / k * ex * s, lam * ex * c
    return u * u_x + v * u_y, u * v_x + v * v_y


class ConvectionOperator:
    """
    Oseen convection rows at fixed evaluation points.

    The shape-function tables are built once; each call only rescales rows
    by the current advecting velocity.
    """

    def __init__(self, kernel: MLSRKKernel, eval_points: np.ndarray):
        table = kernel.table(eval_points, (DX, DY))
        self._dx = table[DX]
        self._dy = table[DY]
        self._interp = assemble_interpolation(kernel, eval_points)
        self.n_nodes = kernel.nodes.size

    def advecting_velocity(self, current: FlowField) -> Tuple[np.ndarray, np.ndarray]:
        return self._interp @ current.u, self._interp @ current.v

    def assemble(self, current: FlowField) -> sp.csr_matrix:
        w1, w2 = self.advecting_velocity(current)
        scalar = sp.diags(w1) @ self._dx + sp.diags(w2) @ self._dy
        return sp.csr_matrix(sp.block_diag([scalar, scalar]))


def assemble_convection(
    kernel: MLSRKKernel, eval_points: np.ndarray, current: FlowField
) -> sp.csr_matrix:
    """(2M, 2N) block applying (Gamma u^k . grad) to each velocity component."""
    return ConvectionOperator(kernel, eval_points).assemble(current)


@dataclass
class PicardTrace:
    updates: List[float] = field(default_factory=list)
    relaxation: List[float] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    continuity: List[float] = field(default_factory=list)
    converged: bool = False
    stagnated: bool = False

    @property
    def iterations(self) -> int:
        return len(self.updates)


def _relative_update(new: FlowField, old: FlowField) -> float:
    scale = max(float(np.linalg.norm(new.U)), 1e-300)
    return float(np.linalg.norm(new.U - old.U)) / scale


def _stagnated(updates: List[float]) -> bool:
    if len(updates) < 2:
        return False
    return updates[-1] <= STAGNATION_FLOOR and updates[-1] >= STAGNATION_RATIO * updates[-2]


def continuity_defect(system: SaddleSystem, flow: FlowField) -> float:
    """|D* U| relative to |U|."""
    scale = max(float(np.linalg.norm(flow.U)), 1e-300)
    return float(np.linalg.norm(system.div @ flow.U)) / scale


def picard_solve(
    system: SaddleSystem,
    config: PicardConfig,
    forcing: Any = None,
    boundary: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    solver_config: Optional[SolverConfig] = None,
    initial: Optional[FlowField] = None,
) -> Tuple[FlowField, PicardTrace]:
    """
    Picard iteration to a steady Navier-Stokes state.

    Stops when the relative update is below config.tol, or when updates under
    1e-8 stop shrinking while the linear solves meet their tolerance. Raises
    NoConvergenceError after config.max_iter steps; the exception carries the
    last iterate and the update history.
    """
    solver_config = dataclasses.replace(
        solver_config or SolverConfig(), cache_enabled=False
    )
    ns_system = system.with_viscosity(1.0 / config.Re)
    convection = ConvectionOperator(system.kernel, system.grid.points)

    if initial is None:
        current, _ = solve_stokes(ns_system, forcing, solver_config, boundary=boundary)
    else:
        current = initial
    trace = PicardTrace()
    omega = config.relaxation

    for iteration in range(1, config.max_iter + 1):
        block = convection.assemble(current)
        candidate, report = solve_stokes(
            ns_system, forcing, solver_config, boundary=boundary, convection=block
        )
        relaxed = current + (candidate - current).scaled(omega) if omega != 1.0 else candidate
        update = _relative_update(relaxed, current)
        if (
            trace.updates
            and update > trace.updates[-1]
            and omega > config.fallback_relaxation
        ):
            logger.info(
                "Picard update grew, lowering relaxation",
                extra={"iteration": iteration, "relaxation": config.fallback_relaxation},
            )
            omega = config.fallback_relaxation
        trace.updates.append(update)
        trace.relaxation.append(omega)
        trace.residuals.append(report.residual_norm)
        trace.continuity.append(continuity_defect(ns_system, relaxed))
        current = relaxed
        logger.debug(
            "Picard step", extra={"iteration": iteration, "update": update, "Re": config.Re}
        )
        if update <= config.tol:
            trace.converged = True
            logger.info(
                "Picard converged",
                extra={"iterations": iteration, "Re": config.Re, "update": update},
            )
            return current, trace
        if _stagnated(trace.updates) and report.residual_norm <= solver_config.tolerance:
            trace.converged = True
            trace.stagnated = True
            logger.info(
                "Picard stalled at round-off, accepting the iterate",
                extra={"iterations": iteration, "Re": config.Re, "update": update},
            )
            return current, trace

    raise NoConvergenceError(
        "picard",
        config.max_iter,
        trace.updates[-1] if trace.updates else float("nan"),
        last_iterate=current,
        trace=trace.updates,
    )


def kovasznay_problem(
    h: float,
    params: Optional[KovasznayParams] = None,
    degree: int = 2,
    dilation: float = 2.6,
    perturbation: float = 0.0,
    seed: int = 0,
    domain: Domain = KOVASZNAY_DOMAIN,
) -> StokesProblem:
    """Dirichlet problem on the Kovasznay domain with analytic wall data."""
    params = params or KovasznayParams()

    def wall(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        u, v, _ = kovasznay_field(params, x, y)
        return u, v

    problem = (
        ProblemBuilder()
        .with_domain(domain)
        .with_spacing(h)
        .with_degree(degree)
        .with_dilation(dilation)
        .with_perturbation(perturbation, seed)
        .with_assembly(AssemblyConfig.create_bounded())
        .with_boundary(BoundaryCondition(velocity=wall, name="kovasznay"))
        .build()
    )
    problem.metadata["Re"] = params.Re
    return problem


def lid_velocity(regularized: bool = False):
    """Top-wall velocity (1, 0) on the open lid, zero elsewhere."""

    def velocity(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        on_lid = np.isclose(y, 1.0, atol=1e-12, rtol=0.0)
        if regularized:
            profile = 16.0 * x**2 * (1.0 - x) ** 2
        else:
            inside = (x > 1e-12) & (x < 1.0 - 1e-12)
            profile = inside.astype(float)
        return np.where(on_lid, profile, 0.0), np.zeros_like(x)

    return velocity


def cavity_problem(
    h: float,
    degree: int = 2,
    dilation: float = 2.6,
    regularized: bool = False,
) -> StokesProblem:
    """Lid-driven unit cavity; corners take the wall value 0."""
    return (
        ProblemBuilder()
        .with_domain(Domain.unit_square(periodic=False))
        .with_spacing(h)
        .with_degree(degree)
        .with_dilation(dilation)
        .with_assembly(AssemblyConfig.create_bounded())
        .with_boundary(BoundaryCondition(velocity=lid_velocity(regularized), name="lid"))
        .build()
    )
