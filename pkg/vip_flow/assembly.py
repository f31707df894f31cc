"""
Sparse VIP operators and the Stokes saddle-point system.

All operators map node coefficients to values at evaluation points and are
returned as CSR matrices with entries below 1e-14 pruned. The saddle system
orders its rows as momentum-x, momentum-y, continuity, gauges and its
unknowns as (u_1..u_N, v_1..v_N, p_1..p_N).
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from .errors import (
    DegreeTooLowError,
    DimensionMismatchError,
    RealizationFailureError,
    TooLargeError,
    composite_needs_colocation,
)
from .geometry import (
    NodeSet,
    StaggeredStencil,
    VirtualGrid,
    realization_check,
    staggered_points,
)
from .kernel import DX, DXX, DY, DYY, VALUE, MLSRKKernel

if TYPE_CHECKING:
    from .builders import AssemblyConfig

logger = logging.getLogger(__name__)

SparseOperator = sp.csr_matrix
VelocityFunction = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]

PRUNE_TOL = 1e-14
KERNEL_RTOL = 1e-10
DENSE_KERNEL_LIMIT = 8192


def finalize_operator(matrix: sp.spmatrix) -> sp.csr_matrix:
    """Canonical CSR form: sorted indices, no stored entries below 1e-14."""
    out = sp.csr_matrix(matrix, dtype=float)
    out.data[np.abs(out.data) < PRUNE_TOL] = 0.0
    out.eliminate_zeros()
    out.sort_indices()
    return out


def assemble_interpolation(kernel: MLSRKKernel, eval_points: np.ndarray) -> sp.csr_matrix:
    """Row J applies the discrete projection at eval point J."""
    pts = np.asarray(eval_points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        return sp.csr_matrix((0, kernel.nodes.size))
    return finalize_operator(kernel.table(pts, (VALUE,))[VALUE])


def assemble_laplacian_direct(kernel: MLSRKKernel, eval_points: np.ndarray) -> sp.csr_matrix:
    if kernel.basis.degree < 2:
        raise DegreeTooLowError("direct Laplacian", kernel.basis.degree, 2)
    table = kernel.table(eval_points, (DXX, DYY))
    return finalize_operator(table[DXX] + table[DYY])


def assemble_gradient_direct(kernel: MLSRKKernel, eval_points: np.ndarray) -> sp.csr_matrix:
    """G = [Psi^(1,0); Psi^(0,1)], shape (2M, N)."""
    if kernel.basis.degree < 1:
        raise DegreeTooLowError("direct gradient", kernel.basis.degree, 1)
    table = kernel.table(eval_points, (DX, DY))
    return finalize_operator(sp.vstack([table[DX], table[DY]]))


def staggered_differences(
    kernel: MLSRKKernel, stencil: StaggeredStencil
) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """
    Half-spacing differences (Psi(z+) - Psi(z-)) / h along x and along y.

    Both are (M, N); every staggered operator is built from this pair.
    """
    out = []
    for axis in range(2):
        plus, minus = stencil.pair(axis)
        t_plus = kernel.table(plus, (VALUE,))[VALUE]
        t_minus = kernel.table(minus, (VALUE,))[VALUE]
        out.append(finalize_operator((t_plus - t_minus) / stencil.h))
    return out[0], out[1]


def assemble_divergence_staggered(
    kernel: MLSRKKernel,
    stencil: StaggeredStencil,
    differences: Optional[Tuple[sp.csr_matrix, sp.csr_matrix]] = None,
) -> sp.csr_matrix:
    """D* = [Dx, Dy], shape (M, 2N)."""
    dx, dy = differences or staggered_differences(kernel, stencil)
    return finalize_operator(sp.hstack([dx, dy]))


def assemble_gradient_staggered(
    kernel: MLSRKKernel,
    stencil: StaggeredStencil,
    differences: Optional[Tuple[sp.csr_matrix, sp.csr_matrix]] = None,
) -> sp.csr_matrix:
    """D = [Dx; Dy], shape (2M, N)."""
    dx, dy = differences or staggered_differences(kernel, stencil)
    return finalize_operator(sp.vstack([dx, dy]))


def assemble_laplacian_composite(
    div: sp.spmatrix, grad: sp.spmatrix, blocked: bool = True
) -> sp.csr_matrix:
    """
    A = D*(D .) applied to each velocity component.

    The gradient values at the M points are reused as node coefficients, so
    M must equal N. Returns the (2M, 2N) block-diagonal operator, or the
    scalar (M, N) block when blocked is False.
    """
    m_rows, n2 = div.shape
    if n2 % 2:
        raise DimensionMismatchError("composite Laplacian", "even column count", n2)
    n = n2 // 2
    if grad.shape != (2 * m_rows, n):
        raise DimensionMismatchError("composite Laplacian", (2 * m_rows, n), grad.shape)
    if m_rows != n:
        raise composite_needs_colocation(m_rows, n)
    div = sp.csr_matrix(div)
    grad = sp.csr_matrix(grad)
    scalar = div[:, :n] @ grad[:m_rows] + div[:, n:] @ grad[m_rows:]
    if not blocked:
        return finalize_operator(scalar)
    return finalize_operator(sp.block_diag([scalar, scalar]))


def kernel_basis(
    operator: sp.spmatrix, rtol: float = KERNEL_RTOL, limit: int = DENSE_KERNEL_LIMIT
) -> np.ndarray:
    """
    Orthonormal basis of the null space of a sparse operator.

    Eigenvectors of the Gram matrix whose eigenvalue lies below rtol times its
    1-norm. The eigensolve is dense, so the column count is capped by limit.
    """
    n = operator.shape[1]
    if n > limit:
        raise TooLargeError("kernel basis", n, limit)
    gram = sp.csr_matrix(operator.T @ operator)
    bound = float(abs(gram).sum(axis=0).max()) if gram.nnz else 0.0
    if bound == 0.0:
        return np.eye(n)
    _, vectors = scipy.linalg.eigh(
        gram.toarray(), subset_by_value=(-np.inf, rtol * bound), driver="evr"
    )
    return vectors


@dataclass
class BoundaryCondition:
    """
    Velocity Dirichlet data on non-periodic walls.

    velocity(x, y) returns (u, v) arrays; None means no-slip.
    """

    velocity: Optional[VelocityFunction] = None
    name: str = "dirichlet"

    def values(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if self.velocity is None:
            zeros = np.zeros(pts.shape[0])
            return zeros, zeros.copy()
        u, v = self.velocity(pts[:, 0], pts[:, 1])
        return (
            np.broadcast_to(np.asarray(u, dtype=float), pts.shape[:1]).copy(),
            np.broadcast_to(np.asarray(v, dtype=float), pts.shape[:1]).copy(),
        )

    @classmethod
    def no_slip(cls) -> "BoundaryCondition":
        return cls(velocity=None, name="no-slip")


@dataclass
class FlowField:
    """Velocity coefficients U = (u_1..u_N, v_1..v_N) and pressure P on nodes."""

    U: np.ndarray
    P: np.ndarray

    def __post_init__(self) -> None:
        self.U = np.asarray(self.U, dtype=float).ravel()
        self.P = np.asarray(self.P, dtype=float).ravel()
        if self.U.size != 2 * self.P.size:
            raise DimensionMismatchError("FlowField", 2 * self.P.size, self.U.size)

    @property
    def n_nodes(self) -> int:
        return int(self.P.size)

    @property
    def u(self) -> np.ndarray:
        return self.U[: self.n_nodes]

    @property
    def v(self) -> np.ndarray:
        return self.U[self.n_nodes:]

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.U, self.P])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "FlowField":
        n = x.size // 3
        return cls(U=x[: 2 * n].copy(), P=x[2 * n: 3 * n].copy())

    @classmethod
    def zeros(cls, n_nodes: int) -> "FlowField":
        return cls(U=np.zeros(2 * n_nodes), P=np.zeros(n_nodes))

    @classmethod
    def sample(
        cls,
        nodes: NodeSet,
        velocity: VelocityFunction,
        pressure: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
    ) -> "FlowField":
        """Nodal samples of an analytic field."""
        x, y = nodes.positions[:, 0], nodes.positions[:, 1]
        u, v = velocity(x, y)
        p = pressure(x, y) if pressure is not None else np.zeros_like(x)
        return cls(
            U=np.concatenate([np.broadcast_to(u, x.shape), np.broadcast_to(v, x.shape)]),
            P=np.broadcast_to(p, x.shape),
        )

    def evaluate(
        self, kernel: MLSRKKernel, points: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Projected (u, v, p) at arbitrary points."""
        interp = assemble_interpolation(kernel, points)
        return interp @ self.u, interp @ self.v, interp @ self.P

    def __add__(self, other: "FlowField") -> "FlowField":
        return FlowField(U=self.U + other.U, P=self.P + other.P)

    def __sub__(self, other: "FlowField") -> "FlowField":
        return FlowField(U=self.U - other.U, P=self.P - other.P)

    def scaled(self, factor: float) -> "FlowField":
        return FlowField(U=factor * self.U, P=factor * self.P)


@dataclass
class Gauge:
    name: str
    row: np.ndarray


@dataclass
class SaddleSystem:
    """
    Block system [[-nu A, B_p], [B_d, 0]] plus Dirichlet and gauge rows.

    Row layout (all counts in rows):

    - momentum-x: M collocation rows, then one Dirichlet row per boundary node
    - momentum-y: same
    - continuity: M staggered divergence rows, then one direct divergence row
      per boundary node
    - gauges: pressure mean, then velocity means on fully periodic domains
    """

    nodes: NodeSet
    grid: VirtualGrid
    stencil: StaggeredStencil
    kernel: MLSRKKernel
    laplacian: sp.csr_matrix
    grad_p: sp.csr_matrix
    div: sp.csr_matrix
    velocity_grad: sp.csr_matrix
    boundary_interp: sp.csr_matrix
    boundary_div: sp.csr_matrix
    gauges: List[Gauge]
    bc: Optional[BoundaryCondition]
    laplacian_mode: str
    gradient_mode: str
    viscosity: float = 1.0
    _cache: Dict[str, Any] = field(default_factory=dict, init=False, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_points(self) -> int:
        return self.grid.size

    @property
    def n_boundary(self) -> int:
        return int(self.boundary_interp.shape[0])

    @property
    def n_unknowns(self) -> int:
        return 3 * self.n_nodes

    @property
    def n_momentum_rows(self) -> int:
        return 2 * (self.n_points + self.n_boundary)

    @property
    def n_continuity_rows(self) -> int:
        return self.n_points + self.n_boundary

    @property
    def n_rows(self) -> int:
        return self.n_momentum_rows + self.n_continuity_rows + len(self.gauges)

    @property
    def h(self) -> float:
        return self.grid.h

    def row_slices(self) -> Dict[str, slice]:
        per = self.n_points + self.n_boundary
        return {
            "momentum_x": slice(0, per),
            "momentum_y": slice(per, 2 * per),
            "continuity": slice(2 * per, 3 * per),
            "gauges": slice(3 * per, 3 * per + len(self.gauges)),
        }

    def interior_momentum_rows(self) -> np.ndarray:
        """Row indices of the 2M collocated momentum equations."""
        per = self.n_points + self.n_boundary
        rows = np.arange(self.n_points)
        return np.concatenate([rows, per + rows])

    def pressure_modes(self) -> np.ndarray:
        """Orthonormal basis of pressures with D_p P = 0; holds the constants."""
        if "pressure_modes" not in self._cache:
            self._cache["pressure_modes"] = kernel_basis(self.grad_p)
        return self._cache["pressure_modes"]

    def null_mode_candidates(self) -> np.ndarray:
        """
        Unknown-space directions the saddle matrix can annihilate, one per
        column: pressure modes, and on fully periodic domains the velocity
        modes with D U = 0 in each component.
        """
        if "null_modes" not in self._cache:
            n = self.n_nodes
            pressure = self.pressure_modes()
            blocks = [np.vstack([np.zeros((2 * n, pressure.shape[1])), pressure])]
            if self.nodes.domain.fully_periodic:
                velocity = kernel_basis(self.velocity_grad)
                zeros = np.zeros_like(velocity)
                blocks.append(np.vstack([velocity, zeros, zeros]))
                blocks.append(np.vstack([zeros, velocity, zeros]))
            self._cache["null_modes"] = np.hstack(blocks)
        return self._cache["null_modes"]

    def momentum_block(self, convection: Optional[sp.spmatrix] = None) -> sp.csr_matrix:
        """-nu A on the 2M interior momentum rows, optionally plus convection."""
        n = self.n_nodes
        block = -self.viscosity * self.laplacian
        if block.shape[1] == n:
            block = sp.block_diag([block, block])
        if convection is not None:
            block = block + convection
        return sp.csr_matrix(block)

    def matrix(self, convection: Optional[sp.spmatrix] = None) -> sp.csr_matrix:
        """Full (rows x 3N) matrix; cached when no convection block is given."""
        if convection is None and "plain" in self._cache:
            return self._cache["plain"]
        m, n = self.n_points, self.n_nodes
        mom = self.momentum_block(convection)
        zeros_b = sp.csr_matrix((self.n_boundary, n))
        gp = self.grad_p
        rows = [
            sp.hstack([mom[:m], gp[:m]]),
            sp.hstack([self.boundary_interp, zeros_b, zeros_b]),
            sp.hstack([mom[m:], gp[m:]]),
            sp.hstack([zeros_b, self.boundary_interp, zeros_b]),
            sp.hstack([self.div, sp.csr_matrix((m, n))]),
            sp.hstack([self.boundary_div, zeros_b]),
        ]
        if self.gauges:
            rows.append(sp.csr_matrix(np.vstack([g.row for g in self.gauges])))
        full = finalize_operator(sp.vstack(rows))
        if convection is None:
            self._cache["plain"] = full
        return full

    def rhs(
        self,
        forcing: Union[np.ndarray, Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]], None] = None,
        boundary: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    ) -> np.ndarray:
        """
        Right-hand side vector.

        forcing is a length-2M vector (x components first), an (M, 2) array,
        or a callable f(x, y) -> (fx, fy) sampled at the virtual points.
        Boundary values default to the system's boundary condition.
        """
        m = self.n_points
        if forcing is None:
            f = np.zeros(2 * m)
        elif callable(forcing):
            pts = self.grid.points
            fx, fy = forcing(pts[:, 0], pts[:, 1])
            f = np.concatenate([np.broadcast_to(fx, (m,)), np.broadcast_to(fy, (m,))])
        else:
            arr = np.asarray(forcing, dtype=float)
            f = arr.T.ravel() if arr.ndim == 2 else arr.ravel()
        if f.size != 2 * m:
            raise DimensionMismatchError("forcing", 2 * m, f.size)
        if boundary is None:
            if self.n_boundary and self.bc is not None:
                boundary = self.bc.values(self.boundary_points)
            else:
                boundary = (np.zeros(self.n_boundary), np.zeros(self.n_boundary))
        gu, gv = boundary
        return np.concatenate(
            [
                f[:m],
                gu,
                f[m:],
                gv,
                np.zeros(self.n_continuity_rows + len(self.gauges)),
            ]
        )

    @property
    def boundary_points(self) -> np.ndarray:
        return self.nodes.positions[self.nodes.boundary_mask]

    def residual(self, field_: FlowField, rhs: np.ndarray, convection: Optional[sp.spmatrix] = None) -> np.ndarray:
        return self.matrix(convection) @ field_.vector - rhs

    def with_viscosity(self, viscosity: float) -> "SaddleSystem":
        """Same operators with a different momentum scaling."""
        scaled = dataclasses.replace(self, viscosity=viscosity)
        for key in ("pressure_modes", "null_modes"):
            if key in self._cache:
                scaled._cache[key] = self._cache[key]
        return scaled


def _gauge_rows(nodes: NodeSet) -> List[Gauge]:
    n = nodes.size
    ones = np.ones(n)
    zeros = np.zeros(n)
    gauges = [Gauge("pressure_mean", np.concatenate([zeros, zeros, ones]))]
    if nodes.domain.fully_periodic:
        gauges.append(Gauge("velocity_x_mean", np.concatenate([ones, zeros, zeros])))
        gauges.append(Gauge("velocity_y_mean", np.concatenate([zeros, ones, zeros])))
    return gauges


def assemble_saddle_system(
    nodes: NodeSet,
    grid: VirtualGrid,
    kernel: MLSRKKernel,
    config: Optional["AssemblyConfig"] = None,
    bc: Optional[BoundaryCondition] = None,
    stencil: Optional[StaggeredStencil] = None,
    check_realization: bool = True,
) -> SaddleSystem:
    """Assemble every block of the Stokes system on one node set."""
    if config is None:
        from .builders import AssemblyConfig

        config = AssemblyConfig()
    stencil = stencil or staggered_points(grid)
    points = grid.points

    if check_realization:
        try:
            report = realization_check(nodes, points, kernel.rho, kernel.basis)
        except TooLargeError as exc:
            logger.warning("Skipping realization check", extra={"reason": str(exc)})
        else:
            if not report.full_row_rank:
                raise RealizationFailureError(
                    report.rank, report.rows, report.min_singular_value
                )

    differences = staggered_differences(kernel, stencil)
    div = assemble_divergence_staggered(kernel, stencil, differences)
    velocity_grad = assemble_gradient_staggered(kernel, stencil, differences)

    if config.gradient_mode == "staggered":
        grad_p = velocity_grad
    elif config.gradient_mode == "direct":
        grad_p = assemble_gradient_direct(kernel, points)
    else:
        raise ValueError(f"unknown gradient_mode {config.gradient_mode!r}")

    if config.laplacian_mode == "composite":
        laplacian = assemble_laplacian_composite(div, velocity_grad, blocked=False)
    elif config.laplacian_mode == "direct":
        laplacian = assemble_laplacian_direct(kernel, points)
    else:
        raise ValueError(f"unknown laplacian_mode {config.laplacian_mode!r}")

    boundary_pts = nodes.positions[nodes.boundary_mask]
    if boundary_pts.shape[0]:
        table = kernel.table(boundary_pts, (VALUE, DX, DY))
        boundary_interp = finalize_operator(table[VALUE])
        boundary_div = finalize_operator(sp.hstack([table[DX], table[DY]]))
    else:
        boundary_interp = sp.csr_matrix((0, nodes.size))
        boundary_div = sp.csr_matrix((0, 2 * nodes.size))

    system = SaddleSystem(
        nodes=nodes,
        grid=grid,
        stencil=stencil,
        kernel=kernel,
        laplacian=laplacian,
        grad_p=grad_p,
        div=div,
        velocity_grad=velocity_grad,
        boundary_interp=boundary_interp,
        boundary_div=boundary_div,
        gauges=_gauge_rows(nodes),
        bc=bc,
        laplacian_mode=config.laplacian_mode,
        gradient_mode=config.gradient_mode,
        viscosity=config.viscosity,
    )
    logger.info(
        "Assembled saddle system",
        extra={
            "h": grid.h,
            "nodes": nodes.size,
            "points": grid.size,
            "rows": system.n_rows,
            "unknowns": system.n_unknowns,
            "laplacian_mode": config.laplacian_mode,
            "gradient_mode": config.gradient_mode,
        },
    )
    return system


def export_operators(system: SaddleSystem, directory: Union[str, Path]) -> List[Path]:
    """Write D, D*, A and the full system in Matrix Market coordinate format."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    blocks = {
        "D.mtx": system.grad_p,
        "Dstar.mtx": system.div,
        "A.mtx": system.momentum_block() * (-1.0 / system.viscosity),
        "system.mtx": system.matrix(),
    }
    written = []
    for name, matrix in blocks.items():
        path = out / name
        scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), precision=17)
        written.append(path)
    logger.debug("Exported operators", extra={"directory": str(out), "files": len(written)})
    return written
