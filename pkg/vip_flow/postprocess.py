"""
Derived fields: vorticity, stream function, centerlines, field samples.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import FlowField, assemble_interpolation, assemble_laplacian_direct
from .errors import DegreeTooLowError, SingularSystemError
from .geometry import VirtualGrid
from .kernel import DX, DY, MLSRKKernel
from .models import Domain

logger = logging.getLogger(__name__)

Line = Literal["vertical", "horizontal"]

DENSE_POISSON_LIMIT = 4000


def compute_vorticity(
    field_: FlowField, kernel: MLSRKKernel, eval_points: np.ndarray
) -> np.ndarray:
    """omega = dv/dx - du/dy at each evaluation point."""
    if kernel.basis.degree < 1:
        raise DegreeTooLowError("vorticity", kernel.basis.degree, 1)
    pts = np.asarray(eval_points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        return np.zeros(0)
    table = kernel.table(pts, (DX, DY))
    return table[DX] @ field_.v - table[DY] @ field_.u


def gauge_streamfunction(psi: np.ndarray, kernel: MLSRKKernel) -> np.ndarray:
    """Mean-free on periodic domains, zero at the lower-left corner otherwise."""
    nodes = kernel.nodes
    psi = np.asarray(psi, dtype=float)
    if nodes.domain.fully_periodic:
        return psi - psi.mean()
    corner = int(np.argmin(np.sum(np.abs(nodes.positions - nodes.domain.lower), axis=1)))
    return psi - psi[corner]


def compute_streamfunction(
    field_: FlowField, kernel: MLSRKKernel, grid: VirtualGrid
) -> np.ndarray:
    """
    Node coefficients of psi with -Lap psi = omega.

    omega is collocated at the virtual points. Bounded domains add psi = 0 at
    every boundary node; fully periodic domains add the mean gauge instead.
    """
    points = grid.points
    omega = compute_vorticity(field_, kernel, points)
    return solve_poisson(kernel, points, omega)


def solve_poisson(kernel: MLSRKKernel, points: np.ndarray, source: np.ndarray) -> np.ndarray:
    nodes = kernel.nodes
    n = nodes.size
    lap = -assemble_laplacian_direct(kernel, points)
    if nodes.domain.fully_periodic or not nodes.boundary_mask.any():
        matrix = sp.vstack([lap, sp.csr_matrix(np.ones((1, n)))])
        rhs = np.concatenate([source, [0.0]])
    else:
        wall = assemble_interpolation(kernel, nodes.positions[nodes.boundary_mask])
        matrix = sp.vstack([lap, wall])
        rhs = np.concatenate([source, np.zeros(wall.shape[0])])
    matrix = sp.csr_matrix(matrix)

    if n <= DENSE_POISSON_LIMIT:
        psi, *_ = scipy.linalg.lstsq(matrix.toarray(), rhs, lapack_driver="gelsd")
    elif matrix.shape[0] == matrix.shape[1]:
        try:
            psi = spla.splu(sp.csc_matrix(matrix)).solve(rhs)
        except RuntimeError as exc:
            raise SingularSystemError("stream function system", cause=exc) from exc
    else:
        psi = spla.lsqr(matrix, rhs, atol=1e-12, btol=1e-12, iter_lim=20 * n)[0]
    return gauge_streamfunction(psi, kernel)


def line_points(domain: Domain, line: Line, position: float, samples: int) -> np.ndarray:
    """samples equispaced points along a vertical (x fixed) or horizontal line."""
    if samples < 2:
        raise ValueError("a centerline needs at least two samples")
    varying = 1 if line == "vertical" else 0
    coords = np.linspace(domain.lower[varying], domain.upper[varying], samples)
    pts = np.empty((samples, 2))
    pts[:, varying] = coords
    pts[:, 1 - varying] = position
    return pts


def extract_centerline(
    field_: FlowField,
    kernel: MLSRKKernel,
    line: Line,
    position: float,
    samples: int,
    component: Literal["u", "v", "p"] = "u",
) -> List[Tuple[float, float]]:
    """(coord, value) rows of one projected component along a line."""
    domain = kernel.nodes.domain
    pts = line_points(domain, line, position, samples)
    interp = assemble_interpolation(kernel, pts)
    values = {
        "u": field_.u,
        "v": field_.v,
        "p": field_.P,
    }[component]
    projected = interp @ values
    varying = 1 if line == "vertical" else 0
    return [(float(c), float(val)) for c, val in zip(pts[:, varying], projected)]


@dataclass
class FieldSamples:
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    vorticity: np.ndarray
    streamfunction: np.ndarray

    def rows(self) -> List[Tuple[float, ...]]:
        columns = (self.x, self.y, self.u, self.v, self.p, self.vorticity, self.streamfunction)
        return [tuple(float(c[i]) for c in columns) for i in range(self.x.size)]


def sample_fields(
    field_: FlowField,
    kernel: MLSRKKernel,
    samples: int,
    psi: Optional[np.ndarray] = None,
) -> FieldSamples:
    """Regular samples x samples grid over the domain for contour plots."""
    domain = kernel.nodes.domain
    xs = np.linspace(domain.lower[0], domain.upper[0], samples)
    ys = np.linspace(domain.lower[1], domain.upper[1], samples)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    interp = assemble_interpolation(kernel, pts)
    stream = interp @ psi if psi is not None else np.zeros(pts.shape[0])
    return FieldSamples(
        x=pts[:, 0],
        y=pts[:, 1],
        u=interp @ field_.u,
        v=interp @ field_.v,
        p=interp @ field_.P,
        vorticity=compute_vorticity(field_, kernel, pts),
        streamfunction=stream,
    )


def scaled_norm(values: np.ndarray, h: float) -> float:
    """h * l2 norm, accumulated in order."""
    total = 0.0
    for value in np.asarray(values, dtype=float).ravel():
        total += value * value
    return h * math.sqrt(total)


def scaled_norm_sorted(values: np.ndarray, h: float) -> float:
    """h * l2 norm from an exactly rounded sum of sorted squares."""
    squares = np.sort(np.asarray(values, dtype=float).ravel() ** 2)
    return h * math.sqrt(math.fsum(squares))
