"""
Node sets, virtual lattices and staggered stencils.

Layout on an axis of extent L with spacing h (L/h = K cells):

- periodic axis: nodes at a + (k + 1/2) h, k = 0..K-1
- bounded axis: the same cell centres plus the two end points a and b

Nodes are the tensor product of the per-axis coordinates. Interior nodes
(cell centres) come first, in the same order as the virtual points, followed
by boundary nodes, so N = M on a fully periodic domain and U[:M] always
refers to the virtual points.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import DefaultDict, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .errors import NonconformingSpacingError, SizeMismatchError, TooLargeError
from .kernel import VALUE, MLSRKKernel, PolynomialBasis
from .models import Domain

logger = logging.getLogger(__name__)

COINCIDENCE_TOL = 1e-12
BOUNDARY_TOL = 1e-12
REALIZATION_RTOL = 1e-10
DENSE_REALIZATION_LIMIT = 4096


class NodeSet:
    """
    Scattered approximation nodes with a uniform-bucket spatial hash.

    Positions are wrapped into the domain on periodic axes and frozen. The
    bucket width defaults to the node spacing; queries with a larger radius
    scan the extra buckets.
    """

    def __init__(
        self,
        positions: np.ndarray,
        domain: Domain,
        spacing: Optional[float] = None,
        bucket_width: Optional[float] = None,
        n_interior: Optional[int] = None,
    ):
        pts = domain.wrap(np.asarray(positions, dtype=float).reshape(-1, 2))
        if not np.all(domain.contains(pts)):
            raise ValueError("node positions must lie inside the domain")
        self.domain = domain
        self.positions = pts
        self.positions.setflags(write=False)
        self.spacing = spacing
        self.n_interior = pts.shape[0] if n_interior is None else n_interior
        self._check_coincident()

        width = bucket_width or spacing or _default_width(pts, domain)
        self._widths = np.empty(2)
        self._cells = np.zeros(2, dtype=np.int64)
        for axis in range(2):
            if domain.periodic[axis]:
                n_cells = max(1, int(math.floor(domain.extents[axis] / width)))
                self._cells[axis] = n_cells
                self._widths[axis] = domain.extents[axis] / n_cells
            else:
                self._widths[axis] = width
        self._buckets: DefaultDict[Tuple[int, int], List[int]] = defaultdict(list)
        for index, cell in enumerate(self._cell_of(pts)):
            self._buckets[(int(cell[0]), int(cell[1]))].append(index)

        self.boundary_mask = self._find_boundary()
        self.boundary_mask.setflags(write=False)

    @property
    def size(self) -> int:
        return int(self.positions.shape[0])

    def __len__(self) -> int:
        return self.size

    @property
    def boundary_indices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    def _check_coincident(self) -> None:
        keys = np.round(self.positions / COINCIDENCE_TOL).astype(np.int64)
        if np.unique(keys, axis=0).shape[0] != keys.shape[0]:
            raise ValueError("two nodes coincide within 1e-12")

    def _find_boundary(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for axis in range(2):
            if self.domain.periodic[axis]:
                continue
            coord = self.positions[:, axis]
            mask |= np.abs(coord - self.domain.lower[axis]) < BOUNDARY_TOL
            mask |= np.abs(coord - self.domain.upper[axis]) < BOUNDARY_TOL
        return mask

    def _cell_of(self, pts: np.ndarray) -> np.ndarray:
        cells = np.floor((pts - self.domain.lower) / self._widths).astype(np.int64)
        for axis in range(2):
            if self.domain.periodic[axis]:
                cells[..., axis] = np.mod(cells[..., axis], self._cells[axis])
        return cells

    def query(self, point: Sequence[float], radius: float) -> np.ndarray:
        """Indices with wrapped max-norm distance < radius, ascending."""
        if radius <= 0:
            return np.zeros(0, dtype=np.int64)
        x = np.asarray(point, dtype=float)
        ranges = []
        for axis in range(2):
            lo = int(math.floor((x[axis] - radius - self.domain.lower[axis]) / self._widths[axis]))
            hi = int(math.floor((x[axis] + radius - self.domain.lower[axis]) / self._widths[axis]))
            cells = range(lo, hi + 1)
            if self.domain.periodic[axis]:
                n_cells = int(self._cells[axis])
                cells = sorted({c % n_cells for c in cells})
            ranges.append(cells)
        candidates: List[int] = []
        for cx in ranges[0]:
            for cy in ranges[1]:
                candidates.extend(self._buckets.get((cx, cy), ()))
        if not candidates:
            return np.zeros(0, dtype=np.int64)
        idx = np.unique(np.asarray(candidates, dtype=np.int64))
        dist = self.domain.distance(x, self.positions[idx])
        return idx[dist < radius]

    def with_positions(self, positions: np.ndarray) -> "NodeSet":
        return NodeSet(
            positions,
            self.domain,
            spacing=self.spacing,
            bucket_width=float(np.min(self._widths)),
            n_interior=self.n_interior,
        )


def _default_width(pts: np.ndarray, domain: Domain) -> float:
    # roughly one node per bucket
    return float(np.sqrt(domain.area / max(pts.shape[0], 1)))


@dataclass(frozen=True)
class VirtualGrid:
    """Regular lattice of virtual interpolation points (cell centres)."""

    domain: Domain
    h: float
    origin: Tuple[float, float]
    counts: Tuple[int, int]

    @property
    def size(self) -> int:
        return self.counts[0] * self.counts[1]

    @property
    def points(self) -> np.ndarray:
        """Points ordered with x varying fastest."""
        xs = self.origin[0] + self.h * np.arange(self.counts[0])
        ys = self.origin[1] + self.h * np.arange(self.counts[1])
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass(frozen=True)
class StaggeredStencil:
    """Half-spacing offsets of every virtual point, wrapped on periodic axes."""

    h: float
    x_plus: np.ndarray
    x_minus: np.ndarray
    y_plus: np.ndarray
    y_minus: np.ndarray

    @property
    def size(self) -> int:
        return int(self.x_plus.shape[0])

    def pair(self, axis: int) -> Tuple[np.ndarray, np.ndarray]:
        return (self.x_plus, self.x_minus) if axis == 0 else (self.y_plus, self.y_minus)

    @property
    def all_points(self) -> np.ndarray:
        return np.vstack([self.x_plus, self.x_minus, self.y_plus, self.y_minus])


@dataclass(frozen=True)
class RealizationReport:
    rank: int
    rows: int
    full_row_rank: bool
    min_singular_value: float
    max_singular_value: float


def _cell_count(domain: Domain, axis: int, h: float) -> int:
    extent = float(domain.extents[axis])
    ratio = extent / h
    count = int(round(ratio))
    if count < 1 or abs(ratio - count) > 1e-9 * max(ratio, 1.0):
        raise NonconformingSpacingError(axis, extent, h)
    return count


def virtual_grid(domain: Domain, h: float) -> VirtualGrid:
    counts = (_cell_count(domain, 0, h), _cell_count(domain, 1, h))
    origin = (
        float(domain.lower[0] + 0.5 * h),
        float(domain.lower[1] + 0.5 * h),
    )
    return VirtualGrid(domain=domain, h=h, origin=origin, counts=counts)


def generate_regular(domain: Domain, h: float) -> NodeSet:
    """Lattice node set aligned with the virtual grid of spacing h."""
    grid = virtual_grid(domain, h)
    interior = grid.points
    axes = []
    for axis in range(2):
        coords = grid.origin[axis] + h * np.arange(grid.counts[axis])
        if not domain.periodic[axis]:
            coords = np.concatenate(
                [[domain.lower[axis]], coords, [domain.upper[axis]]]
            )
        axes.append(coords)
    gx, gy = np.meshgrid(axes[0], axes[1], indexing="xy")
    full = np.column_stack([gx.ravel(), gy.ravel()])
    on_boundary = np.zeros(full.shape[0], dtype=bool)
    for axis in range(2):
        if not domain.periodic[axis]:
            on_boundary |= np.isclose(full[:, axis], domain.lower[axis], atol=BOUNDARY_TOL, rtol=0)
            on_boundary |= np.isclose(full[:, axis], domain.upper[axis], atol=BOUNDARY_TOL, rtol=0)
    positions = np.vstack([interior, full[on_boundary]])
    nodes = NodeSet(positions, domain, spacing=h, n_interior=interior.shape[0])
    logger.debug(
        "Generated regular node set",
        extra={"h": h, "nodes": nodes.size, "boundary": int(on_boundary.sum())},
    )
    return nodes


def generate_refined(domain: Domain, h: float) -> NodeSet:
    """
    Lattice of spacing h/2 holding every virtual point and both staggered
    offsets of each one.

    Virtual points come first in grid order, then the other interior lattice
    nodes, then wall nodes. N = 4M on a fully periodic domain.
    """
    grid = virtual_grid(domain, h)
    half = 0.5 * h
    indices = []
    axes = []
    for axis in range(2):
        count = 2 * grid.counts[axis] + (0 if domain.periodic[axis] else 1)
        indices.append(np.arange(count))
        axes.append(domain.lower[axis] + half * np.arange(count))
    ix, iy = np.meshgrid(indices[0], indices[1], indexing="xy")
    gx, gy = np.meshgrid(axes[0], axes[1], indexing="xy")
    full = np.column_stack([gx.ravel(), gy.ravel()])
    virtual = ((ix % 2 == 1) & (iy % 2 == 1)).ravel()
    on_boundary = np.zeros(full.shape[0], dtype=bool)
    for axis in range(2):
        if not domain.periodic[axis]:
            on_boundary |= np.isclose(full[:, axis], domain.lower[axis], atol=BOUNDARY_TOL, rtol=0)
            on_boundary |= np.isclose(full[:, axis], domain.upper[axis], atol=BOUNDARY_TOL, rtol=0)
    rest = full[~virtual & ~on_boundary]
    positions = np.vstack([grid.points, rest, full[on_boundary]])
    nodes = NodeSet(
        positions, domain, spacing=half, n_interior=grid.size + rest.shape[0]
    )
    logger.debug(
        "Generated refined node set",
        extra={"h": h, "nodes": nodes.size, "boundary": int(on_boundary.sum())},
    )
    return nodes


NODE_LAYOUTS = {"collocated": generate_regular, "refined": generate_refined}


def perturb_nodes(
    nodes: NodeSet,
    amplitude: float,
    seed: int = 0,
    h: Optional[float] = None,
) -> NodeSet:
    """
    Displace interior nodes by uniform random vectors of max-norm <= amplitude*h.

    Boundary nodes stay on the boundary. The same seed gives the same output.
    """
    if not 0.0 <= amplitude < 0.45:
        raise ValueError(f"amplitude must lie in [0, 0.45), got {amplitude}")
    if amplitude == 0.0:
        return nodes
    spacing = h if h is not None else nodes.spacing
    if spacing is None:
        raise ValueError("perturb_nodes needs a spacing h")
    rng = np.random.default_rng(seed)
    shift = rng.uniform(-amplitude * spacing, amplitude * spacing, size=nodes.positions.shape)
    shift[nodes.boundary_mask] = 0.0
    return nodes.with_positions(nodes.positions + shift)


def staggered_points(grid: VirtualGrid) -> StaggeredStencil:
    pts = grid.points
    half = 0.5 * grid.h
    ex = np.array([half, 0.0])
    ey = np.array([0.0, half])
    wrap = grid.domain.wrap
    return StaggeredStencil(
        h=grid.h,
        x_plus=wrap(pts + ex),
        x_minus=wrap(pts - ex),
        y_plus=wrap(pts + ey),
        y_minus=wrap(pts - ey),
    )


def neighbor_query(point: Sequence[float], radius: float, nodes: NodeSet) -> np.ndarray:
    return nodes.query(point, radius)


def realization_check(
    nodes: NodeSet,
    eval_points: np.ndarray,
    rho: float,
    basis: PolynomialBasis,
    limit: int = DENSE_REALIZATION_LIMIT,
) -> RealizationReport:
    """
    Row rank of the interpolation matrix [Psi_I(y_J)] by singular values.

    Realization is certified when the smallest singular value exceeds
    1e-10 times the largest.
    """
    pts = np.asarray(eval_points, dtype=float).reshape(-1, 2)
    rows = pts.shape[0]
    if nodes.size < rows:
        raise SizeMismatchError(nodes.size, rows)
    if max(rows, nodes.size) > limit:
        raise TooLargeError("realization check", max(rows, nodes.size), limit)
    if rows == 0:
        return RealizationReport(0, 0, True, 0.0, 0.0)

    table = MLSRKKernel(nodes, rho, basis).table(pts, (VALUE,))
    sigma = scipy.linalg.svdvals(table[VALUE].toarray())
    s_max = float(sigma[0])
    s_min = float(sigma[rows - 1]) if sigma.size >= rows else 0.0
    rank = int(np.sum(sigma > REALIZATION_RTOL * s_max))
    report = RealizationReport(
        rank=rank,
        rows=rows,
        full_row_rank=rank == rows,
        min_singular_value=s_min,
        max_singular_value=s_max,
    )
    logger.debug("Realization check", extra={"rank": rank, "rows": rows, "sigma_min": s_min})
    return report

