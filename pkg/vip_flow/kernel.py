"""
MLSRK shape functions with full analytic derivatives.

The shape function attached to node x_I is

    Psi_I(x) = P(0)^T M(x)^{-1} P(z_I) Phi(z_I) / rho^2,   z_I = (x - x_I) / rho

with the moment matrix M(x) = sum_I P(z_I) P(z_I)^T Phi(z_I) / rho^2. First and
second derivatives differentiate M^{-1} as well, so derivatives of reproduced
polynomials are exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import (
    InsufficientNeighborsError,
    SingularMomentError,
    VipError,
    row_failure,
)

if TYPE_CHECKING:
    from .geometry import NodeSet

logger = logging.getLogger(__name__)

MultiIndex = Tuple[int, int]

VALUE: MultiIndex = (0, 0)
DX: MultiIndex = (1, 0)
DY: MultiIndex = (0, 1)
DXX: MultiIndex = (2, 0)
DXY: MultiIndex = (1, 1)
DYY: MultiIndex = (0, 2)

FIRST_ORDER = (DX, DY)
SECOND_ORDER = (DXX, DXY, DYY)
ALL_DERIVATIVES = (VALUE,) + FIRST_ORDER + SECOND_ORDER

# position of a second-order multi-index in the (xx, xy, yy) stacks
_HESSIAN_SLOT = {DXX: (0, 0, 0), DXY: (1, 0, 1), DYY: (2, 1, 1)}

DEFAULT_DILATION = 2.6
MOMENT_RCOND = 1e-13


def _powers(values: np.ndarray, exponent: int) -> np.ndarray:
    if exponent < 0:
        return np.zeros_like(values)
    return values**exponent


@dataclass(frozen=True)
class PolynomialBasis:
    """
    Complete polynomial basis of total degree <= m in two variables.

    Monomials are stored in graded lexicographic order
    (1, x, y, x^2, xy, y^2, ...), which stays fixed for the process lifetime.
    """

    degree: int
    monomials: Tuple[MultiIndex, ...] = field(init=False)

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise ValueError(f"degree must be non-negative, got {self.degree}")
        terms: List[MultiIndex] = []
        for total in range(self.degree + 1):
            for ax in range(total, -1, -1):
                terms.append((ax, total - ax))
        object.__setattr__(self, "monomials", tuple(terms))

    @property
    def size(self) -> int:
        return len(self.monomials)

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Monomial values, shape (..., q)."""
        return self.derivative(z, VALUE)

    def derivative(self, z: np.ndarray, alpha: MultiIndex) -> np.ndarray:
        """Partial derivative D^alpha of every monomial, shape (..., q)."""
        z = np.asarray(z, dtype=float)
        x, y = z[..., 0], z[..., 1]
        columns = []
        for ax, ay in self.monomials:
            cx = _falling(ax, alpha[0])
            cy = _falling(ay, alpha[1])
            if cx == 0 or cy == 0:
                columns.append(np.zeros_like(x))
            else:
                columns.append(
                    cx * cy * _powers(x, ax - alpha[0]) * _powers(y, ay - alpha[1])
                )
        return np.stack(columns, axis=-1)


def _falling(n: int, k: int) -> int:
    out = 1
    for j in range(k):
        out *= n - j
    return out


@dataclass(frozen=True)
class WindowFunction:
    """
    Tensor-product cubic B-spline window on the unit max-norm ball.

    Phi(z) = normalization * B(z_1) B(z_2), with B the C^2 cubic B-spline
    rescaled to [-1, 1]; Phi(0) = 4/9 for unit normalization.
    """

    normalization: float = 1.0

    @staticmethod
    def profile(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One-dimensional B(t), B'(t), B''(t)."""
        t = np.asarray(t, dtype=float)
        a = np.abs(t)
        s = np.sign(t)
        inner = a <= 0.5
        outer = (a > 0.5) & (a < 1.0)
        r = 1.0 - a
        value = np.where(
            inner, 2.0 / 3.0 - 4.0 * a**2 + 4.0 * a**3,
            np.where(outer, (4.0 / 3.0) * r**3, 0.0),
        )
        first = np.where(
            inner, -8.0 * t + 12.0 * t * a,
            np.where(outer, -4.0 * r**2 * s, 0.0),
        )
        second = np.where(
            inner, -8.0 + 24.0 * a, np.where(outer, 8.0 * r, 0.0)
        )
        return value, first, second

    def evaluate(
        self, z: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Value (...), gradient (..., 2) and Hessian (..., 2, 2) at scaled z."""
        z = np.asarray(z, dtype=float)
        bx, dbx, ddbx = self.profile(z[..., 0])
        by, dby, ddby = self.profile(z[..., 1])
        c = self.normalization
        value = c * bx * by
        grad = c * np.stack([dbx * by, bx * dby], axis=-1)
        hxx = c * ddbx * by
        hxy = c * dbx * dby
        hyy = c * bx * ddby
        hess = np.stack(
            [np.stack([hxx, hxy], axis=-1), np.stack([hxy, hyy], axis=-1)], axis=-2
        )
        return value, grad, hess


@dataclass(frozen=True)
class MomentMatrix:
    """Moment matrix M(x) with its eigenvalue-based condition estimate."""

    entries: np.ndarray
    condition: float
    neighbors: np.ndarray


@dataclass(frozen=True)
class ShapeRow:
    """Shape functions (and requested derivatives) at one point."""

    point: np.ndarray
    indices: np.ndarray
    values: Dict[MultiIndex, np.ndarray]

    def __getitem__(self, alpha: MultiIndex) -> np.ndarray:
        return self.values[alpha]


@dataclass
class ShapeTable:
    """
    Sparse evaluations of Psi_I and derivatives over a list of points.

    Each requested multi-index maps to a CSR matrix of shape
    (n_points, n_nodes) whose sparsity equals the neighbor query at rho.
    """

    points: np.ndarray
    n_nodes: int
    mask: Tuple[MultiIndex, ...]
    matrices: Dict[MultiIndex, sp.csr_matrix]

    def __getitem__(self, alpha: MultiIndex) -> sp.csr_matrix:
        try:
            return self.matrices[alpha]
        except KeyError:
            raise KeyError(
                f"derivative {alpha} was not requested; table holds {self.mask}"
            ) from None

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])


def _normalize_mask(mask: Optional[Iterable[MultiIndex]]) -> Tuple[MultiIndex, ...]:
    if mask is None:
        return (VALUE,)
    ordered = [alpha for alpha in ALL_DERIVATIVES if alpha in set(mask)]
    unknown = set(mask) - set(ALL_DERIVATIVES)
    if unknown:
        raise ValueError(f"unsupported derivative orders {sorted(unknown)}")
    return tuple(ordered)


class MLSRKKernel:
    """
    Shape-function evaluator bound to a node set, a basis and a dilation.

    The kernel is immutable after construction and can be shared read-only
    between threads.
    """

    def __init__(
        self,
        nodes: "NodeSet",
        rho: float,
        basis: PolynomialBasis,
        window: Optional[WindowFunction] = None,
    ):
        if rho <= 0:
            raise ValueError(f"dilation rho must be positive, got {rho}")
        self.nodes = nodes
        self.rho = float(rho)
        self.basis = basis
        self.window = window or WindowFunction()
        self._p0 = basis.evaluate(np.zeros(2))

    @classmethod
    def for_spacing(
        cls,
        nodes: "NodeSet",
        h: float,
        degree: int = 2,
        dilation: float = DEFAULT_DILATION,
    ) -> "MLSRKKernel":
        """Kernel with rho = dilation * h."""
        return cls(nodes, dilation * h, PolynomialBasis(degree))

    def _support(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        idx = self.nodes.query(x, self.rho)
        if idx.size < self.basis.size:
            raise InsufficientNeighborsError(x, int(idx.size), self.basis.size)
        z = self.nodes.domain.displacement(x, self.nodes.positions[idx]) / self.rho
        return idx, z

    def _factor(self, x: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, ...]:
        P = self.basis.evaluate(z)
        W, _, _ = self.window.evaluate(z)
        M = np.einsum("k,ki,kj->ij", W, P, P) / self.rho**2
        return M, P, W

    def moment_matrix(self, x: Sequence[float]) -> MomentMatrix:
        x = np.asarray(x, dtype=float)
        idx, z = self._support(x)
        M, _, _ = self._factor(x, z)
        condition = _condition(M)
        if not np.isfinite(condition) or condition > 1.0 / MOMENT_RCOND:
            raise SingularMomentError(x, context={"condition": condition})
        return MomentMatrix(entries=M, condition=condition, neighbors=idx)

    def shape_values(
        self, x: Sequence[float], mask: Optional[Iterable[MultiIndex]] = None
    ) -> ShapeRow:
        """Psi_I^[alpha](x) for every node in the support of x."""
        mask_t = _normalize_mask(mask)
        x = np.asarray(x, dtype=float)
        idx, z = self._support(x)
        rho2 = self.rho**2
        basis = self.basis

        P = basis.evaluate(z)
        W, dW, d2W = self.window.evaluate(z)
        M = np.einsum("k,ki,kj->ij", W, P, P) / rho2
        try:
            factor = scipy.linalg.cho_factor(M, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SingularMomentError(x, cause=exc) from exc
        condition = _condition(M)
        if condition > 1.0 / MOMENT_RCOND:
            raise SingularMomentError(x, context={"condition": condition})

        def solve(rhs: np.ndarray) -> np.ndarray:
            return scipy.linalg.cho_solve(factor, rhs, check_finite=False)

        b = solve(self._p0)
        s = P @ b
        values: Dict[MultiIndex, np.ndarray] = {}
        if VALUE in mask_t:
            values[VALUE] = s * W / rho2

        need_first = any(sum(a) >= 1 for a in mask_t)
        need_second = any(sum(a) == 2 for a in mask_t)
        if need_first:
            dP = [basis.derivative(z, DX), basis.derivative(z, DY)]
            dM = [
                (
                    np.einsum("k,ki,kj->ij", W, dP[i], P)
                    + np.einsum("k,ki,kj->ij", W, P, dP[i])
                    + np.einsum("k,ki,kj->ij", dW[:, i], P, P)
                )
                / rho2
                for i in range(2)
            ]
            db = [-solve(dM[i] @ b) for i in range(2)]
            ds = [dP[i] @ b + P @ db[i] for i in range(2)]
            for i, alpha in enumerate(FIRST_ORDER):
                if alpha in mask_t:
                    values[alpha] = (ds[i] * W + s * dW[:, i]) / rho2 / self.rho

            if need_second:
                d2P = {
                    (0, 0): basis.derivative(z, DXX),
                    (0, 1): basis.derivative(z, DXY),
                    (1, 1): basis.derivative(z, DYY),
                }
                for alpha in SECOND_ORDER:
                    if alpha not in mask_t:
                        continue
                    _, i, j = _HESSIAN_SLOT[alpha]
                    Pij = d2P[(i, j)]
                    Wij = d2W[:, i, j]
                    d2M = (
                        np.einsum("k,ki,kj->ij", W, Pij, P)
                        + np.einsum("k,ki,kj->ij", W, P, Pij)
                        + np.einsum("k,ki,kj->ij", W, dP[i], dP[j])
                        + np.einsum("k,ki,kj->ij", W, dP[j], dP[i])
                        + np.einsum("k,ki,kj->ij", dW[:, j], dP[i], P)
                        + np.einsum("k,ki,kj->ij", dW[:, j], P, dP[i])
                        + np.einsum("k,ki,kj->ij", dW[:, i], dP[j], P)
                        + np.einsum("k,ki,kj->ij", dW[:, i], P, dP[j])
                        + np.einsum("k,ki,kj->ij", Wij, P, P)
                    ) / rho2
                    d2b = -solve(d2M @ b + dM[i] @ db[j] + dM[j] @ db[i])
                    d2s = Pij @ b + dP[i] @ db[j] + dP[j] @ db[i] + P @ d2b
                    values[alpha] = (
                        (d2s * W + ds[i] * dW[:, j] + ds[j] * dW[:, i] + s * Wij)
                        / rho2
                        / self.rho**2
                    )
        return ShapeRow(point=x, indices=idx, values=values)

    def table(
        self,
        points: np.ndarray,
        mask: Optional[Iterable[MultiIndex]] = None,
    ) -> ShapeTable:
        """Evaluate shape rows at every point and pack them as CSR matrices."""
        mask_t = _normalize_mask(mask)
        pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
        n = self.nodes.size
        indptr = [0]
        indices: List[np.ndarray] = []
        data: Dict[MultiIndex, List[np.ndarray]] = {a: [] for a in mask_t}
        for row, x in enumerate(pts):
            try:
                shape_row = self.shape_values(x, mask_t)
            except VipError as err:
                raise row_failure(err, row, x)
            indices.append(shape_row.indices)
            indptr.append(indptr[-1] + shape_row.indices.size)
            for alpha in mask_t:
                data[alpha].append(shape_row.values[alpha])
        col = np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64)
        ptr = np.asarray(indptr, dtype=np.int64)
        matrices = {
            alpha: sp.csr_matrix(
                (
                    np.concatenate(data[alpha]) if data[alpha] else np.zeros(0),
                    col,
                    ptr,
                ),
                shape=(pts.shape[0], n),
            )
            for alpha in mask_t
        }
        logger.debug(
            "Built shape table",
            extra={"points": pts.shape[0], "nodes": n, "mask": mask_t},
        )
        return ShapeTable(points=pts, n_nodes=n, mask=mask_t, matrices=matrices)

    def project(self, coefficients: np.ndarray, x: Sequence[float]) -> float:
        row = self.shape_values(x)
        return float(row[VALUE] @ np.asarray(coefficients, dtype=float)[row.indices])


def _condition(M: np.ndarray) -> float:
    eig = np.linalg.eigvalsh(M)
    if eig[0] <= 0:
        return float("inf")
    return float(eig[-1] / eig[0])


# Functional interface


def eval_monomials(basis: PolynomialBasis, z: Sequence[float]) -> np.ndarray:
    """P_m(z) in the fixed monomial order."""
    return basis.evaluate(np.asarray(z, dtype=float))


def eval_window(
    window: WindowFunction, z: Sequence[float]
) -> Tuple[float, np.ndarray, np.ndarray]:
    """(value, gradient, hessian) of the window at a scaled point."""
    value, grad, hess = window.evaluate(np.asarray(z, dtype=float))
    return float(value), grad, hess


def moment_matrix(
    x: Sequence[float], nodes: "NodeSet", rho: float, basis: PolynomialBasis
) -> MomentMatrix:
    return MLSRKKernel(nodes, rho, basis).moment_matrix(x)


def shape_values(
    x: Sequence[float],
    nodes: "NodeSet",
    rho: float,
    basis: PolynomialBasis,
    mask: Optional[Iterable[MultiIndex]] = None,
) -> ShapeRow:
    return MLSRKKernel(nodes, rho, basis).shape_values(x, mask)


def discrete_projection(
    nodes: "NodeSet",
    coefficients: np.ndarray,
    x: Sequence[float],
    rho: float,
    basis: PolynomialBasis,
) -> float:
    """Gamma u(x) = sum_I Psi_I(x) u_I."""
    return MLSRKKernel(nodes, rho, basis).project(coefficients, x)
