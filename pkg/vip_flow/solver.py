"""
Linear solves of the VIP saddle system and the discrete inf-sup estimate.

The gauge rows are set aside and the system [momentum; Dirichlet; continuity]
is solved with every row scaled to unit max-norm. When that system is
singular its left null vectors are compatibility conditions on the data; the
part of the data that breaks them is removed from the interior momentum rows
only, with minimum norm, so the wall and continuity rows hold exactly. The
solution returned is orthogonal to the null modes, which already satisfies
the gauges.

Small systems go through a full SVD; larger ones are bordered with their null
modes and factored with sparse LU. Factorizations are kept in an LRU cache
keyed by a digest of the matrix, so repeated solves with new right-hand sides
skip the factorization.
"""

import hashlib
import logging
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import FlowField, SaddleSystem
from .builders import SolverConfig
from .errors import NoConvergenceError, SingularSystemError, TooLargeError
from .models import Domain

LOGGER = logging.getLogger(__name__)

SVD_RCOND = 1e-10
NULL_MODE_TOL = 1e-8
COUPLING_RCOND = 1e-10
BORDER_SEED = 0
INFSUP_RTOL = 1e-12
INFSUP_LIMIT = 4096


@dataclass
class SolveReport:
    """Outcome of one linear solve.

    residual_norm is measured on the row-scaled system after relaxation;
    relaxation is the relative size of the data removed from the momentum
    rows and null_dim the number of compatibility conditions behind it.
    """

    method: str
    residual_norm: float
    continuity_residual: float
    iterations: int = 0
    wall_time: float = 0.0
    rank: Optional[int] = None
    cached: bool = False
    gauge_residuals: Dict[str, float] = field(default_factory=dict)
    n_rows: int = 0
    n_unknowns: int = 0
    null_dim: int = 0
    relaxation: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "method": self.method,
            "residual_norm": self.residual_norm,
            "continuity_residual": self.continuity_residual,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "rank": self.rank,
            "cached": self.cached,
            "n_rows": self.n_rows,
            "n_unknowns": self.n_unknowns,
            "null_dim": self.null_dim,
            "relaxation": self.relaxation,
        }
        for name, value in self.gauge_residuals.items():
            out[f"gauge.{name}"] = value
        return out

    def to_text(self) -> str:
        """Flat key=value block, one entry per line."""
        return "".join(
            f"{key}={'' if value is None else value!r}\n"
            for key, value in sorted(self.to_dict().items())
        )


@dataclass
class InfSupEstimate:
    h: float
    mu: float
    method: str = "dense-schur"
    deflated: int = 0


@dataclass
class CacheStats:
    """Cache performance statistics."""

    hits: int = 0
    misses: int = 0
    evictions: int = 0
    total_requests: int = 0

    @property
    def hit_rate(self) -> float:
        return self.hits / max(self.total_requests, 1)

    @property
    def miss_rate(self) -> float:
        return self.misses / max(self.total_requests, 1)



@dataclass
class _DenseFactor:
    left: np.ndarray
    sigma: np.ndarray
    right: np.ndarray
    rank: int
    compat: np.ndarray
    relax: np.ndarray

    @property
    def null_dim(self) -> int:
        return int(self.compat.shape[1])

    def solve(self, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        relaxation = np.zeros_like(b)
        if self.null_dim:
            coeffs = np.linalg.solve(self.compat.T @ self.relax, self.compat.T @ b)
            relaxation = self.relax @ coeffs
        x = self.right.T @ ((self.left.T @ (b - relaxation)) / self.sigma)
        return x, relaxation


@dataclass
class _SparseFactor:
    lu: Any
    n_unknowns: int
    modes: np.ndarray
    relax: np.ndarray
    relax_solution: np.ndarray
    relax_multiplier: np.ndarray

    @property
    def null_dim(self) -> int:
        return int(self.modes.shape[1])

    def solve(self, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        k = self.null_dim
        out = self.lu.solve(np.concatenate([b, np.zeros(k)]))
        x = out[: self.n_unknowns]
        if not k:
            return x, np.zeros_like(b)
        # cancel the auxiliary border against the precomputed relaxation solves
        coeffs = np.linalg.solve(self.relax_multiplier, out[self.n_unknowns:])
        return x - self.relax_solution @ coeffs, self.relax @ coeffs

class FactorizationCache:
    """Thread-safe LRU of matrix factorizations."""

    def __init__(self, max_size: int = 4):
        self.max_size = max_size
        self._entries: "OrderedDict[str, Any]" = OrderedDict()
        self._lock = threading.RLock()
        self.stats = CacheStats()

    def get(self, key: str) -> Optional[Any]:
        with self._lock:
            self.stats.total_requests += 1
            if key in self._entries:
                self._entries.move_to_end(key)
                self.stats.hits += 1
                return self._entries[key]
            self.stats.misses += 1
            return None

    def put(self, key: str, value: Any) -> None:
        if self.max_size <= 0:
            return
        with self._lock:
            while len(self._entries) >= self.max_size:
                oldest, _ = self._entries.popitem(last=False)
                self.stats.evictions += 1
                LOGGER.debug(f"Evicted factorization: {oldest[:12]}")
            self._entries[key] = value

    def resize(self, max_size: int) -> None:
        with self._lock:
            self.max_size = max_size
            while len(self._entries) > max(max_size, 0):
                self._entries.popitem(last=False)
                self.stats.evictions += 1

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
            LOGGER.info("Factorization cache cleared")

    def __len__(self) -> int:
        return len(self._entries)

    def get_stats(self) -> Dict[str, Any]:
        return {
            "hit_rate": self.stats.hit_rate,
            "miss_rate": self.stats.miss_rate,
            "hits": self.stats.hits,
            "misses": self.stats.misses,
            "evictions": self.stats.evictions,
            "total_requests": self.stats.total_requests,
            "current_cache_size": len(self),
            "max_cache_size": self.max_size,
        }


_DEFAULT_CACHE = FactorizationCache(max_size=2)


def default_cache(max_size: Optional[int] = None) -> FactorizationCache:
    """Process-wide cache used when a solve is not handed one"""
    if max_size is not None and max_size != _DEFAULT_CACHE.max_size:
        _DEFAULT_CACHE.resize(max_size)
    return _DEFAULT_CACHE


def matrix_digest(matrix: sp.spmatrix, tag: str = "") -> str:
    """sha256 over the canonical CSR arrays of a matrix."""
    csr = sp.csr_matrix(matrix)
    csr.sort_indices()
    digest = hashlib.sha256()
    digest.update(tag.encode())
    digest.update(np.asarray(csr.shape, dtype=np.int64).tobytes())
    digest.update(np.ascontiguousarray(csr.indptr, dtype=np.int64).tobytes())
    digest.update(np.ascontiguousarray(csr.indices, dtype=np.int64).tobytes())
    digest.update(np.ascontiguousarray(csr.data, dtype=np.float64).tobytes())
    return digest.hexdigest()



def equilibrate(matrix: sp.spmatrix) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Scale every row to unit max-norm; empty rows keep scale 1."""
    csr = sp.csr_matrix(matrix, dtype=float)
    peak = np.asarray(abs(csr).max(axis=1).toarray()).ravel()
    scale = np.ones_like(peak)
    scale[peak > 0.0] = 1.0 / peak[peak > 0.0]
    return sp.csr_matrix(sp.diags(scale) @ csr), scale


def relaxation_basis(compat: np.ndarray, relaxable: np.ndarray) -> np.ndarray:
    """
    Directions along which the data may be relaxed: the left null vectors
    cut down to the relaxable rows, or left whole when the cut loses rank.
    """
    if compat.shape[1] == 0:
        return compat
    restricted = np.zeros_like(compat)
    restricted[relaxable] = compat[relaxable]
    coupling = compat.T @ restricted
    if np.linalg.cond(coupling) > 1.0 / COUPLING_RCOND:
        LOGGER.warning(
            "Compatibility conditions reach beyond the momentum rows",
            extra={"null_dim": compat.shape[1]},
        )
        return compat
    return restricted


def null_modes(system: SaddleSystem, matrix: sp.spmatrix) -> np.ndarray:
    """Candidate null modes of the system that the given matrix annihilates."""
    try:
        candidates = system.null_mode_candidates()
    except TooLargeError as exc:
        LOGGER.warning("Null modes limited to the gauge directions", extra={"reason": str(exc)})
        candidates = np.column_stack(
            [g.row / np.linalg.norm(g.row) for g in system.gauges]
        )
    norms = np.linalg.norm(matrix @ candidates, axis=0)
    return candidates[:, norms <= NULL_MODE_TOL]


def _unit_columns(values: np.ndarray) -> np.ndarray:
    peak = np.abs(values).max(axis=0) if values.shape[0] else np.ones(values.shape[1])
    return values / np.where(peak > 0.0, peak, 1.0)


def border_columns(n_rows: int, k: int, rows: Optional[np.ndarray] = None) -> np.ndarray:
    """Seeded random columns of unit max-norm, supported on rows if given."""
    rng = np.random.default_rng(BORDER_SEED)
    border = np.zeros((n_rows, k))
    support = np.arange(n_rows) if rows is None else rows
    border[support] = rng.standard_normal((support.size, k))
    return _unit_columns(border)


def bordered_matrix(
    matrix: sp.spmatrix, modes: np.ndarray, border: np.ndarray
) -> sp.csc_matrix:
    """
    Square [[K, R], [Z^T, 0]] with one border column and one constraint row
    per null mode.
    """
    if modes.shape[1] == 0:
        return sp.csc_matrix(matrix)
    return sp.csc_matrix(
        sp.bmat(
            [
                [matrix, sp.csr_matrix(border)],
                [sp.csr_matrix(_unit_columns(modes).T), None],
            ]
        )
    )


def _dense_factor(matrix: sp.spmatrix, relaxable: np.ndarray) -> _DenseFactor:
    left, sigma, right = scipy.linalg.svd(
        matrix.toarray(), full_matrices=True, lapack_driver="gesdd"
    )
    if sigma.size == 0 or sigma[0] == 0.0:
        raise SingularSystemError("matrix is zero")
    rank = int(np.sum(sigma > SVD_RCOND * sigma[0]))
    compat = left[:, rank:]
    return _DenseFactor(
        left=left[:, :rank],
        sigma=sigma[:rank],
        right=right[:rank],
        rank=rank,
        compat=compat,
        relax=relaxation_basis(compat, relaxable),
    )


def _sparse_factor(
    matrix: sp.spmatrix, modes: np.ndarray, relaxable: np.ndarray
) -> _SparseFactor:
    n_rows, n = matrix.shape
    if n_rows != n:
        raise SingularSystemError(
            f"sparse LU needs a square system, got {n_rows}x{n}"
        )
    k = modes.shape[1]
    square = bordered_matrix(matrix, modes, border_columns(n_rows, k))
    try:
        lu = spla.splu(square, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularSystemError("sparse LU failed", cause=exc) from exc
    if not k:
        empty = np.zeros((n_rows, 0))
        return _SparseFactor(lu, n, modes, empty, np.zeros((n, 0)), np.zeros((0, 0)))

    # transposed solves with R^T y = e_j give the left null vectors
    unit = np.zeros((n_rows + k, k))
    unit[n_rows:] = np.eye(k)
    compat = lu.solve(unit, trans="T")[:n_rows]
    relax = relaxation_basis(compat, relaxable)
    lifted = lu.solve(np.vstack([relax, np.zeros((k, k))]))
    return _SparseFactor(
        lu=lu,
        n_unknowns=n,
        modes=modes,
        relax=relax,
        relax_solution=lifted[:n],
        relax_multiplier=lifted[n:],
    )


def _iterative_solve(
    matrix: sp.spmatrix,
    modes: np.ndarray,
    relaxable: np.ndarray,
    rhs: np.ndarray,
    config: SolverConfig,
) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    GMRES on the bordered system, velocity-block ILU preconditioned.

    The border columns live on the relaxable rows, so the relaxation stays
    on the momentum equations.
    """
    n_rows, n = matrix.shape
    if n_rows != n:
        raise SingularSystemError(f"GMRES needs a square system, got {n_rows}x{n}")
    k = modes.shape[1]
    border = border_columns(n_rows, k, relaxable)
    square = sp.csr_matrix(bordered_matrix(matrix, modes, border))
    n_vel = 2 * (n // 3)
    velocity_block = sp.csc_matrix(square[:n_vel, :n_vel])
    try:
        ilu = spla.spilu(velocity_block, drop_tol=1e-5, fill_factor=20)
    except RuntimeError as exc:
        raise SingularSystemError("incomplete LU of the velocity block failed", cause=exc) from exc

    def apply(r: np.ndarray) -> np.ndarray:
        z = np.array(r, dtype=float, copy=True)
        z[:n_vel] = ilu.solve(r[:n_vel])
        return z

    preconditioner = spla.LinearOperator(square.shape, matvec=apply)
    iterations = 0

    def count(_: Any) -> None:
        nonlocal iterations
        iterations += 1

    full_rhs = np.concatenate([rhs, np.zeros(k)])
    x, info = spla.gmres(
        square,
        full_rhs,
        rtol=config.tolerance,
        atol=0.0,
        restart=200,
        maxiter=config.max_iter,
        M=preconditioner,
        callback=count,
        callback_type="pr_norm",
    )
    if info != 0:
        residual = float(
            np.linalg.norm(square @ x - full_rhs) / max(np.linalg.norm(full_rhs), 1e-300)
        )
        raise NoConvergenceError("gmres", iterations, residual, last_iterate=x[:n])
    return x[:n], border @ x[n:], iterations


def solve_least_squares(
    system: SaddleSystem,
    matrix: sp.spmatrix,
    rhs: np.ndarray,
    config: Optional[SolverConfig] = None,
    cache: Optional[FactorizationCache] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """
    Solve matrix @ x = rhs by the configured path.

    matrix and rhs carry the gauge rows last; those rows are left out of the
    solve. Raises SingularSystemError when the relaxed residual is above the
    configured tolerance.
    """
    config = config or SolverConfig()
    if cache is None and config.cache_enabled:
        cache = default_cache(config.cache_size)
    start = time.perf_counter()
    n_rows, n_unknowns = matrix.shape
    core_rows = n_rows - len(system.gauges)
    scaled, scale = equilibrate(sp.csr_matrix(matrix)[:core_rows])
    b = scale * np.asarray(rhs, dtype=float)[:core_rows]
    relaxable = system.interior_momentum_rows()
    iterations = 0
    rank: Optional[int] = None
    cached = False

    if config.method == "iterative":
        modes = null_modes(system, scaled)
        x, relaxation, iterations = _iterative_solve(scaled, modes, relaxable, b, config)
        method = "gmres"
        null_dim = modes.shape[1]
    else:
        dense = n_unknowns <= config.dense_limit
        method = "dense-svd" if dense else "sparse-lu"
        key = matrix_digest(matrix, method) if cache is not None else None
        factor = cache.get(key) if cache is not None and key else None
        cached = factor is not None
        if factor is None:
            if dense:
                factor = _dense_factor(scaled, relaxable)
            else:
                factor = _sparse_factor(scaled, null_modes(system, scaled), relaxable)
            if cache is not None and key:
                cache.put(key, factor)
        x, relaxation = factor.solve(b)
        null_dim = factor.null_dim
        if dense:
            rank = factor.rank

    if not np.all(np.isfinite(x)):
        raise SingularSystemError("solution contains non-finite values")
    b_norm = float(np.linalg.norm(b))
    residual = float(np.linalg.norm(scaled @ x - (b - relaxation)))
    relative = residual / b_norm if b_norm > 0 else residual
    relaxed = float(np.linalg.norm(relaxation))
    report = SolveReport(
        method=method,
        residual_norm=relative,
        continuity_residual=0.0,
        iterations=iterations,
        wall_time=time.perf_counter() - start,
        rank=rank,
        cached=cached,
        n_rows=n_rows,
        n_unknowns=n_unknowns,
        null_dim=null_dim,
        relaxation=relaxed / b_norm if b_norm > 0 else relaxed,
    )
    if relative > config.tolerance:
        raise SingularSystemError(
            "residual above tolerance",
            context={"residual": relative, "tolerance": config.tolerance, "method": method},
        )
    if null_dim:
        LOGGER.debug(
            "Relaxed incompatible data",
            extra={"null_dim": null_dim, "relaxation": report.relaxation, "method": method},
        )
    return x, report


def apply_gauges(field_: FlowField, domain: Domain) -> FlowField:
    """Mean-free pressure, and mean-free velocity on fully periodic domains."""
    n = field_.n_nodes
    P = field_.P - field_.P.mean() if n else field_.P.copy()
    U = field_.U.copy()
    if domain.fully_periodic and n:
        U[:n] -= U[:n].mean()
        U[n:] -= U[n:].mean()
    return FlowField(U=U, P=P)


def solve_stokes(
    system: SaddleSystem,
    forcing: Any = None,
    config: Optional[SolverConfig] = None,
    cache: Optional[FactorizationCache] = None,
    boundary: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    convection: Optional[sp.spmatrix] = None,
) -> Tuple[FlowField, SolveReport]:
    """
    Solve the saddle system for (U, P).

    forcing is anything SaddleSystem.rhs accepts; convection is an optional
    (2M, 2N) block added to the interior momentum rows.
    """
    config = config or SolverConfig()
    matrix = system.matrix(convection)
    rhs = system.rhs(forcing, boundary)
    x, report = solve_least_squares(system, matrix, rhs, config, cache)
    raw = FlowField.from_vector(x)
    gauged = apply_gauges(raw, system.nodes.domain)

    continuity = system.div @ gauged.U
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    report.continuity_residual = float(np.linalg.norm(continuity)) / scale
    for gauge in system.gauges:
        report.gauge_residuals[gauge.name] = float(gauge.row @ gauged.vector)
    LOGGER.info(
        "Stokes solve finished",
        extra={
            "h": system.h,
            "method": report.method,
            "residual": report.residual_norm,
            "relaxation": report.relaxation,
            "cached": report.cached,
        },
    )
    return gauged, report


def estimate_infsup(system: SaddleSystem, limit: int = INFSUP_LIMIT) -> InfSupEstimate:
    """
    Dense estimate of mu = inf_P sup_U <D*U, P> / (|P| |DU|).

    Only the constant pressure, which the gauge fixes, is deflated. Any other
    pressure with D*^T P = 0 stays in the infimum and gives mu = 0; eigenvalues
    below 1e-12 of the largest are reported as exact zeros.
    """
    n = system.n_nodes
    m = system.n_points
    if n > limit:
        raise TooLargeError("inf-sup estimate", n, limit)

    _, sigma, right = scipy.linalg.svd(
        system.velocity_grad.toarray(), full_matrices=False, lapack_driver="gesdd"
    )
    keep = sigma**2 > INFSUP_RTOL * sigma[0] ** 2 if sigma.size else sigma > 0
    # sup_U <D*U, P> / |DU| = |W^T P|, W = D* G^+ for each velocity component
    lift = right[keep].T / sigma[keep]
    div = system.div.toarray()
    mean_free = scipy.linalg.null_space(np.ones((1, m)))
    schur = np.zeros((mean_free.shape[1], mean_free.shape[1]))
    for block in (div[:, :n], div[:, n:]):
        w = mean_free.T @ (block @ lift)
        schur += w @ w.T
    schur = 0.5 * (schur + schur.T)

    eigenvalues = scipy.linalg.eigvalsh(schur) if schur.size else np.zeros(1)
    lowest, top = float(eigenvalues[0]), float(eigenvalues[-1])
    if top <= 0.0 or lowest <= INFSUP_RTOL * top:
        lowest = 0.0
    mu = float(np.sqrt(lowest))
    deflated = m - mean_free.shape[1]
    LOGGER.info("Inf-sup estimate", extra={"h": system.h, "mu": mu, "deflated": deflated})
    return InfSupEstimate(h=system.h, mu=mu, deflated=deflated)
