"""
Unit tests for the saddle solver, the factorization cache and the inf-sup
estimate.
"""

import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp

from vip_flow.assembly import FlowField
from vip_flow.builders import ProblemBuilder, SolverConfig
from vip_flow.errors import NoConvergenceError, SingularSystemError, TooLargeError
from vip_flow.harness import POLYNOMIAL_STOKES
from vip_flow.models import Domain
from vip_flow.navier_stokes import cavity_problem
from vip_flow.solver import (
    FactorizationCache,
    SolveReport,
    apply_gauges,
    border_columns,
    bordered_matrix,
    equilibrate,
    estimate_infsup,
    matrix_digest,
    null_modes,
    solve_stokes,
)


def _polynomial_problem(h, perturbation=0.0):
    return (
        ProblemBuilder()
        .with_domain(Domain.unit_square(periodic=False))
        .with_spacing(h)
        .with_perturbation(perturbation, seed=3)
        .with_dirichlet(POLYNOMIAL_STOKES.velocity)
        .with_forcing(POLYNOMIAL_STOKES.forcing)
        .build()
    )


def _refined_problem(h):
    return (
        ProblemBuilder()
        .with_domain(Domain.unit_square(periodic=True))
        .with_spacing(h)
        .with_layout("refined")
        .build()
    )


def _velocity_error(problem, computed):
    truth = FlowField.sample(problem.nodes, POLYNOMIAL_STOKES.velocity)
    return float(np.max(np.abs(computed.U - truth.U)))


def _core(system):
    """Row-scaled matrix without the gauge rows."""
    return equilibrate(system.matrix()[: system.n_rows - len(system.gauges)])[0]


class TestSolveStokes:
    """Direct solves of the Stokes system."""

    @pytest.mark.unit
    def test_zero_forcing_gives_zero_field(self, periodic_problem):
        """No forcing and no wall data: the gauged solution is zero."""
        computed, report = solve_stokes(periodic_problem.system, cache=FactorizationCache())
        assert np.max(np.abs(computed.vector)) < 1e-10
        assert report.method == "dense-svd"

    @pytest.mark.unit
    def test_polynomial_solution_dense(self):
        """Quadratic velocity, linear pressure: reproduced exactly."""
        problem = _polynomial_problem(1 / 8)
        computed, report = solve_stokes(problem.system, problem.forcing, SolverConfig.create_direct())
        assert _velocity_error(problem, computed) < 1e-7
        assert report.residual_norm < 1e-9
        assert report.relaxation < 1e-9

    @pytest.mark.unit
    def test_polynomial_solution_sparse(self):
        """The bordered sparse LU path reproduces it too, on perturbed nodes."""
        problem = _polynomial_problem(1 / 8, perturbation=0.2)
        config = SolverConfig.create_direct(dense_limit=0)
        computed, report = solve_stokes(problem.system, problem.forcing, config, cache=FactorizationCache())
        assert report.method == "sparse-lu"
        assert _velocity_error(problem, computed) < 1e-7

    @pytest.mark.unit
    def test_lid_data_is_made_consistent(self):
        """Walled cavity: continuity holds and the residual meets the tolerance."""
        problem = cavity_problem(1 / 8)
        computed, report = solve_stokes(problem.system, cache=FactorizationCache())
        assert report.residual_norm <= 1e-10
        assert report.continuity_residual <= 1e-10
        assert np.max(np.abs(computed.U)) > 0.1

    @pytest.mark.unit
    def test_residual_above_tolerance_raises(self, bounded_problem, mocker):
        """A solve that misses the system is an error, not a warning."""
        n = bounded_problem.system.n_unknowns
        factor = mocker.Mock(rank=1, null_dim=0)
        factor.solve.side_effect = lambda b: (np.ones(n), np.zeros_like(b))
        mocker.patch("vip_flow.solver._dense_factor", return_value=factor)
        with pytest.raises(SingularSystemError) as exc_info:
            solve_stokes(bounded_problem.system, cache=FactorizationCache())
        assert exc_info.value.context["tolerance"] == pytest.approx(1e-10)

    @pytest.mark.unit
    def test_gauges_applied(self, periodic_problem, rng):
        """Pressure and, on periodic domains, both velocities are mean-free."""
        forcing = rng.standard_normal(2 * periodic_problem.system.n_points)
        computed, report = solve_stokes(periodic_problem.system, forcing)
        assert abs(computed.P.mean()) < 1e-12
        assert abs(computed.u.mean()) < 1e-12
        assert abs(computed.v.mean()) < 1e-12
        assert set(report.gauge_residuals) == {"pressure_mean", "velocity_x_mean", "velocity_y_mean"}

    @pytest.mark.unit
    def test_gauges_commute_with_the_solve(self, periodic_problem, rng, mocker):
        """The raw solution already satisfies the gauges, so shifting changes nothing."""
        system = periodic_problem.system
        forcing = rng.standard_normal(2 * system.n_points)
        gauged, _ = solve_stokes(system, forcing, cache=FactorizationCache())
        mocker.patch("vip_flow.solver.apply_gauges", side_effect=lambda field_, domain: field_)
        raw, _ = solve_stokes(system, forcing, cache=FactorizationCache())
        np.testing.assert_allclose(raw.vector, gauged.vector, atol=1e-12)

    @pytest.mark.unit
    def test_linear_in_the_forcing(self, periodic_problem, rng):
        """Doubling F doubles U and P."""
        system = periodic_problem.system
        forcing = rng.standard_normal(2 * system.n_points)
        single, _ = solve_stokes(system, forcing, cache=FactorizationCache())
        double, _ = solve_stokes(system, 2.0 * forcing, cache=FactorizationCache())
        scale = np.max(np.abs(single.vector))
        np.testing.assert_allclose(double.U, 2.0 * single.U, atol=1e-10 * scale)
        np.testing.assert_allclose(double.P, 2.0 * single.P, atol=1e-10 * scale)

    @pytest.mark.unit
    def test_apply_gauges_bounded_keeps_velocity(self, bounded_domain):
        """On walled domains only the pressure is shifted."""
        field_ = FlowField(U=np.arange(4.0) + 1.0, P=np.array([1.0, 3.0]))
        gauged = apply_gauges(field_, bounded_domain)
        np.testing.assert_array_equal(gauged.U, field_.U)
        np.testing.assert_array_equal(gauged.P, [-1.0, 1.0])

    @pytest.mark.unit
    def test_iterative_failure_raises(self, bounded_problem, mocker):
        """A GMRES breakdown surfaces as NoConvergenceError."""
        mocker.patch("vip_flow.solver.spla.spilu", return_value=mocker.Mock(solve=lambda r: r))
        mocker.patch(
            "vip_flow.solver.spla.gmres",
            side_effect=lambda a, b, **kwargs: (np.zeros(a.shape[0]), 7),
        )
        with pytest.raises(NoConvergenceError) as exc_info:
            solve_stokes(bounded_problem.system, config=SolverConfig.create_iterative())
        assert exc_info.value.context["method"] == "gmres"
        assert exc_info.value.last_iterate.shape == (bounded_problem.system.n_unknowns,)

    @pytest.mark.unit
    def test_report_text_is_sorted(self):
        """to_text emits sorted key=repr lines."""
        report = SolveReport(method="dense-svd", residual_norm=1e-12, continuity_residual=0.0)
        lines = report.to_text().splitlines()
        assert lines == sorted(lines)
        assert "method='dense-svd'" in lines
        assert "relaxation=0.0" in lines


class TestSingularModes:
    """Systems whose matrix has pressure or velocity null modes."""

    @pytest.mark.unit
    def test_collocated_periodic_lattice_has_checkerboards(self, periodic_problem):
        """Constants and alternating patterns are invisible to D."""
        modes = periodic_problem.system.pressure_modes()
        assert modes.shape[1] >= 4
        np.testing.assert_allclose(modes.T @ modes, np.eye(modes.shape[1]), atol=1e-10)
        ones = np.ones(64) / 8.0
        assert np.linalg.norm(modes @ (modes.T @ ones) - ones) < 1e-10

    @pytest.mark.unit
    def test_sparse_lu_matches_dense_on_singular_system(self, periodic_problem, rng):
        """Bordered LU and the SVD agree where the matrix has null modes."""
        system = periodic_problem.system
        forcing = rng.standard_normal(2 * system.n_points)
        dense, dense_report = solve_stokes(system, forcing, cache=FactorizationCache())
        sparse, sparse_report = solve_stokes(
            system, forcing, SolverConfig.create_direct(dense_limit=0), cache=FactorizationCache()
        )
        assert sparse_report.method == "sparse-lu"
        assert sparse_report.null_dim == dense_report.null_dim >= 4
        assert sparse_report.residual_norm <= 1e-10
        np.testing.assert_allclose(sparse.vector, dense.vector, atol=1e-8)

    @pytest.mark.unit
    def test_sparse_lu_on_walled_lattice(self):
        """Regular bounded lattice, pressure modes beyond the constant, sparse path."""
        problem = _polynomial_problem(1 / 8)
        config = SolverConfig.create_direct(dense_limit=0)
        computed, report = solve_stokes(problem.system, problem.forcing, config, cache=FactorizationCache())
        assert report.method == "sparse-lu"
        assert report.null_dim >= 1
        assert _velocity_error(problem, computed) < 1e-7


class TestBordering:
    """Square bordered systems for sparse LU."""

    @pytest.mark.unit
    def test_periodic_bordered_matrix_is_square(self, periodic_problem):
        """One border column and one constraint row per null mode."""
        core = _core(periodic_problem.system)
        modes = null_modes(periodic_problem.system, core)
        k = modes.shape[1]
        square = bordered_matrix(core, modes, border_columns(core.shape[0], k))
        assert square.shape == (192 + k, 192 + k)
        assert k >= 4

    @pytest.mark.unit
    def test_border_stays_on_given_rows(self, bounded_problem):
        """Iterative borders only touch the interior momentum rows."""
        rows = bounded_problem.system.interior_momentum_rows()
        border = border_columns(300, 2, rows)
        outside = np.setdiff1d(np.arange(300), rows)
        assert np.all(border[outside] == 0.0)
        assert np.allclose(np.abs(border).max(axis=0), 1.0)

    @pytest.mark.unit
    def test_no_modes_leaves_matrix_alone(self, bounded_problem):
        """Without null modes the matrix is returned as is."""
        core = _core(bounded_problem.system)
        square = bordered_matrix(core, np.zeros((300, 0)), np.zeros((300, 0)))
        assert square.shape == (300, 300)

class TestFactorizationCache:
    """LRU cache of factorizations."""

    @pytest.mark.unit
    def test_repeated_solve_hits_cache(self, periodic_problem, rng):
        """A second right-hand side reuses the factorization."""
        cache = FactorizationCache(max_size=2)
        system = periodic_problem.system
        _, first = solve_stokes(system, rng.standard_normal(128), cache=cache)
        _, second = solve_stokes(system, rng.standard_normal(128), cache=cache)
        assert not first.cached
        assert second.cached
        stats = cache.get_stats()
        assert stats["hits"] == 1
        assert stats["misses"] == 1

    @pytest.mark.unit
    def test_eviction(self):
        """The least recently used entry is evicted first."""
        cache = FactorizationCache(max_size=2)
        cache.put("a", 1)
        cache.put("b", 2)
        assert cache.get("a") == 1
        cache.put("c", 3)
        assert cache.get("b") is None
        assert cache.get("a") == 1
        assert len(cache) == 2
        assert cache.get_stats()["evictions"] == 1
        cache.clear()
        assert len(cache) == 0

    @pytest.mark.unit
    def test_resize_evicts_oldest(self):
        """Shrinking the cache drops the oldest entries."""
        cache = FactorizationCache(max_size=3)
        for key in "abc":
            cache.put(key, key)
        cache.resize(1)
        assert len(cache) == 1
        assert cache.get("c") == "c"
        assert cache.get_stats()["evictions"] == 2

    @pytest.mark.unit
    def test_digest(self):
        """Equal matrices share a digest; different values or tags do not."""
        a = sp.csr_matrix(np.array([[1.0, 0.0], [2.0, 3.0]]))
        b = sp.csr_matrix(np.array([[1.0, 0.0], [2.0, 3.5]]))
        assert matrix_digest(a) == matrix_digest(a.copy())
        assert matrix_digest(a) != matrix_digest(b)
        assert matrix_digest(a, "dense-svd") != matrix_digest(a, "sparse-lu")


class TestInfSup:
    """Dense inf-sup estimate."""

    @pytest.mark.unit
    def test_collocated_lattice_is_not_stable(self, periodic_problem):
        """With N = M the alternating pressures are invisible and mu is zero."""
        estimate = estimate_infsup(periodic_problem.system)
        assert estimate.h == pytest.approx(1 / 8)
        assert estimate.mu < 1e-6
        assert estimate.deflated == 1

    @pytest.mark.unit
    def test_positive_on_refined_lattice(self):
        """Nodes at every staggered point give a mu bounded away from zero."""
        estimate = estimate_infsup(_refined_problem(1 / 8).system)
        assert estimate.mu > 0.1
        assert estimate.deflated == 1

    @pytest.mark.unit
    def test_duplicated_continuity_row_gives_zero(self):
        """Two equal rows of D* leave their difference unbalanced."""
        system = _refined_problem(1 / 8).system
        div = sp.csr_matrix(system.div)
        duplicated = sp.vstack([div[1], div[1:]], format="csr")
        estimate = estimate_infsup(dataclasses.replace(system, div=duplicated))
        assert estimate.mu == pytest.approx(0.0, abs=1e-10)

    @pytest.mark.unit
    def test_blind_divergence_gives_zero(self, periodic_problem):
        """A divergence that sees no velocity leaves every pressure unbalanced."""
        system = periodic_problem.system
        degenerate = dataclasses.replace(system, div=sp.csr_matrix(system.div.shape))
        estimate = estimate_infsup(degenerate)
        assert estimate.mu == 0.0

    @pytest.mark.unit
    def test_size_limit(self, periodic_problem):
        """Above the node limit the dense estimate refuses to run."""
        with pytest.raises(TooLargeError):
            estimate_infsup(periodic_problem.system, limit=32)
