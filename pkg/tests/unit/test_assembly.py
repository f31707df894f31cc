"""
Unit tests for the sparse VIP operators and the saddle system layout.
"""

import numpy as np
import pytest
import scipy.io

from vip_flow.assembly import (
    BoundaryCondition,
    FlowField,
    assemble_divergence_staggered,
    assemble_gradient_direct,
    assemble_gradient_staggered,
    assemble_interpolation,
    assemble_laplacian_composite,
    assemble_laplacian_direct,
    export_operators,
    staggered_differences,
)
from vip_flow.builders import AssemblyConfig, ProblemBuilder
from vip_flow.errors import DegreeTooLowError, DimensionMismatchError
from vip_flow.geometry import staggered_points, virtual_grid
from vip_flow.kernel import MLSRKKernel, PolynomialBasis


class TestOperators:
    """Interpolation, staggered and direct derivative operators."""

    @pytest.mark.unit
    def test_interpolation_of_constant(self, periodic_kernel, rng):
        """Gamma of a constant is that constant everywhere."""
        points = rng.uniform(0.0, 1.0, size=(12, 2))
        interp = assemble_interpolation(periodic_kernel, points)
        assert interp.shape == (12, 64)
        np.testing.assert_allclose(interp @ np.full(64, 3.0), 3.0, atol=1e-12)

    @pytest.mark.unit
    def test_interpolation_of_no_points(self, periodic_kernel):
        """An empty evaluation set gives an empty operator."""
        assert assemble_interpolation(periodic_kernel, np.zeros((0, 2))).shape == (0, 64)

    @pytest.mark.unit
    def test_divergence_annihilates_constants(self, periodic_kernel, periodic_grid):
        """D* of a constant velocity vanishes."""
        stencil = staggered_points(periodic_grid)
        div = assemble_divergence_staggered(periodic_kernel, stencil)
        assert div.shape == (64, 128)
        np.testing.assert_allclose(div @ np.concatenate([np.ones(64), 2 * np.ones(64)]), 0.0, atol=1e-10)

    @pytest.mark.unit
    def test_staggered_gradient_exact_for_quadratics(self, bounded_kernel):
        """Half-step central differences of a reproduced quadratic are exact."""
        grid = virtual_grid(bounded_kernel.nodes.domain, 1 / 8)
        grad = assemble_gradient_staggered(bounded_kernel, staggered_points(grid))
        x, y = bounded_kernel.nodes.positions.T
        values = x**2 + 3 * x * y - y**2
        px, py = grid.points.T
        expected = np.concatenate([2 * px + 3 * py, 3 * px - 2 * py])
        np.testing.assert_allclose(grad @ values, expected, atol=1e-9)

    @pytest.mark.unit
    def test_staggered_blocks_share_differences(self, periodic_kernel, periodic_grid):
        """D and D* are stacked from the same (Dx, Dy) pair."""
        stencil = staggered_points(periodic_grid)
        dx, dy = staggered_differences(periodic_kernel, stencil)
        grad = assemble_gradient_staggered(periodic_kernel, stencil, (dx, dy))
        div = assemble_divergence_staggered(periodic_kernel, stencil, (dx, dy))
        assert abs(grad[:64] - div[:, :64]).max() == 0.0
        assert abs(grad[64:] - dy).max() == 0.0

    @pytest.mark.unit
    def test_direct_laplacian_exact_for_quadratics(self, bounded_kernel):
        """Lap(x^2 + 3y^2) = 8 at every evaluation point."""
        grid = virtual_grid(bounded_kernel.nodes.domain, 1 / 8)
        lap = assemble_laplacian_direct(bounded_kernel, grid.points)
        x, y = bounded_kernel.nodes.positions.T
        np.testing.assert_allclose(lap @ (x**2 + 3 * y**2), 8.0, atol=1e-7)

    @pytest.mark.unit
    def test_direct_operators_need_degree(self, periodic_nodes):
        """Direct Laplacian needs m >= 2, direct gradient m >= 1."""
        linear = MLSRKKernel(periodic_nodes, 2.6 / 8, PolynomialBasis(1))
        constant = MLSRKKernel(periodic_nodes, 2.6 / 8, PolynomialBasis(0))
        points = np.array([[0.5, 0.5]])
        with pytest.raises(DegreeTooLowError):
            assemble_laplacian_direct(linear, points)
        with pytest.raises(DegreeTooLowError) as exc_info:
            assemble_gradient_direct(constant, points)
        assert exc_info.value.context["required"] == 1

    @pytest.mark.unit
    def test_composite_laplacian_is_negative_semidefinite(self, periodic_kernel, periodic_grid, rng):
        """<A u, u> = -|D u|^2 on a periodic lattice."""
        stencil = staggered_points(periodic_grid)
        div = assemble_divergence_staggered(periodic_kernel, stencil)
        grad = assemble_gradient_staggered(periodic_kernel, stencil)
        lap = assemble_laplacian_composite(div, grad, blocked=False)
        for _ in range(5):
            u = rng.standard_normal(64)
            lhs = u @ (lap @ u)
            rhs = -np.sum((grad @ u) ** 2)
            assert lhs == pytest.approx(rhs, rel=1e-10)

    @pytest.mark.unit
    def test_composite_laplacian_blocked_shape(self, periodic_kernel, periodic_grid):
        """Blocked form is block-diagonal over both velocity components."""
        stencil = staggered_points(periodic_grid)
        div = assemble_divergence_staggered(periodic_kernel, stencil)
        grad = assemble_gradient_staggered(periodic_kernel, stencil)
        blocked = assemble_laplacian_composite(div, grad)
        scalar = assemble_laplacian_composite(div, grad, blocked=False)
        assert blocked.shape == (128, 128)
        assert abs(blocked[:64, 64:]).max() == 0.0
        assert abs(blocked[64:, 64:] - scalar).max() == 0.0

    @pytest.mark.unit
    def test_composite_laplacian_needs_colocation(self, bounded_kernel):
        """N != M on a walled domain: the composition is refused."""
        grid = virtual_grid(bounded_kernel.nodes.domain, 1 / 8)
        stencil = staggered_points(grid)
        div = assemble_divergence_staggered(bounded_kernel, stencil)
        grad = assemble_gradient_staggered(bounded_kernel, stencil)
        with pytest.raises(DimensionMismatchError):
            assemble_laplacian_composite(div, grad)

    @pytest.mark.unit
    def test_small_entries_pruned(self, periodic_kernel, periodic_grid):
        """No stored entry is below 1e-14 in magnitude."""
        div = assemble_divergence_staggered(periodic_kernel, staggered_points(periodic_grid))
        assert np.all(np.abs(div.data) >= 1e-14)


class TestFlowField:
    """Coefficient containers."""

    @pytest.mark.unit
    def test_components(self):
        """u, v and P views of the coefficient vectors."""
        field_ = FlowField(U=np.arange(6.0), P=np.array([7.0, 8.0, 9.0]))
        np.testing.assert_array_equal(field_.u, [0, 1, 2])
        np.testing.assert_array_equal(field_.v, [3, 4, 5])
        np.testing.assert_array_equal(field_.vector, [0, 1, 2, 3, 4, 5, 7, 8, 9])
        assert FlowField.from_vector(field_.vector).n_nodes == 3

    @pytest.mark.unit
    def test_size_mismatch(self):
        """U must hold two components per pressure coefficient."""
        with pytest.raises(DimensionMismatchError):
            FlowField(U=np.zeros(5), P=np.zeros(3))

    @pytest.mark.unit
    def test_arithmetic(self):
        """Sum, difference and scaling act on every coefficient."""
        a = FlowField(U=np.ones(4), P=np.ones(2))
        b = FlowField.zeros(2)
        np.testing.assert_array_equal((a - b).vector, a.vector)
        np.testing.assert_array_equal((a + a).scaled(0.5).vector, a.vector)


class TestSaddleSystem:
    """Row layout of the assembled Stokes system."""

    @pytest.mark.unit
    def test_periodic_counts(self, periodic_problem):
        """3N unknowns, 3M rows plus three gauges."""
        system = periodic_problem.system
        assert system.n_unknowns == 192
        assert [g.name for g in system.gauges] == ["pressure_mean", "velocity_x_mean", "velocity_y_mean"]
        assert system.matrix().shape == (195, 192)
        assert system.laplacian_mode == "composite"

    @pytest.mark.unit
    def test_bounded_counts(self, bounded_problem):
        """Dirichlet and boundary divergence rows for each of the 36 wall nodes."""
        system = bounded_problem.system
        assert system.n_nodes == 100
        assert system.n_boundary == 36
        assert system.matrix().shape == (2 * 100 + 100 + 1, 300)
        slices = system.row_slices()
        assert slices["momentum_x"] == slice(0, 100)
        assert slices["continuity"] == slice(200, 300)
        assert system.laplacian_mode == "direct"

    @pytest.mark.unit
    def test_rhs_layout(self, bounded_problem):
        """Forcing at virtual points, wall data after each momentum block."""
        system = bounded_problem.system
        forcing = np.column_stack([np.full(64, 1.0), np.full(64, 2.0)])
        boundary = (np.full(36, 3.0), np.full(36, 4.0))
        rhs = system.rhs(forcing, boundary)
        assert rhs.shape == (301,)
        np.testing.assert_array_equal(rhs[:64], 1.0)
        np.testing.assert_array_equal(rhs[64:100], 3.0)
        np.testing.assert_array_equal(rhs[100:164], 2.0)
        np.testing.assert_array_equal(rhs[164:200], 4.0)
        np.testing.assert_array_equal(rhs[200:], 0.0)

    @pytest.mark.unit
    def test_rhs_rejects_wrong_forcing_size(self, periodic_problem):
        """A forcing vector of the wrong length is a dimension mismatch."""
        with pytest.raises(DimensionMismatchError):
            periodic_problem.system.rhs(np.zeros(10))

    @pytest.mark.unit
    def test_rhs_uses_boundary_condition(self, bounded_domain):
        """Without explicit wall values the boundary condition is sampled."""
        problem = (
            ProblemBuilder()
            .with_domain(bounded_domain)
            .with_spacing(1 / 8)
            .with_boundary(BoundaryCondition(velocity=lambda x, y: (x + y, 0.0 * x)))
            .build()
        )
        system = problem.system
        rhs = system.rhs()
        walls = system.boundary_points
        np.testing.assert_allclose(rhs[64:100], walls[:, 0] + walls[:, 1])

    @pytest.mark.unit
    def test_viscosity_scales_momentum(self, periodic_problem):
        """with_viscosity only rescales the momentum block."""
        system = periodic_problem.system
        slow = system.with_viscosity(0.25)
        diff = slow.momentum_block() - 0.25 * system.momentum_block()
        assert abs(diff).max() < 1e-12
        assert abs(slow.div - system.div).max() == 0.0

    @pytest.mark.unit
    def test_direct_gradient_mode(self, periodic_domain):
        """gradient_mode = direct collocates the pressure gradient."""
        problem = (
            ProblemBuilder()
            .with_domain(periodic_domain)
            .with_spacing(1 / 8)
            .with_assembly(AssemblyConfig(laplacian_mode="direct", gradient_mode="direct"))
            .build()
        )
        system = problem.system
        assert system.grad_p.shape == (128, 64)
        assert abs(system.grad_p - system.velocity_grad).max() > 0.0

    @pytest.mark.unit
    def test_export_operators(self, periodic_problem, tmp_path):
        """Matrix Market dumps read back with the same shapes."""
        paths = export_operators(periodic_problem.system, tmp_path / "ops")
        names = sorted(p.name for p in paths)
        assert names == ["A.mtx", "D.mtx", "Dstar.mtx", "system.mtx"]
        system = scipy.io.mmread(str(tmp_path / "ops" / "system.mtx"))
        assert system.shape == (195, 192)
        dstar = scipy.io.mmread(str(tmp_path / "ops" / "Dstar.mtx"))
        assert dstar.shape == (64, 128)
