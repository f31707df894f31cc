"""
Shared test configuration and fixtures.
"""

import numpy as np
import pytest

from vip_flow.builders import ProblemBuilder
from vip_flow.geometry import generate_regular, virtual_grid
from vip_flow.kernel import MLSRKKernel, PolynomialBasis
from vip_flow.models import Domain


def pytest_configure(config):
    """Register the test markers."""
    config.addinivalue_line("markers", "unit: Fast tests of a single module")
    config.addinivalue_line("markers", "integration: Tests spanning several modules")
    config.addinivalue_line("markers", "e2e: Full benchmark runs and CLI round trips")
    config.addinivalue_line("markers", "slow: Runs that take more than a few seconds")


@pytest.fixture
def periodic_domain():
    """Fully periodic unit square."""
    return Domain.unit_square(periodic=True)


@pytest.fixture
def bounded_domain():
    """Unit square with walls on every side."""
    return Domain.unit_square(periodic=False)


@pytest.fixture
def basis2():
    return PolynomialBasis(2)


@pytest.fixture
def periodic_nodes(periodic_domain):
    """Regular lattice, h = 1/8, on the periodic square."""
    return generate_regular(periodic_domain, 1 / 8)


@pytest.fixture
def bounded_nodes(bounded_domain):
    """Regular lattice plus wall nodes, h = 1/8, on the bounded square."""
    return generate_regular(bounded_domain, 1 / 8)


@pytest.fixture
def periodic_kernel(periodic_nodes, basis2):
    return MLSRKKernel(periodic_nodes, 2.6 / 8, basis2)


@pytest.fixture
def bounded_kernel(bounded_nodes, basis2):
    return MLSRKKernel(bounded_nodes, 2.6 / 8, basis2)


@pytest.fixture
def periodic_grid(periodic_domain):
    return virtual_grid(periodic_domain, 1 / 8)


@pytest.fixture
def periodic_problem(periodic_domain):
    """Stokes problem on the periodic square, h = 1/8."""
    return ProblemBuilder().with_domain(periodic_domain).with_spacing(1 / 8).build()


@pytest.fixture
def bounded_problem(bounded_domain):
    """No-slip Stokes problem on the bounded square, h = 1/8."""
    return ProblemBuilder().with_domain(bounded_domain).with_spacing(1 / 8).build()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def write_config(tmp_path):
    """Write a config file from text and return its path."""

    def _write(text, name="run.cfg"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
