"""
Builder patterns for vip_flow problems - Fluent API for assembling a solve
"""

import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np

from .assembly import BoundaryCondition, SaddleSystem, assemble_saddle_system
from .errors import ConfigError, VipError
from .geometry import NODE_LAYOUTS, NodeSet, VirtualGrid, perturb_nodes, virtual_grid
from .kernel import DEFAULT_DILATION, MLSRKKernel, PolynomialBasis
from .models import Domain

logger = logging.getLogger(__name__)

Forcing = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass
class AssemblyConfig:
    """Operator choices for the saddle system"""

    laplacian_mode: str = "composite"
    gradient_mode: str = "staggered"
    viscosity: float = 1.0

    @classmethod
    def create_periodic(cls, viscosity: float = 1.0) -> "AssemblyConfig":
        return cls(laplacian_mode="composite", viscosity=viscosity)

    @classmethod
    def create_bounded(cls, viscosity: float = 1.0) -> "AssemblyConfig":
        """Direct Laplacian; the composite form needs N = M"""
        return cls(laplacian_mode="direct", viscosity=viscosity)

    @classmethod
    def for_domain(cls, domain: Domain, viscosity: float = 1.0) -> "AssemblyConfig":
        if domain.fully_periodic:
            return cls.create_periodic(viscosity)
        return cls.create_bounded(viscosity)


@dataclass
class SolverConfig:
    """Configuration for the linear solve"""

    method: str = "direct"
    tol: Optional[float] = None
    dense_limit: int = 4000
    max_iter: int = 2000
    cache_enabled: bool = True
    cache_size: int = 2

    @property
    def tolerance(self) -> float:
        if self.tol is not None:
            return self.tol
        return 1e-10 if self.method == "direct" else 1e-8

    @classmethod
    def create_direct(cls, dense_limit: int = 4000) -> "SolverConfig":
        return cls(method="direct", dense_limit=dense_limit)

    @classmethod
    def create_iterative(cls, tol: float = 1e-8, max_iter: int = 2000) -> "SolverConfig":
        return cls(method="iterative", tol=tol, max_iter=max_iter, dense_limit=0)


@dataclass
class LoggingConfig:
    """Configuration for logging and observability"""

    enabled: bool = True
    level: str = "INFO"
    structured: bool = True
    include_context: bool = True


_STANDARD_RECORD_KEYS = set(
    logging.LogRecord("", 0, "", 0, "", (), None).__dict__
) | {"message", "asctime"}


class ContextFormatter(logging.Formatter):
    """Appends the ``extra`` fields of a record as key=value pairs"""

    def __init__(self, include_context: bool = True):
        super().__init__("%(levelname)s %(name)s: %(message)s")
        self.include_context = include_context

    def format(self, record: logging.LogRecord) -> str:
        text = super().format(record)
        if not self.include_context:
            return text
        extras = {
            key: value
            for key, value in record.__dict__.items()
            if key not in _STANDARD_RECORD_KEYS
        }
        if extras:
            text += " | " + " ".join(f"{k}={v}" for k, v in sorted(extras.items()))
        return text


def configure_logging(config: Optional[LoggingConfig] = None) -> logging.Logger:
    """Attach one stderr handler to the package logger"""
    config = config or LoggingConfig()
    root = logging.getLogger("vip_flow")
    for handler in list(root.handlers):
        if getattr(handler, "_vip_flow_handler", False):
            root.removeHandler(handler)
    if not config.enabled:
        root.setLevel(logging.CRITICAL + 1)
        return root
    handler = logging.StreamHandler(sys.stderr)
    handler._vip_flow_handler = True  # type: ignore[attr-defined]
    if config.structured:
        handler.setFormatter(ContextFormatter(config.include_context))
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(getattr(logging, config.level.upper(), logging.INFO))
    return root


@dataclass
class StokesProblem:
    """Everything needed to solve one discretized problem"""

    domain: Domain
    h: float
    nodes: NodeSet
    grid: VirtualGrid
    kernel: MLSRKKernel
    system: SaddleSystem
    forcing: Optional[Union[Forcing, np.ndarray]] = None
    bc: Optional[BoundaryCondition] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def rhs(self) -> np.ndarray:
        return self.system.rhs(self.forcing)


class ProblemBuilder:
    """
    Fluent builder for StokesProblem objects.

    Example:
        problem = (ProblemBuilder()
            .with_domain(Domain.unit_square(periodic=True))
            .with_spacing(1 / 16)
            .with_degree(2)
            .with_forcing(f)
            .build())
    """

    def __init__(self):
        self._domain: Domain = Domain.unit_square(periodic=True)
        self._h: Optional[float] = None
        self._degree: int = 2
        self._dilation: float = DEFAULT_DILATION
        self._perturbation: float = 0.0
        self._seed: int = 0
        self._layout: str = "collocated"
        self._nodes: Optional[NodeSet] = None
        self._assembly: Optional[AssemblyConfig] = None
        self._bc: Optional[BoundaryCondition] = None
        self._forcing: Optional[Union[Forcing, np.ndarray]] = None
        self._check_realization: bool = True

    def with_domain(self, domain: Domain) -> "ProblemBuilder":
        self._domain = domain
        return self

    def with_spacing(self, h: float) -> "ProblemBuilder":
        self._h = h
        return self

    def with_degree(self, degree: int) -> "ProblemBuilder":
        """Reproducing degree m of the polynomial basis"""
        self._degree = degree
        return self

    def with_dilation(self, ratio: float) -> "ProblemBuilder":
        """Dilation ratio c = rho / node spacing"""
        self._dilation = ratio
        return self

    def with_perturbation(self, amplitude: float, seed: int = 0) -> "ProblemBuilder":
        self._perturbation = amplitude
        self._seed = seed
        return self

    def with_layout(self, layout: str) -> "ProblemBuilder":
        """Node layout: collocated (N = M) or refined (spacing h/2)"""
        if layout not in NODE_LAYOUTS:
            raise ConfigError(f"unknown node layout {layout!r}")
        self._layout = layout
        return self

    def with_nodes(self, nodes: NodeSet) -> "ProblemBuilder":
        """Use a given node set instead of the regular lattice"""
        self._nodes = nodes
        return self

    def with_nodes_from_file(self, path: Union[str, Path]) -> "ProblemBuilder":
        from .io import read_nodes

        self._nodes = read_nodes(path, self._domain, spacing=self._h)
        return self

    def with_assembly(self, config: AssemblyConfig) -> "ProblemBuilder":
        self._assembly = config
        return self

    def with_dirichlet(
        self, velocity: Optional[Callable[..., Tuple[np.ndarray, np.ndarray]]] = None
    ) -> "ProblemBuilder":
        """Velocity Dirichlet data g(x, y) -> (u, v); None means no-slip"""
        self._bc = BoundaryCondition(velocity=velocity)
        return self

    def with_boundary(self, bc: BoundaryCondition) -> "ProblemBuilder":
        self._bc = bc
        return self

    def with_forcing(self, forcing: Union[Forcing, np.ndarray]) -> "ProblemBuilder":
        self._forcing = forcing
        return self

    def without_realization_check(self) -> "ProblemBuilder":
        self._check_realization = False
        return self

    def _state(self) -> Dict[str, Any]:
        return {
            "domain": self._domain.bounds,
            "periodic": self._domain.periodic,
            "h": self._h,
            "degree": self._degree,
            "dilation": self._dilation,
            "perturbation": self._perturbation,
            "seed": self._seed,
            "layout": self._layout,
            "assembly": self._assembly.__dict__ if self._assembly else None,
        }

    def build(self) -> StokesProblem:
        """Build nodes, lattice, kernel and saddle system"""
        if self._h is None:
            raise ConfigError("spacing h is required", context=self._state())
        try:
            grid = virtual_grid(self._domain, self._h)
            nodes = self._nodes or NODE_LAYOUTS[self._layout](self._domain, self._h)
            spacing = nodes.spacing or self._h
            nodes = perturb_nodes(nodes, self._perturbation, self._seed, spacing)
            kernel = MLSRKKernel(
                nodes, self._dilation * spacing, PolynomialBasis(self._degree)
            )
            assembly = self._assembly or AssemblyConfig.for_domain(self._domain)
            if self._assembly is None and nodes.size != grid.size:
                assembly = AssemblyConfig(laplacian_mode="direct", viscosity=assembly.viscosity)
            bc = self._bc
            if bc is None and not self._domain.fully_periodic:
                bc = BoundaryCondition.no_slip()
            system = assemble_saddle_system(
                nodes,
                grid,
                kernel,
                assembly,
                bc=bc,
                check_realization=self._check_realization,
            )
        except VipError:
            raise
        except Exception as e:
            raise ConfigError(
                "failed to build problem", context=self._state(), cause=e
            ) from e

        logger.info(
            "Problem created via builder",
            extra={"h": self._h, "nodes": nodes.size, "degree": self._degree},
        )
        return StokesProblem(
            domain=self._domain,
            h=self._h,
            nodes=nodes,
            grid=grid,
            kernel=kernel,
            system=system,
            forcing=self._forcing,
            bc=bc,
            metadata=self._state(),
        )
