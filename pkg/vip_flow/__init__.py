"""
vip_flow: meshfree Stokes and Navier-Stokes solver on virtual interpolation
points, with reproducing-kernel shape functions and a benchmark harness.
"""

__version__ = "0.1.0"

from .assembly import (
    BoundaryCondition,
    FlowField,
    SaddleSystem,
    assemble_divergence_staggered,
    assemble_gradient_direct,
    assemble_gradient_staggered,
    assemble_interpolation,
    assemble_laplacian_composite,
    assemble_laplacian_direct,
    assemble_saddle_system,
    export_operators,
)
from .builders import (
    AssemblyConfig,
    LoggingConfig,
    ProblemBuilder,
    SolverConfig,
    StokesProblem,
    configure_logging,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DegreeTooLowError,
    DimensionMismatchError,
    ErrorCode,
    InsufficientNeighborsError,
    NoConvergenceError,
    NonconformingSpacingError,
    RealizationFailureError,
    SingularMomentError,
    SingularSystemError,
    SizeMismatchError,
    TooLargeError,
    VipError,
)
from .geometry import (
    NodeSet,
    VirtualGrid,
    generate_refined,
    generate_regular,
    neighbor_query,
    perturb_nodes,
    realization_check,
    staggered_points,
    virtual_grid,
)
from .harness import (
    PERIODIC_STOKES,
    POLYNOMIAL_STOKES,
    ErrorRecord,
    ManufacturedSolution,
    run_cavity,
    run_convergence_study,
    run_infsup_study,
    run_kovasznay_study,
    run_stability_study,
)
from .kernel import MLSRKKernel, PolynomialBasis, WindowFunction, discrete_projection
from .models import Domain, KovasznayParams, PicardConfig, RunConfig
from .navier_stokes import assemble_convection, kovasznay_field, picard_solve
from .postprocess import compute_streamfunction, compute_vorticity, extract_centerline
from .solver import FactorizationCache, estimate_infsup, solve_stokes

__all__ = [
    "__version__",
    # Geometry and kernel
    "Domain",
    "NodeSet",
    "VirtualGrid",
    "generate_regular",
    "generate_refined",
    "perturb_nodes",
    "virtual_grid",
    "staggered_points",
    "neighbor_query",
    "realization_check",
    "PolynomialBasis",
    "WindowFunction",
    "MLSRKKernel",
    "discrete_projection",
    # Operators and systems
    "assemble_interpolation",
    "assemble_laplacian_direct",
    "assemble_laplacian_composite",
    "assemble_gradient_direct",
    "assemble_gradient_staggered",
    "assemble_divergence_staggered",
    "assemble_saddle_system",
    "export_operators",
    "BoundaryCondition",
    "FlowField",
    "SaddleSystem",
    # Solvers
    "solve_stokes",
    "estimate_infsup",
    "FactorizationCache",
    "picard_solve",
    "assemble_convection",
    "kovasznay_field",
    "PicardConfig",
    "KovasznayParams",
    # Builder patterns
    "ProblemBuilder",
    "StokesProblem",
    "AssemblyConfig",
    "SolverConfig",
    "LoggingConfig",
    "configure_logging",
    "RunConfig",
    # Post-processing and studies
    "compute_vorticity",
    "compute_streamfunction",
    "extract_centerline",
    "ManufacturedSolution",
    "PERIODIC_STOKES",
    "POLYNOMIAL_STOKES",
    "ErrorRecord",
    "run_convergence_study",
    "run_stability_study",
    "run_infsup_study",
    "run_kovasznay_study",
    "run_cavity",
    # Error classes
    "VipError",
    "ErrorCode",
    "InsufficientNeighborsError",
    "SingularMomentError",
    "DegreeTooLowError",
    "NonconformingSpacingError",
    "SizeMismatchError",
    "RealizationFailureError",
    "DimensionMismatchError",
    "SingularSystemError",
    "NoConvergenceError",
    "TooLargeError",
    "ConfigError",
    "DataFormatError",
]
