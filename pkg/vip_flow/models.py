"""
Validated input models for vip_flow - Pydantic v2
"""

import math
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ProblemKind = Literal[
    "stokes-manufactured",
    "stokes-polynomial",
    "kovasznay",
    "cavity",
    "infsup-study",
    "stability-study",
    "converge",
]


class Domain(BaseModel):
    """
    Axis-aligned rectangle with optional periodic wrapping per axis.

    Attributes:
        bounds: ((a1, b1), (a2, b2)) with b_i > a_i.
        periodic: Per-axis periodic flags.
    """

    model_config = ConfigDict(frozen=True)

    bounds: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.0, 1.0), (0.0, 1.0))
    periodic: Tuple[bool, bool] = (False, False)

    @field_validator("bounds")
    @classmethod
    def validate_bounds(
        cls, v: Tuple[Tuple[float, float], Tuple[float, float]]
    ) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        for axis, (lo, hi) in enumerate(v):
            if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
                raise ValueError(f"axis {axis}: need finite a < b, got [{lo}, {hi}]")
        return v

    @classmethod
    def unit_square(cls, periodic: bool = False) -> "Domain":
        """Unit square, fully periodic or fully bounded."""
        return cls(bounds=((0.0, 1.0), (0.0, 1.0)), periodic=(periodic, periodic))

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.bounds[0][0], self.bounds[1][0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.bounds[0][1], self.bounds[1][1]])

    @property
    def extents(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def fully_periodic(self) -> bool:
        return all(self.periodic)

    @property
    def area(self) -> float:
        return float(np.prod(self.extents))

    def wrap(self, points: np.ndarray) -> np.ndarray:
        """Map points into the domain along periodic axes."""
        pts = np.array(points, dtype=float, copy=True)
        for axis in range(2):
            if self.periodic[axis]:
                lo, ext = self.lower[axis], self.extents[axis]
                pts[..., axis] = lo + np.mod(pts[..., axis] - lo, ext)
        return pts

    def displacement(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Minimum-image displacement a - b."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        for axis in range(2):
            if self.periodic[axis]:
                ext = self.extents[axis]
                d[..., axis] -= ext * np.round(d[..., axis] / ext)
        return d

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Wrapped max-norm distance."""
        return np.max(np.abs(self.displacement(a, b)), axis=-1)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        pts = self.wrap(points)
        return np.all(
            (pts >= self.lower - tol) & (pts <= self.upper + tol), axis=-1
        )


class PicardConfig(BaseModel):
    """Settings for the Picard (Oseen) iteration."""

    model_config = ConfigDict(validate_assignment=True)

    Re: float = Field(default=100.0, gt=0.0)
    tol: float = Field(default=1e-8, gt=0.0)
    max_iter: int = Field(default=60, ge=1)
    relaxation: float = Field(default=1.0, gt=0.0, le=1.0)
    fallback_relaxation: float = Field(default=0.7, gt=0.0, le=1.0)


class KovasznayParams(BaseModel):
    """Reynolds number and decay rate of the Kovasznay solution."""

    model_config = ConfigDict(frozen=True)

    Re: float = Field(default=40.0, gt=0.0)

    @property
    def lam(self) -> float:
        return self.Re / 2.0 - math.sqrt(self.Re**2 / 4.0 + 4.0 * math.pi**2)


def parse_length(value: Any) -> float:
    """Parse '1/16', '0.0625' or a number into a float."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"not a length: {value!r}") from exc


class DiscretizationSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    h: List[float] = Field(default_factory=lambda: [1 / 8, 1 / 16, 1 / 32])
    m: int = Field(default=2, ge=0, le=4)
    dilation: float = Field(default=2.6, gt=0.0)
    perturbation: float = Field(default=0.0, ge=0.0, lt=0.45)
    seed: int = 0
    layout: Literal["collocated", "refined"] = "collocated"
    nodes_file: Optional[Path] = None

    @field_validator("h", mode="before")
    @classmethod
    def parse_h(cls, v: Any) -> List[float]:
        if isinstance(v, str):
            v = [item for item in v.split(",") if item.strip()]
        if not isinstance(v, (list, tuple)):
            v = [v]
        values = [parse_length(item) for item in v]
        if not values or any(item <= 0 for item in values):
            raise ValueError("all h must be positive")
        return values


class AssemblySection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    laplacian_mode: Optional[Literal["direct", "composite"]] = None
    gradient_mode: Literal["staggered", "direct"] = "staggered"
    regularized_lid: bool = False


class SolverSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    method: Literal["direct", "iterative"] = "direct"
    tol: Optional[float] = Field(default=None, gt=0.0)
    dense_limit: int = Field(default=4000, ge=0)
    max_iter: int = Field(default=2000, ge=1)
    workers: int = Field(default=1, ge=1)
    samples: int = Field(default=20, ge=1)


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: Path = Path("vip-output")
    centerline_samples: int = Field(default=129, ge=2)
    field_samples: int = Field(default=65, ge=2)
    dump_operators: bool = False
    ghia_file: Optional[Path] = None


class ProblemSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: ProblemKind = "stokes-manufactured"
    Re: float = Field(default=100.0, gt=0.0)
    bounds: Optional[Tuple[Tuple[float, float], Tuple[float, float]]] = None
    periodic: Optional[Tuple[bool, bool]] = None

    @field_validator("bounds", mode="before")
    @classmethod
    def parse_bounds(cls, v: Any) -> Any:
        if isinstance(v, str):
            numbers = [parse_length(item) for item in v.split(",")]
            if len(numbers) != 4:
                raise ValueError("bounds needs four numbers: a1, b1, a2, b2")
            return ((numbers[0], numbers[1]), (numbers[2], numbers[3]))
        return v

    @field_validator("periodic", mode="before")
    @classmethod
    def parse_periodic(cls, v: Any) -> Any:
        if isinstance(v, str):
            flags = [item.strip().lower() for item in v.split(",")]
            if len(flags) == 1:
                flags = flags * 2
            if len(flags) != 2:
                raise ValueError("periodic needs one or two flags")
            return tuple(flag in ("1", "true", "yes", "on") for flag in flags)
        return v


class PicardSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tol: float = Field(default=1e-8, gt=0.0)
    max_iter: int = Field(default=60, ge=1)
    relaxation: float = Field(default=1.0, gt=0.0, le=1.0)


_DEFAULT_DOMAINS: Dict[str, Domain] = {
    "kovasznay": Domain(bounds=((-0.5, 1.5), (0.0, 2.0)), periodic=(False, False)),
    "cavity": Domain.unit_square(periodic=False),
    "stokes-polynomial": Domain.unit_square(periodic=False),
}


class RunConfig(BaseModel):
    """
    Fully resolved configuration of one CLI run.

    Built from a sectioned key = value file; every section is optional and
    falls back to the defaults of the problem kind.
    """

    model_config = ConfigDict(extra="forbid")

    problem: ProblemSection = Field(default_factory=ProblemSection)
    discretization: DiscretizationSection = Field(
        default_factory=DiscretizationSection
    )
    assembly: AssemblySection = Field(default_factory=AssemblySection)
    solver: SolverSection = Field(default_factory=SolverSection)
    picard: PicardSection = Field(default_factory=PicardSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def sort_h(self) -> "RunConfig":
        # convergence tables run from coarse to fine
        self.discretization.h = sorted(self.discretization.h, reverse=True)
        return self

    @property
    def domain(self) -> Domain:
        kind = self.problem.kind
        default = _DEFAULT_DOMAINS.get(kind, Domain.unit_square(periodic=True))
        bounds = self.problem.bounds or default.bounds
        periodic = self.problem.periodic or default.periodic
        return Domain(bounds=bounds, periodic=periodic)

    @property
    def laplacian_mode(self) -> str:
        if self.assembly.laplacian_mode is not None:
            return self.assembly.laplacian_mode
        if self.discretization.layout != "collocated":
            return "direct"
        return "composite" if self.domain.fully_periodic else "direct"

    @property
    def picard_config(self) -> PicardConfig:
        return PicardConfig(
            Re=self.problem.Re,
            tol=self.picard.tol,
            max_iter=self.picard.max_iter,
            relaxation=self.picard.relaxation,
        )

    def flatten(self) -> Dict[str, str]:
        """Resolved settings as sorted 'section.key' -> text pairs."""
        flat: Dict[str, str] = {}
        for section, values in self.model_dump(mode="json").items():
            for key, value in values.items():
                if isinstance(value, list):
                    value = ",".join(repr(item) for item in value)
                flat[f"{section}.{key}"] = "" if value is None else str(value)
        flat["resolved.domain"] = repr(self.domain.bounds)
        flat["resolved.periodic"] = repr(self.domain.periodic)
        flat["resolved.laplacian_mode"] = self.laplacian_mode
        return dict(sorted(flat.items()))
