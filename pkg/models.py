# models.py
from typing import Annotated, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import DEFAULT_POINTS, DEFAULT_SEED, FLOW_MAX_STEPS, FLOW_STEP, MAX_DIMENSION

# ==========================================================
# NUMERICS
# ==========================================================


class QuadratureSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["tensor-grid", "monte-carlo"] = "tensor-grid"
    nodes_per_axis: int = Field(16, ge=0)
    panels: int = Field(1, ge=1)
    samples: int = Field(10_000, ge=0)
    seed: int = DEFAULT_SEED
    # ball rules for the flow parameter t
    radial_nodes: int = Field(12, ge=1)
    angular_nodes: int = Field(24, ge=1)


class FlowSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step: float = Field(FLOW_STEP, gt=0)
    max_steps: int = Field(FLOW_MAX_STEPS, ge=1)


# ==========================================================
# REPORTS
# ==========================================================


class IntegralEstimate(BaseModel):
    value: float
    error: float
    nodes: int


class IdentityReport(BaseModel):
    identity: str
    samples: int
    max_abs_residual: float
    max_rel_residual: float
    scale: float
    worst_point: List[float]
    tolerance: Optional[float] = None
    passed: Optional[bool] = None

    def judged(self, tolerance: float) -> "IdentityReport":
        return self.model_copy(
            update={"tolerance": tolerance, "passed": bool(self.max_rel_residual <= tolerance)}
        )


class WeakDivergenceResult(BaseModel):
    witness: str
    flux_term: float
    candidate_term: float
    residual: float
    error_estimate: float
    tolerance: Optional[float] = None
    passed: Optional[bool] = None

    @property
    def relative_residual(self) -> float:
        return self.residual / (abs(self.flux_term) + 1.0)

    def judged(self, tolerance: float) -> "WeakDivergenceResult":
        return self.model_copy(
            update={"tolerance": tolerance, "passed": bool(self.relative_residual <= tolerance)}
        )


class SurfaceMeasureReport(BaseModel):
    quantity: str
    r_values: List[float]
    values: List[float]
    errors: List[float]
    extrapolated: Optional[float] = None
    extrapolation_error: Optional[float] = None
    direct: float
    direct_error: float
    observed_order: Optional[float] = None
    flagged: bool = False
    note: str = ""
    tolerance: Optional[float] = None
    passed: Optional[bool] = None


class Theorem2Report(BaseModel):
    variant: str
    lhs: float
    lhs_error: float
    r_values: List[float]
    rhs_values: List[float]
    rhs_errors: List[float]
    rhs_extrapolated: Optional[float] = None
    rhs_extrapolation_error: Optional[float] = None
    difference: Optional[float] = None
    observed_order: Optional[float] = None
    flagged: bool = False
    max_abs_lift_divergence: float
    ambient_lift_mismatch: Optional[float] = None
    tolerance: Optional[float] = None
    passed: Optional[bool] = None


class DivergenceTable(BaseModel):
    field: str
    grade: int
    columns: List[str]
    points: List[List[float]]
    values: List[List[float]]
    residuals: List[float] = []
    oracle_deviation: Optional[float] = None


class TaskResult(BaseModel):
    name: str
    kind: str
    passed: bool
    tolerance: Optional[float] = None
    error: Optional[str] = None
    witness: Optional[List[float]] = None
    identities: List[IdentityReport] = []
    weak: List[WeakDivergenceResult] = []
    surface: Optional[SurfaceMeasureReport] = None
    theorem: Optional[Theorem2Report] = None
    table: Optional[DivergenceTable] = None


class RunReport(BaseModel):
    tool: str = "multidiv"
    config_digest: str
    seed: int
    versions: Dict[str, str]
    tasks: List[TaskResult]
    passed: bool
    timings: Optional[Dict[str, float]] = None


# ==========================================================
# RUN CONFIGURATION
# ==========================================================


class DomainSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lower: List[float]
    upper: List[float]
    margin: float = 0.0


class _ObjectBase(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # "surface" objects live in the s-chart of the surface block
    chart: Literal["ambient", "surface"] = "ambient"


class ScalarSpec(_ObjectBase):
    kind: Literal["scalar"]
    expression: str


class VectorSpec(_ObjectBase):
    kind: Literal["vector"]
    components: List[str]


class FormSpec(_ObjectBase):
    kind: Literal["form"]
    grade: int = Field(ge=0)
    # keys are comma-separated 0-based indices, "" for grade 0
    components: Dict[str, str]


class BumpFormSpec(_ObjectBase):
    kind: Literal["bump_form"]
    grade: int = Field(0, ge=0)
    center: List[float]
    radius: float = Field(gt=0)
    metric: Literal["chebyshev", "euclidean"] = "euclidean"
    components: Dict[str, float] = {"": 1.0}


class TermSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    coefficient: str = "1"
    factors: List[str]


class MultivectorSpec(_ObjectBase):
    kind: Literal["multivector"]
    terms: List[TermSpec]


ObjectSpec = Annotated[
    Union[ScalarSpec, VectorSpec, FormSpec, BumpFormSpec, MultivectorSpec],
    Field(discriminator="kind"),
]


class SurfaceSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    forward: List[str]
    inverse: List[str]
    codimension: int = Field(ge=1)
    chart: DomainSpec
    parameter_box: DomainSpec
    transversal: List[str]
    alpha: Optional[str] = None
    alpha_profile: str = "1"
    delta: float = Field(1e-3, gt=0)
    surface_density: Optional[str] = None
    certify_grid: int = Field(5, ge=2)


def _check_r_sequence(values: List[float]) -> List[float]:
    if len(values) < 3:
        raise ValueError("r_sequence needs at least 3 values")
    if any(r <= 0 for r in values) or any(b >= a for a, b in zip(values, values[1:])):
        raise ValueError("r_sequence must be positive and strictly decreasing")
    return values


TaskKind = Literal[
    "check-algebra",
    "check-lemma1",
    "check-aux",
    "check-leibniz",
    "check-agreement",
    "check-cartan",
    "check-stokes",
    "div",
    "weakdiv",
    "surface",
    "lemma3",
    "theorem2",
    "restriction",
    "corollary",
    "lift",
]


class TaskSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: TaskKind
    name: Optional[str] = None
    field: Optional[str] = None
    form: Optional[str] = None
    candidate: Optional[str] = None
    corruption: Optional[List[float]] = None
    witnesses: List[str] = []
    vectors: List[str] = []
    u: Optional[str] = None
    lift_u: bool = True
    parameter_box: Optional[DomainSpec] = None
    r_sequence: Optional[List[float]] = None
    configurations: int = Field(20, ge=1)
    points: Optional[int] = Field(None, ge=1)
    grid: int = Field(3, ge=1)
    tolerance: Optional[float] = Field(None, gt=0)

    def references(self) -> List[str]:
        names = [self.field, self.form, self.candidate, self.u, *self.witnesses, *self.vectors]
        return [n for n in names if n]


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dimension: int = Field(ge=1, le=MAX_DIMENSION)
    domain: DomainSpec
    density: str = "1"
    objects: Dict[str, ObjectSpec] = {}
    surface: Optional[SurfaceSpec] = None
    quadrature: QuadratureSpec = QuadratureSpec()
    flow: FlowSpec = FlowSpec()
    r_sequence: List[float] = [0.2, 0.1, 0.05, 0.025]
    points: int = Field(DEFAULT_POINTS, ge=1)
    tasks: List[TaskSpec] = []
    seed: Optional[int] = None

    @field_validator("r_sequence")
    @classmethod
    def _decreasing(cls, values: List[float]) -> List[float]:
        return _check_r_sequence(values)

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        if len(self.domain.lower) != self.dimension or len(self.domain.upper) != self.dimension:
            raise ValueError(f"domain box must have {self.dimension} coordinates")
        declared = set(self.objects)
        for task in self.tasks:
            for name in task.references():
                if name not in declared:
                    raise ValueError(f"task {task.name or task.kind!r} references undeclared object {name!r}")
            if task.r_sequence is not None:
                _check_r_sequence(task.r_sequence)
        for name, spec in self.objects.items():
            if isinstance(spec, MultivectorSpec):
                for term in spec.terms:
                    for factor in term.factors:
                        if factor not in declared:
                            raise ValueError(f"multivector {name!r} references undeclared object {factor!r}")
        if self.surface is not None:
            if len(self.surface.forward) != self.dimension or len(self.surface.inverse) != self.dimension:
                raise ValueError(f"straightening maps must have {self.dimension} components")
            if self.surface.codimension >= self.dimension:
                raise ValueError("surface codimension must be smaller than the dimension")
            if len(self.surface.transversal) != self.surface.codimension:
                raise ValueError("one transversal field per codimension is required")
            for name in [*self.surface.transversal, self.surface.alpha]:
                if name and name not in declared:
                    raise ValueError(f"surface block references undeclared object {name!r}")
        return self
