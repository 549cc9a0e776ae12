# tasks.py
"""
Run-configuration workspace and the task runners, dispatched by task kind.

Every runner returns a TaskResult; library errors raised inside a task are
recorded on the result (with the witness point when the error carries one)
instead of aborting the run.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import (
    AGREEMENT_TOL,
    ALGEBRA_TOL,
    IDENTITY_TOL,
    LEIBNIZ_TOL,
    RESTRICTION_TOL,
    SURFACE_TOL,
    WEAK_TOL,
)
from diver import (
    VolumeStructure,
    check_aux,
    check_cartan,
    check_div_agreement,
    check_lemma1,
    check_leibniz_j,
    check_stokes,
    coordinate_divergence,
    corrupted_candidate,
    div_recursive,
    div_strong,
    divergence_columns,
    identity_report,
    weak_div_residual,
)
from errors import ConfigError, MultidivError, ShapeError
from exterior import Variance, contract_components, multi_indices, wedge_components
from fields import (
    ChartDomain,
    DifferentialForm,
    Field,
    MultiVectorField,
    ScalarField,
    Term,
    VectorField,
)
from models import (
    BumpFormSpec,
    DivergenceTable,
    DomainSpec,
    FormSpec,
    IdentityReport,
    MultivectorSpec,
    RunConfig,
    ScalarSpec,
    TaskResult,
    TaskSpec,
    VectorSpec,
    WeakDivergenceResult,
)
from quad import make_bump_form
from sampling import random_form, random_multivector
from surface import (
    ElementarySurface,
    FlowEngine,
    StraighteningMap,
    TransversalSystem,
    associated_form,
    corollary_check,
    lemma3_average,
    q_connected_lift,
    restriction_check,
    surface_measure,
    theorem2_check,
    verify_lift,
)

DEFAULT_TOLERANCES = {
    "check-algebra": ALGEBRA_TOL,
    "check-lemma1": IDENTITY_TOL,
    "check-aux": IDENTITY_TOL,
    "check-leibniz": LEIBNIZ_TOL,
    "check-agreement": AGREEMENT_TOL,
    "check-cartan": IDENTITY_TOL,
    "check-stokes": WEAK_TOL,
    "div": AGREEMENT_TOL,
    "weakdiv": WEAK_TOL,
    "surface": SURFACE_TOL,
    "lemma3": SURFACE_TOL,
    "theorem2": SURFACE_TOL,
    "corollary": SURFACE_TOL,
    "restriction": RESTRICTION_TOL,
    "lift": RESTRICTION_TOL,
}

BUILTIN_CHECKS = ["check-algebra", "check-lemma1", "check-aux", "check-leibniz", "check-agreement"]


def chart_domain(spec: DomainSpec) -> ChartDomain:
    return ChartDomain(tuple(spec.lower), tuple(spec.upper), spec.margin)


def _multi_index(key: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in key.split(",") if part.strip())


# ==========================================================
# WORKSPACE
# ==========================================================


@dataclass
class SurfaceSetup:
    straightening: StraighteningMap
    surface: ElementarySurface
    system: TransversalSystem
    engine: FlowEngine
    surface_volume: Optional[Field]


class Workspace:
    """Objects, volume structure and surface block materialised from a RunConfig."""

    def __init__(self, config: RunConfig, seed: int, points: Optional[int] = None, tolerance: Optional[float] = None):
        self.config = config
        self.seed = seed
        self.points = points or config.points
        self.tolerance = tolerance
        self.domain = chart_domain(config.domain)
        self.vs = VolumeStructure.from_source(config.density, self.domain)
        self.objects: Dict[str, Field] = {}
        self._surface: Optional[SurfaceSetup] = None
        # multivectors reference declared vectors, so they come last
        ordered = sorted(config.objects.items(), key=lambda item: isinstance(item[1], MultivectorSpec))
        for name, spec in ordered:
            self.objects[name] = self._build(name, spec)
        logging.info(f"[CONFIG] workspace ready: n = {config.dimension}, {len(self.objects)} object(s)")

    def _chart(self, spec) -> Tuple[int, ChartDomain]:
        if spec.chart == "ambient":
            return self.config.dimension, self.domain
        if self.config.surface is None:
            raise ConfigError("surface-chart objects need a surface block")
        box = chart_domain(self.config.surface.parameter_box)
        return self.config.dimension - self.config.surface.codimension, box

    def _build(self, name: str, spec) -> Field:
        n, domain = self._chart(spec)
        if isinstance(spec, ScalarSpec):
            return ScalarField(spec.expression, n, domain, name)
        if isinstance(spec, VectorSpec):
            if len(spec.components) != n:
                raise ConfigError(f"vector {name!r} needs {n} components, got {len(spec.components)}")
            return VectorField(spec.components, domain, name)
        if isinstance(spec, FormSpec):
            components = {_multi_index(key): value for key, value in spec.components.items()}
            return DifferentialForm(n, spec.grade, components, domain, name)
        if isinstance(spec, BumpFormSpec):
            if len(spec.center) != n:
                raise ConfigError(f"bump {name!r} needs a center with {n} coordinates")
            selector = {_multi_index(key): weight for key, weight in spec.components.items()}
            return make_bump_form(spec.grade, spec.center, spec.radius, selector, domain, spec.metric, name)
        terms = []
        for term in spec.terms:
            factors = tuple(self.get(factor) for factor in term.factors)
            for factor in factors:
                if factor.grade != 1 or factor.variance != Variance.VECTOR or factor.dimension != n:
                    raise ConfigError(f"multivector {name!r}: factor {factor.label!r} is not a vector field")
            terms.append(Term(ScalarField(term.coefficient, n, domain, "c"), factors))
        grades = {len(term.factors) for term in terms}
        if len(grades) != 1:
            raise ConfigError(f"multivector {name!r} mixes grades {sorted(grades)}")
        return MultiVectorField(terms, n, grades.pop(), domain, name)

    def get(self, name: Optional[str]) -> Field:
        if not name or name not in self.objects:
            raise ConfigError(f"undeclared object {name!r}")
        return self.objects[name]

    def rng(self, index: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, index])

    @property
    def surface_setup(self) -> SurfaceSetup:
        if self._surface is None:
            spec = self.config.surface
            if spec is None:
                raise ConfigError("surface tasks need a surface block")
            straightening = StraighteningMap(spec.forward, spec.inverse, spec.codimension, chart_domain(spec.chart))
            alpha = self.get(spec.alpha) if spec.alpha else associated_form(straightening, spec.alpha_profile)
            system = TransversalSystem([self.get(name) for name in spec.transversal], alpha, spec.delta)
            surface = ElementarySurface(straightening, chart_domain(spec.parameter_box))
            engine = FlowEngine(self.config.flow.step, self.config.flow.max_steps, self.domain)
            volume = None
            if spec.surface_density:
                volume = ScalarField(
                    spec.surface_density, straightening.surface_dimension, surface.parameter_box, "omega_S"
                )
            self._surface = SurfaceSetup(straightening, surface, system, engine, volume)
        return self._surface

    def surface_for(self, task: TaskSpec) -> ElementarySurface:
        surface = self.surface_setup.surface
        return surface if task.parameter_box is None else surface.with_box(chart_domain(task.parameter_box))

    def r_sequence(self, task: TaskSpec) -> List[float]:
        return task.r_sequence or self.config.r_sequence


# ==========================================================
# REPORT HELPERS
# ==========================================================


def merge_reports(name: str, reports: Sequence[IdentityReport]) -> IdentityReport:
    """Worst case over several sweeps of the same identity."""
    worst = max(reports, key=lambda r: r.max_rel_residual)
    return worst.model_copy(
        update={
            "identity": name,
            "samples": sum(r.samples for r in reports),
            "max_abs_residual": max(r.max_abs_residual for r in reports),
        }
    )


def _identity_result(task: TaskSpec, tol: float, reports: List[IdentityReport]) -> TaskResult:
    judged = [r.judged(tol) for r in reports]
    failed = [r for r in judged if not r.passed]
    return TaskResult(
        name=task.name or task.kind,
        kind=task.kind,
        passed=not failed,
        tolerance=tol,
        witness=failed[0].worst_point if failed else None,
        identities=judged,
    )


# ==========================================================
# RANDOM SUITES
# ==========================================================


def algebra_suite(rng: np.random.Generator, count: int, max_dimension: int = 5) -> List[IdentityReport]:
    """i- and j-adjunctions on random tensors, batched per (n, k, m)."""
    i_reports, j_reports = [], []
    for n in range(1, max_dimension + 1):
        for k in range(n + 1):
            for m in range(n + 1):
                size = [len(multi_indices(n, g)) for g in (k, m, abs(k - m))]
                payload = rng.standard_normal((count, sum(size)))
                cut = np.cumsum(size)[:-1]

                def split(pts):
                    return np.split(pts, cut, axis=-1)

                if m <= k:
                    def i_adjunction(pts, n=n, k=k, m=m, split=split):
                        omega, x, z = split(pts)
                        lhs = np.sum(contract_components(x, omega, n, m, k) * z, axis=-1, keepdims=True)
                        rhs = np.sum(omega * wedge_components(x, z, n, m, k - m), axis=-1, keepdims=True)
                        scale = np.linalg.norm(omega, axis=-1) * np.linalg.norm(x, axis=-1) * np.linalg.norm(z, axis=-1)
                        return lhs, rhs, [scale]

                    i_reports.append(identity_report(f"i-adjunction n={n} k={k} m={m}", payload, i_adjunction))
                if k <= m:
                    def j_adjunction(pts, n=n, k=k, m=m, split=split):
                        omega, x, eta = split(pts)
                        lhs = np.sum(eta * contract_components(omega, x, n, k, m), axis=-1, keepdims=True)
                        rhs = np.sum(wedge_components(omega, eta, n, k, m - k) * x, axis=-1, keepdims=True)
                        scale = np.linalg.norm(omega, axis=-1) * np.linalg.norm(x, axis=-1) * np.linalg.norm(eta, axis=-1)
                        return lhs, rhs, [scale]

                    j_reports.append(identity_report(f"j-adjunction n={n} k={k} m={m}", payload, j_adjunction))
    return [merge_reports("i-adjunction", i_reports), merge_reports("j-adjunction", j_reports)]


def _random_setting(rng: np.random.Generator, index: int, low: int, high: int):
    n = int(rng.integers(low, high + 1))
    domain = ChartDomain.cube(n, -1.0, 1.0)
    vs = VolumeStructure.gaussian(domain) if index % 2 == 0 else VolumeStructure.lebesgue(domain)
    return n, domain, vs


def random_suite(kind: str, rng: np.random.Generator, count: int, points: int) -> IdentityReport:
    """Random field configurations for one pointwise identity, worst case reported."""
    reports = []
    for index in range(count):
        if kind == "check-lemma1":
            n, domain, vs = _random_setting(rng, index, 2, 4)
            k = int(rng.integers(0, n + 1))
            omega = random_form(n, k, rng, domain, trig=True)
            z = random_multivector(n, k, rng, domain, terms=2)
            reports.append(check_lemma1(omega, z, vs, domain.sample(points, rng)))
        elif kind == "check-aux":
            n, domain, vs = _random_setting(rng, index, 2, 4)
            m = int(rng.integers(1, n + 1))
            k = int(rng.integers(0, m + 1))
            omega = random_form(n, k, rng, domain, trig=True)
            x = random_multivector(n, m, rng, domain, terms=2)
            reports.append(check_aux(omega, x, vs, domain.sample(points, rng)))
        elif kind == "check-leibniz":
            n, domain, vs = _random_setting(rng, index, 2, 4)
            m = int(rng.integers(1, n + 1))
            k = int(rng.integers(0, m))
            omega = random_form(n, k, rng, domain, trig=True)
            z = random_multivector(n, m, rng, domain)
            reports.append(check_leibniz_j(omega, z, vs, domain.sample(points, rng)))
        elif kind == "check-agreement":
            n, domain, vs = _random_setting(rng, index, 2, 5)
            k = int(rng.integers(1, n + 1))
            z = random_multivector(n, k, rng, domain)
            reports.append(check_div_agreement(z, vs, domain.sample(points, rng)))
        else:
            raise ConfigError(f"no random suite for {kind!r}")
    return merge_reports(kind.removeprefix("check-"), reports)


# ==========================================================
# RUNNERS
# ==========================================================


def _run_algebra(ws: Workspace, task: TaskSpec, index: int, tol: float) -> TaskResult:
    return _identity_result(task, tol, algebra_suite(ws.rng(index), task.configurations))


def _run_pointwise(ws: Workspace, task: TaskSpec, index: int, tol: float) -> TaskResult:
    rng = ws.rng(index)
    count = task.points or ws.points
    if task.field is None and task.form is None:
        return _identity_result(task, tol, [random_suite(task.kind, rng, task.configurations, count)])
    points = ws.domain.sample(count, rng)
    if task.kind == "check-lemma1":
        report = check_lemma1(ws.get(task.form), ws.get(task.field), ws.vs, points)
    elif task.kind == "check-aux":
        report = check_aux(ws.get(task.form), ws.get(task.field), ws.vs, points)
    elif task.kind == "check-leibniz":
        report = check_leibniz_j(ws.get(task.form), ws.get(task.field), ws.vs, points)
    else:
        report = check_div_agreement(ws.get(task.field), ws.vs, points)
    return _identity_result(task, tol, [report])


def _run_cartan(ws: Workspace, task: TaskSpec, index: int, tol: float) -> TaskResult:
    if len(task.vectors) != 2:
        raise ConfigError("check-cartan needs exactly two vectors")
    x, y = (ws.get(name) for name in task.vectors)
    points = ws.domain.sample(task.points or ws.points, ws.rng(index))
    return _identity_result(task, tol, [check_cartan(ws.get(task.form), x, y, points)])


def _weak_result(task: TaskSpec, tol: float, results: List[WeakDivergenceResult], ws: Workspace) -> TaskResult:
    judged = [r.judged(tol) for r in results]
    failed = [r for r in judged if not r.passed]
    witness = None
    if failed:
        bump = getattr(ws.objects.get(failed[0].witness), "bump", None)
        witness = list(bump.center) if bump is not None else None
    return TaskResult(
        name=task.name or task.kind,
        kind=task.kind,
        passed=not failed,
        tolerance=tol,
        witness=witness,
        weak=judged,
    )


def _run_stokes(ws: Workspace, task: TaskSpec, index: int, tol: float) -> TaskResult:
    result = check_stokes(ws.get(task.form), ws.get(task.field), ws.vs, ws.config.quadrature)
    return _weak_result(task, tol, [result], ws)


def default_witnesses(z: Field, ws: Workspace) -> List[Field]:
    """One centred box-supported bump per component of a (k-1)-form."""
    box = ws.domain.shrunk()
    center = [(lo + hi) / 2 for lo, hi in zip(box.lower, box.upper)]
    radius = 0.25 * min(hi - lo for lo, hi in zip(box.lower, box.upper))
    grade = z.grade - 1
    witnesses = []
    for index in multi_indices(z.dimension, grade):
        label = "bump[" + ",".join(str(i) for i in index) + "]"
        witnesses.append(make_bump_form(grade, center, radius, [index], ws.domain, "chebyshev", label))
        ws.objects.setdefault(label, witnesses[-1])
    return witnesses


def _run_weakdiv(ws: Workspace, task: TaskSpec, index: int, tol: float) -> TaskResult:
    z = ws.get(task.field)
    if task.corruption is not None:
        candidate = corrupted_candidate(z, ws.vs, task.corruption)
    elif task.candidate is not None:
        candidate = ws.get(task.candidate)
    else:
        candidate = div_strong(z, ws.vs)
    witnesses = [ws.get(name) for name in task.witnesses] or default_witnesses(z, ws)
    results = [weak_div_residual(z, candidate, omega, ws.vs, ws.config.quadrature) for omega in witnesses]
    return _weak_result(task, tol, results, ws)


def _run_div(ws: Workspace, task: TaskSpec, index: int, tol: float) -> TaskResult:
    z = ws.get(task.field)
    points = ws.domain.grid(task.grid)
    values = div_strong(z, ws.vs).evaluate(points)
    # vector fields against the coordinate formula, higher grades against the term recursion
    if z.grade == 1:
        oracle = coordinate_divergence(z, ws.vs, points)[:, None]
    else:
        oracle = div_recursive(z, ws.vs).evaluate(points)
    residuals = np.abs(values - oracle).max(axis=-1, initial=0.0)
    deviation = float(residuals.max(initial=0.0))
    table = DivergenceTable(
        field=z.label,
        grade=z.grade - 1,
        columns=divergence_columns(z.dimension, z.grade - 1),
        points=points.tolist(),
        values=values.tolist(),
        residuals=residuals.tolist(),
        oracle_deviation=deviation,
    )
    scale = 1.0 + float(np.abs(values).max(initial=0.0))
    passed = deviation <= tol * scale
    return TaskResult(name=task.name or task.kind, kind=task.kind, passed=passed, tolerance=tol, table=table)


def _surface_result(task: TaskSpec, tol: float, report) -> TaskResult:
    return TaskResult(
        name=task.name or task.kind,
        kind=task.kind,
        passed=bool(report.passed),
        tolerance=tol,
        surface=report,
    )


def _run_surface(ws: Workspace, task: TaskSpec, index: int, tol: float) -> TaskResult:
    setup = ws.surface_setup
    report = surface_measure(
        ws.surface_for(task), setup.system, ws.vs, ws.r_sequence(task), ws.config.quadrature, setup.engine, tol
    )
    return _surface_result(task, tol, report)


def _run_lemma3(ws: Workspace, task: TaskSpec, index: int, tol: float) -> TaskResult:
    setup = ws.surface_setup
    u = ws.get(task.u) if task.u else ScalarField(1.0, ws.config.dimension, ws.domain, "1")
    report = lemma3_average(
        u, ws.surface_for(task), setup.system, ws.vs, ws.r_sequence(task), ws.config.quadrature, setup.engine, tol
    )
    return _surface_result(task, tol, report)


def _run_theorem2(ws: Workspace, task: TaskSpec, index: int, tol: float) -> TaskResult:
    setup = ws.surface_setup
    report = theorem2_check(
        ws.get(task.field),
        ws.get(task.u) if task.u else None,
        ws.surface_for(task),
        setup.system,
        ws.vs,
        ws.r_sequence(task),
        ws.config.quadrature,
        setup.engine,
        lift_u=task.lift_u,
        tolerance=tol,
    )
    return TaskResult(name=task.name or task.kind, kind=task.kind, passed=bool(report.passed), tolerance=tol, theorem=report)


def _run_corollary(ws: Workspace, task: TaskSpec, index: int, tol: float) -> TaskResult:
    setup = ws.surface_setup
    report = corollary_check(
        [ws.get(name) for name in task.vectors],
        ws.get(task.form),
        ws.surface_for(task),
        setup.system,
        ws.vs,
        ws.r_sequence(task),
        ws.config.quadrature,
        setup.engine,
        tolerance=tol,
    )
    return TaskResult(name=task.name or task.kind, kind=task.kind, passed=bool(report.passed), tolerance=tol, theorem=report)


def _run_restriction(ws: Workspace, task: TaskSpec, index: int, tol: float) -> TaskResult:
    setup = ws.surface_setup
    surface = ws.surface_for(task)
    s_points = surface.region.sample(task.points or ws.points, ws.rng(index))
    report = restriction_check(
        ws.get(task.field),
        surface,
        setup.system,
        ws.vs,
        s_points,
        setup.surface_volume,
        setup.engine,
        radius=max(ws.r_sequence(task)),
    )
    return _identity_result(task, tol, [report])


def _run_lift(ws: Workspace, task: TaskSpec, index: int, tol: float) -> TaskResult:
    setup = ws.surface_setup
    surface = ws.surface_for(task)
    lift = q_connected_lift(ws.get(task.field), surface, setup.system, ws.vs, setup.engine)
    rng = ws.rng(index)
    count = task.points or ws.points
    r = ws.r_sequence(task)[0]
    m = setup.straightening.codimension
    s = surface.region.sample(count, rng)
    t = rng.uniform(-r, r, size=(count, m)) / np.sqrt(m)
    return _identity_result(task, tol, verify_lift(lift, np.concatenate([s, t], axis=1)))


RUNNERS: Dict[str, Callable[[Workspace, TaskSpec, int, float], TaskResult]] = {
    "check-algebra": _run_algebra,
    "check-lemma1": _run_pointwise,
    "check-aux": _run_pointwise,
    "check-leibniz": _run_pointwise,
    "check-agreement": _run_pointwise,
    "check-cartan": _run_cartan,
    "check-stokes": _run_stokes,
    "div": _run_div,
    "weakdiv": _run_weakdiv,
    "surface": _run_surface,
    "lemma3": _run_lemma3,
    "theorem2": _run_theorem2,
    "corollary": _run_corollary,
    "restriction": _run_restriction,
    "lift": _run_lift,
}


def run_task(ws: Workspace, task: TaskSpec, index: int) -> TaskResult:
    tol = ws.tolerance or task.tolerance or DEFAULT_TOLERANCES[task.kind]
    name = task.name or task.kind
    logging.info(f"[TASK] {name} ({task.kind}) started")
    try:
        result = RUNNERS[task.kind](ws, task, index, tol)
    except ConfigError:
        raise
    except MultidivError as e:
        logging.error(f"[TASK] {name} failed: {e}", exc_info=True)
        witness = getattr(e, "witness", None) or getattr(e, "point", None)
        return TaskResult(name=name, kind=task.kind, passed=False, tolerance=tol, error=str(e), witness=witness)
    logging.info(f"[TASK] {name}: {'✅ passed' if result.passed else '❌ violated'}")
    return result
