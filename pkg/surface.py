# surface.py
"""
Elementary surfaces, commuting transversal flows and tube-limit measures.

All tube computations happen in tube coordinates p = (s, t):

    ψ(s, t) = Φ_t(g(s, 0)),   Φ_t = Φ^{Y1}_{t1} ∘ … ∘ Φ^{Ym}_{tm}

Dψ comes from the variational equation integrated next to the flow, so the
measure μ in tube coordinates has density J = ρ(ψ) |det Dψ|, the surface
measure has density ρ_S(s) = J(s, 0), and a tangent field Z on S lifts to
the chart field (z(s), 0).
"""
import logging
from dataclasses import dataclass
from math import ceil, log
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from config import (
    CLOSEDNESS_TOL,
    FD_STEP,
    FLOW_MAX_STEPS,
    FLOW_STEP,
    INVERSE_TOL,
    NEWTON_MAX_ITER,
    NEWTON_TOL,
    TANGENCY_TOL,
)
from diver import VolumeStructure, div_strong, div_vector, identity_report
from errors import (
    ClosednessError,
    ConfigError,
    ConvergenceError,
    FlowExitError,
    ShapeError,
    SingularJacobianError,
    TransversalityError,
)
from expr import Expression, determinant
from exterior import Variance, compound_matrix, contract_components, index_map, multi_indices, wedge_components
from fields import (
    CallableField,
    ChartDomain,
    DifferentialForm,
    ExpressionField,
    ExpressionLike,
    Field,
    Jet,
    MultiVectorField,
    ScalarField,
    as_expression,
    as_points,
    exterior_derivative,
    lie_bracket,
    pair_fields,
    wedge_forms,
)
from models import IdentityReport, IntegralEstimate, QuadratureSpec, SurfaceMeasureReport, Theorem2Report
from quad import ball_volume, integrate, integrate_product

# ==========================================================
# STRAIGHTENING MAP + SURFACE
# ==========================================================


class StraighteningMap:
    """g: (s, t) -> x with explicit inverse; S = g(N × {0})."""

    def __init__(
        self,
        forward: Sequence[ExpressionLike],
        inverse: Sequence[ExpressionLike],
        codimension: int,
        chart: ChartDomain,
    ):
        n = len(forward)
        if len(inverse) != n:
            raise ShapeError(f"inverse map has {len(inverse)} components, forward map {n}")
        if not 1 <= codimension < n:
            raise ShapeError(f"codimension {codimension} must lie in [1, {n - 1}]")
        if chart.dimension != n:
            raise ShapeError("straightening chart box has the wrong dimension")
        self.forward = [as_expression(e, n) for e in forward]
        self.inverse = [as_expression(e, n) for e in inverse]
        self.dimension = n
        self.codimension = codimension
        self.surface_dimension = n - codimension
        self.chart = chart

    def map(self, params) -> np.ndarray:
        pts = as_points(params, self.dimension)
        return np.stack([e.evaluate(pts) for e in self.forward], axis=-1)

    def inverse_map(self, points) -> np.ndarray:
        pts = as_points(points, self.dimension)
        return np.stack([e.evaluate(pts) for e in self.inverse], axis=-1)

    def jacobian(self, params) -> np.ndarray:
        pts = as_points(params, self.dimension)
        return np.stack([e.jet(pts)[1] for e in self.forward], axis=1)

    def validate(self, per_axis: int = 5):
        params = self.chart.grid(per_axis)
        images = self.map(params)
        back = self.inverse_map(images)
        round_trip = np.abs(back - params).max()
        forth = np.abs(self.map(back) - images).max()
        worst = max(round_trip, forth)
        if worst > INVERSE_TOL * (1.0 + np.abs(params).max()):
            raise ConfigError(f"straightening map and its inverse disagree by {worst:.2e}")
        det = np.linalg.det(self.jacobian(params))
        if np.min(np.abs(det)) <= 1e-12:
            bad = params[np.argmin(np.abs(det))]
            raise SingularJacobianError(f"straightening Jacobian is singular at {bad.tolist()}", bad)
        logging.info(f"[SURFACE] straightening map validated on {len(params)} points (round trip {worst:.1e})")

    def _on_surface(self) -> List[Expression]:
        d = self.surface_dimension
        return [Expression.variable(a, d) for a in range(d)] + [
            Expression.constant(0.0, d) for _ in range(self.codimension)
        ]

    def surface_map(self) -> List[Expression]:
        """g(s, 0) as expressions in s."""
        on_surface = self._on_surface()
        return [e.substitute(on_surface) for e in self.forward]

    def surface_tangents(self) -> List[List[Expression]]:
        """Rows i, columns a: ∂_{s_a} g_i(s, 0)."""
        on_surface = self._on_surface()
        return [
            [e.derivative(a).substitute(on_surface) for a in range(self.surface_dimension)]
            for e in self.forward
        ]


@dataclass(frozen=True)
class ElementarySurface:
    """A piece A of S given by a parameter box; the box margin realises S_{-ε}."""

    straightening: StraighteningMap
    parameter_box: ChartDomain

    def __post_init__(self):
        d = self.straightening.surface_dimension
        if self.parameter_box.dimension != d:
            raise ShapeError(f"parameter box must have dimension {d}")
        chart = self.straightening.chart
        inside = all(
            lo >= clo and hi <= chi
            for lo, hi, clo, chi in zip(
                self.parameter_box.lower, self.parameter_box.upper, chart.lower[:d], chart.upper[:d]
            )
        )
        if not inside:
            raise ShapeError("parameter box leaves the straightening chart")

    @property
    def region(self) -> ChartDomain:
        return self.parameter_box.shrunk()

    def on_surface(self, s) -> np.ndarray:
        s = as_points(s, self.straightening.surface_dimension)
        return np.concatenate([s, np.zeros((len(s), self.straightening.codimension))], axis=1)

    def points(self, s) -> np.ndarray:
        return self.straightening.map(self.on_surface(s))

    def with_box(self, box: ChartDomain) -> "ElementarySurface":
        return ElementarySurface(self.straightening, box)


# ==========================================================
# TRANSVERSAL SYSTEM
# ==========================================================


class TransversalSystem:
    """Pairwise commuting fields Y1..Ym with an associated m-form α and floor δ."""

    def __init__(self, fields: Sequence[Field], alpha: Field, delta: float = 1e-3):
        if not fields:
            raise ShapeError("a transversal system needs at least one field")
        n = fields[0].dimension
        for field in fields:
            if field.grade != 1 or field.variance != Variance.VECTOR or field.dimension != n:
                raise ShapeError(f"transversal fields must be vector fields in dimension {n}")
        if alpha.variance != Variance.COVECTOR or alpha.grade != len(fields) or alpha.dimension != n:
            raise ShapeError(f"associated form must be a {len(fields)}-form in dimension {n}")
        self.fields = tuple(fields)
        self.alpha = alpha
        self.delta = float(delta)
        self.wedge = MultiVectorField.decomposable(list(fields), label="Y")
        self.transversality = pair_fields(alpha, self.wedge)

    @property
    def dimension(self) -> int:
        return self.fields[0].dimension

    @property
    def codimension(self) -> int:
        return len(self.fields)

    def check_commuting(self, points):
        for i in range(len(self.fields)):
            for j in range(i + 1, len(self.fields)):
                bracket = lie_bracket(self.fields[i], self.fields[j]).evaluate(points)
                size = np.linalg.norm(bracket, axis=-1)
                if size.max() > TANGENCY_TOL:
                    bad = np.asarray(points)[np.argmax(size)]
                    raise TransversalityError(
                        f"Y{i + 1} and Y{j + 1} do not commute (|[Y{i + 1}, Y{j + 1}]| = {size.max():.2e})", bad
                    )

    def check_transversal(self, points):
        value = np.abs(self.transversality.values(points))
        if value.min() < self.delta:
            bad = np.asarray(points)[np.argmin(value)]
            raise TransversalityError(
                f"|α(Y1, …, Ym)| = {value.min():.3e} falls below δ = {self.delta}", bad
            )

    def check_annihilates(self, points, tangents: np.ndarray):
        n, m = self.dimension, self.codimension
        alpha = self.alpha.evaluate(points)
        for a in range(tangents.shape[-1]):
            contraction = contract_components(tangents[:, :, a], alpha, n, 1, m)
            size = np.linalg.norm(contraction, axis=-1)
            scale = 1.0 + np.linalg.norm(tangents[:, :, a], axis=-1) * np.linalg.norm(alpha, axis=-1)
            if np.any(size > TANGENCY_TOL * scale):
                bad = np.asarray(points)[np.argmax(size / scale)]
                raise TransversalityError("α does not annihilate the tangent space of S", bad)

    def validate(self, surface: ElementarySurface, per_axis: int = 5):
        st = surface.straightening
        params = surface.on_surface(surface.region.grid(per_axis))
        x = st.map(params)
        tube = st.map(st.chart.grid(per_axis))
        self.check_commuting(np.concatenate([x, tube], axis=0))
        self.check_transversal(x)
        self.check_annihilates(x, st.jacobian(params)[:, :, : st.surface_dimension])
        logging.info(f"[SURFACE] transversal system of {self.codimension} field(s) validated")


def associated_form(straightening: StraighteningMap, h: ExpressionLike = "1") -> DifferentialForm:
    """α = (g⁻¹)* P* (h dt1∧…∧dtm), built symbolically."""
    n, m, d = straightening.dimension, straightening.codimension, straightening.surface_dimension
    t_of_x = straightening.inverse[d:]
    form = ExpressionField([Expression.constant(1.0, n)], n, 0, Variance.COVECTOR)
    for t in t_of_x:
        form = wedge_forms(form, exterior_derivative(ScalarField(t, n)))
    profile = as_expression(h, m).substitute(t_of_x)
    return DifferentialForm(n, m, [profile * c for c in form.components], label="alpha")


# ==========================================================
# FLOWS
# ==========================================================


@dataclass(frozen=True, eq=False)
class FlowResult:
    points: np.ndarray
    tangents: Optional[np.ndarray]
    time_columns: np.ndarray


class FlowEngine:
    """Classical RK4 for flows of vector fields plus their variational equations."""

    def __init__(
        self,
        step: float = FLOW_STEP,
        max_steps: int = FLOW_MAX_STEPS,
        domain: Optional[ChartDomain] = None,
    ):
        if step <= 0:
            raise ShapeError("flow step must be positive")
        self.step = float(step)
        self.max_steps = int(max_steps)
        self.domain = domain

    def _velocity(self, field: Field, x: np.ndarray, tangents: Optional[np.ndarray]):
        if tangents is None:
            return field.evaluate(x), None
        jet = field.jet(x)
        # grad[p, j, i] = ∂_j Y^i
        return jet.value, np.einsum("pji,pjc->pic", jet.grad, tangents)

    def _rk4(self, field: Field, x: np.ndarray, tangents: Optional[np.ndarray], dt: np.ndarray):
        def shifted(base, slope, scale):
            return None if base is None else base + scale * dt[:, :, None] * slope

        k1, l1 = self._velocity(field, x, tangents)
        k2, l2 = self._velocity(field, x + 0.5 * dt * k1, shifted(tangents, l1, 0.5))
        k3, l3 = self._velocity(field, x + 0.5 * dt * k2, shifted(tangents, l2, 0.5))
        k4, l4 = self._velocity(field, x + dt * k3, shifted(tangents, l3, 1.0))
        x_new = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if tangents is None:
            return x_new, None
        return x_new, tangents + dt[:, :, None] / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4)

    def _check_inside(self, x: np.ndarray):
        if self.domain is None:
            return
        inside = self.domain.contains(x)
        if not np.all(inside):
            bad = x[np.argmin(inside)]
            raise FlowExitError(f"trajectory left the chart at {bad.tolist()}", bad)

    def integrate(
        self, field: Field, times, points, tangents: Optional[np.ndarray] = None
    ) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Flow every point for its own time; each point takes the same number of equal steps."""
        x = np.array(as_points(points, field.dimension), dtype=float)
        times = np.broadcast_to(np.asarray(times, dtype=float), (len(x),))
        span = float(np.max(np.abs(times), initial=0.0))
        if span == 0.0:
            return x, tangents
        steps = max(1, ceil(span / self.step - 1e-9))
        if steps > self.max_steps:
            raise ConvergenceError(f"flow over time {span} needs {steps} steps (limit {self.max_steps})")
        dt = (times / steps)[:, None]
        state = None if tangents is None else np.array(tangents, dtype=float)
        for _ in range(steps):
            x, state = self._rk4(field, x, state, dt)
            self._check_inside(x)
        return x, state

    def flow(self, fields: Sequence[Field], times, points, tangents: Optional[np.ndarray] = None) -> FlowResult:
        """Φ_t = Φ^{Y1}_{t1} ∘ … ∘ Φ^{Ym}_{tm}, with ∂Φ/∂t_i and the pushed-forward `tangents`."""
        x = np.array(as_points(points, fields[0].dimension), dtype=float)
        m = len(fields)
        times = np.broadcast_to(np.atleast_2d(np.asarray(times, dtype=float)), (len(x), m))
        base = 0 if tangents is None else tangents.shape[-1]
        carried = tangents
        columns: List[Optional[np.ndarray]] = [None] * m
        for i in reversed(range(m)):
            later = list(range(i + 1, m))
            stack = ([carried] if carried is not None else []) + [columns[j][:, :, None] for j in later]
            state = np.concatenate(stack, axis=-1) if stack else None
            x, state = self.integrate(fields[i], times[:, i], x, state)
            if state is not None:
                carried = state[:, :, :base] if base else None
                for offset, j in enumerate(later):
                    columns[j] = state[:, :, base + offset]
            columns[i] = fields[i].evaluate(x)
        return FlowResult(x, carried, np.stack(columns, axis=-1))

    def semigroup_residual(self, fields: Sequence[Field], t, s, points) -> float:
        """max ‖Φ_{t+s} x − Φ_t Φ_s x‖ over the points."""
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        joint = self.flow(fields, t + s, points).points
        stepwise = self.flow(fields, t, self.flow(fields, s, points).points).points
        return float(np.abs(joint - stepwise).max())


def flow(engine: FlowEngine, fields: Sequence[Field], t, x) -> np.ndarray:
    """Single point: Φ_t(x)."""
    return engine.flow(fields, np.asarray(t, dtype=float)[None, :], np.asarray(x, dtype=float)[None, :]).points[0]


# ==========================================================
# TUBE CHART
# ==========================================================


class TubeChart:
    """Tube coordinates (s, t) ↦ ψ(s, t) = Φ_t(g(s, 0)) around an elementary surface."""

    def __init__(
        self,
        surface: ElementarySurface,
        system: TransversalSystem,
        vs: VolumeStructure,
        engine: Optional[FlowEngine] = None,
    ):
        st = surface.straightening
        if system.codimension != st.codimension or system.dimension != st.dimension:
            raise ShapeError("transversal system does not match the surface codimension")
        if vs.dimension != st.dimension:
            raise ShapeError("volume structure lives in a different dimension")
        self.surface = surface
        self.system = system
        self.vs = vs
        self.engine = engine or FlowEngine(domain=vs.domain)
        self.n, self.m, self.d = st.dimension, st.codimension, st.surface_dimension
        self._g0 = st.surface_map()
        self._dg0 = st.surface_tangents()

    # ---------- geometry ----------
    def base(self, s) -> Tuple[np.ndarray, np.ndarray]:
        s = as_points(s, self.d)
        x = np.stack([e.evaluate(s) for e in self._g0], axis=-1)
        tangents = np.stack([np.stack([e.evaluate(s) for e in row], axis=-1) for row in self._dg0], axis=1)
        return x, tangents

    def psi(self, params) -> Tuple[np.ndarray, np.ndarray]:
        p = as_points(params, self.n)
        x0, t0 = self.base(p[:, : self.d])
        result = self.engine.flow(self.system.fields, p[:, self.d:], x0, t0)
        return result.points, np.concatenate([result.tangents, result.time_columns], axis=-1)

    def _density_from(self, x: np.ndarray, jacobian: np.ndarray, params: np.ndarray) -> np.ndarray:
        det = np.linalg.det(jacobian)
        if np.any(det == 0):
            bad = params[np.argmin(np.abs(det))]
            raise SingularJacobianError(f"tube chart Jacobian is singular at {bad.tolist()}", bad)
        return self.vs.density_values(x) * np.abs(det)

    def density(self, params) -> np.ndarray:
        """J(s, t) = ρ(ψ) |det Dψ|."""
        p = as_points(params, self.n)
        x, jacobian = self.psi(p)
        return self._density_from(x, jacobian, p)

    def density_jet(self, params) -> Tuple[np.ndarray, np.ndarray]:
        """J and its gradient by central differences through the integrator."""
        p = as_points(params, self.n)
        h = FD_STEP
        shifted = [p]
        for a in range(self.n):
            e = np.zeros(self.n)
            e[a] = h
            shifted += [p + e, p - e]
        values = self.density(np.concatenate(shifted, axis=0)).reshape(2 * self.n + 1, len(p))
        grad = (values[1::2] - values[2::2]).T / (2 * h)
        return values[0], grad

    def volume_structure(self, domain: ChartDomain) -> VolumeStructure:
        def evaluator(p: np.ndarray) -> np.ndarray:
            return self.density(p)[:, None]

        def jet(p: np.ndarray) -> Jet:
            value, grad = self.density_jet(p)
            return Jet(value[:, None], grad[:, :, None])

        field = CallableField(self.n, 0, Variance.COVECTOR, evaluator, jet, domain, "J")
        return VolumeStructure(field, domain, "tube", check_grid=None)

    def tube_domain(self, box: ChartDomain, r: float) -> ChartDomain:
        return ChartDomain(box.lower + (-r,) * self.m, box.upper + (r,) * self.m)

    def locate(self, points) -> np.ndarray:
        """Tube coordinates of ambient points, by Newton iteration from g⁻¹."""
        y = as_points(points, self.n)
        p = self.surface.straightening.inverse_map(y)
        tol = NEWTON_TOL * (1.0 + np.abs(y).max())
        for _ in range(NEWTON_MAX_ITER):
            x, jacobian = self.psi(p)
            residual = x - y
            if np.abs(residual).max() <= tol:
                return p
            try:
                p = p - np.linalg.solve(jacobian, residual[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError as e:
                raise SingularJacobianError(f"tube chart Jacobian is singular while locating points: {e}")
        raise ConvergenceError("Newton iteration for tube coordinates did not converge")

    def certify(self, box: ChartDomain, r: float, per_axis: int = 5) -> float:
        """Nonsingular, sign-stable Jacobian on a grid of box × B_r; returns min |det Dψ|."""
        s = box.grid(per_axis)
        cube = ChartDomain((-r,) * self.m, (r,) * self.m).grid(per_axis)
        t = np.concatenate([np.zeros((1, self.m)), cube[np.linalg.norm(cube, axis=-1) <= r]], axis=0)
        params = np.concatenate([np.repeat(s, len(t), axis=0), np.tile(t, (len(s), 1))], axis=1)
        det = np.linalg.det(self.psi(params)[1])
        worst = int(np.argmin(np.abs(det)))
        if abs(det[worst]) <= 1e-12 or len(set(np.sign(det))) > 1:
            raise SingularJacobianError(
                f"tube chart is not injective up to r = {r} (det Dψ = {det[worst]:.3e})", params[worst]
            )
        logging.info(f"[TUBE] certified r = {r} on {len(params)} nodes (min |det Dψ| = {abs(det[worst]):.3e})")
        return float(abs(det[worst]))

    # ---------- induced objects on S ----------
    def surface_density(self) -> Field:
        """ρ_S(s) = ρ(g(s,0)) |det[∂_s g | Y](s, 0)|, symbolic when every ingredient is."""
        box = self.surface.parameter_box
        density = self.vs.density
        fields = self.system.fields
        if isinstance(density, ExpressionField) and all(isinstance(y, ExpressionField) for y in fields):
            matrix = [
                list(self._dg0[i]) + [y.components[i].substitute(self._g0) for y in fields]
                for i in range(self.n)
            ]
            det = determinant(matrix)
            center = np.array([[(lo + hi) / 2 for lo, hi in zip(box.lower, box.upper)]])
            sign = float(np.sign(det.evaluate(center)[0]))
            if sign == 0:
                raise SingularJacobianError("surface Jacobian vanishes at the parameter box center", center[0])
            rho_on_surface = density.components[0].substitute(self._g0)
            return ScalarField(rho_on_surface * det * sign, self.d, box, "rho_S")

        def evaluator(s: np.ndarray) -> np.ndarray:
            return self.density(self.surface.on_surface(s))[:, None]

        def jet(s: np.ndarray) -> Jet:
            h = FD_STEP
            value = evaluator(s)[:, 0]
            grad = np.empty((len(s), self.d))
            for a in range(self.d):
                e = np.zeros(self.d)
                e[a] = h
                grad[:, a] = (evaluator(s + e)[:, 0] - evaluator(s - e)[:, 0]) / (2 * h)
            return Jet(value[:, None], grad[:, :, None])

        return CallableField(self.d, 0, Variance.COVECTOR, evaluator, jet, box, "rho_S")

    def surface_field(self, z: Field) -> ExpressionField:
        """s-chart representation z(s) = (D g⁻¹ · Z)(g(s, 0)), s-part."""
        if not isinstance(z, ExpressionField) or z.grade != 1 or z.variance != Variance.VECTOR:
            raise ShapeError("surface fields must be expression-backed vector fields")
        st = self.surface.straightening
        z_on_surface = [c.substitute(self._g0) for c in z.components]
        comps = []
        for a in range(self.d):
            total = Expression.constant(0.0, self.d)
            for i in range(self.n):
                total = total + st.inverse[a].derivative(i).substitute(self._g0) * z_on_surface[i]
            comps.append(total)
        return ExpressionField(comps, self.d, 1, Variance.VECTOR, self.surface.parameter_box, f"{z.label}|S")

    def chart_field(self, z_surface: ExpressionField) -> ExpressionField:
        """The lift (z(s), 0) in tube coordinates."""
        s_vars = [Expression.variable(a, self.n) for a in range(self.d)]
        comps = [c.substitute(s_vars) for c in z_surface.components]
        comps += [Expression.constant(0.0, self.n) for _ in range(self.m)]
        return ExpressionField(comps, self.n, 1, Variance.VECTOR, None, f"{z_surface.label}~")

    def embed_surface_form(self, values: np.ndarray, grade: int) -> np.ndarray:
        """Components of a form on S placed on the s-indices of the tube chart (q* in coordinates)."""
        target = index_map(self.n, grade)
        out = np.zeros((len(values), len(multi_indices(self.n, grade))))
        for pos, index in enumerate(multi_indices(self.d, grade)):
            out[:, target[index]] = values[:, pos]
        return out

    def beta_field(self, omega_s: Field) -> CallableField:
        """β = Ω̃ ∧ α in tube coordinates (a density); value via the wedge, jet via the chain rule."""
        n, m, d = self.n, self.m, self.d
        transversality = self.system.transversality

        def evaluator(p: np.ndarray) -> np.ndarray:
            x, jacobian = self.psi(p)
            surface_part = self.embed_surface_form(omega_s.evaluate(p[:, :d]), d)
            pulled = np.einsum("pji,pj->pi", compound_matrix(jacobian, m), self.system.alpha.evaluate(x))
            return wedge_components(surface_part, pulled, n, d, m)

        def jet(p: np.ndarray) -> Jet:
            x, jacobian = self.psi(p)
            ws = omega_s.jet(p[:, :d])
            a = transversality.jet(x)
            grad = np.einsum("pi,pij->pj", a.grad[:, :, 0], jacobian) * ws.value
            grad[:, :d] += ws.grad[:, :, 0] * a.value
            return Jet(ws.value * a.value, grad[:, :, None])

        return CallableField(n, 0, Variance.COVECTOR, evaluator, jet, None, "beta")

    def check_tangent(self, z: Field, per_axis: int = 5):
        x = self.surface.points(self.surface.region.grid(per_axis))
        alpha = self.system.alpha.evaluate(x)
        values = z.evaluate(x)
        contraction = np.linalg.norm(contract_components(values, alpha, self.n, 1, self.m), axis=-1)
        scale = 1.0 + np.linalg.norm(values, axis=-1) * np.linalg.norm(alpha, axis=-1)
        if np.any(contraction > TANGENCY_TOL * scale):
            bad = x[np.argmax(contraction / scale)]
            raise TransversalityError(f"{z.label} is not tangent to S", bad)


def prepare_chart(
    surface: ElementarySurface,
    system: TransversalSystem,
    vs: VolumeStructure,
    engine: Optional[FlowEngine] = None,
    per_axis: int = 5,
) -> TubeChart:
    surface.straightening.validate(per_axis)
    system.validate(surface, per_axis)
    return TubeChart(surface, system, vs, engine)


# ==========================================================
# TUBE LIMITS
# ==========================================================


@dataclass(frozen=True)
class Extrapolation:
    value: Optional[float]
    error: Optional[float]
    order: Optional[float]
    flagged: bool
    note: str


def richardson(
    r_values: Sequence[float], values: Sequence[float], errors: Sequence[float], floor: float = 1e-9
) -> Extrapolation:
    """Extrapolate to r = 0 assuming an expansion in r² (Neville tableau at h = r² = 0).

    Differences below `floor` (relative to max(1, |values|)) or ten quadrature
    error estimates count as noise.
    """
    r = np.asarray(r_values, dtype=float)
    v = np.asarray(values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if len(v) < 3:
        raise ShapeError("extrapolation needs at least three values")
    noise = 10.0 * e + floor * max(1.0, float(np.abs(v).max()))
    diffs = np.diff(v)
    significant = np.abs(diffs) > noise[:-1] + noise[1:]
    if len(set(np.sign(diffs[significant]))) > 1:
        return Extrapolation(None, None, None, True, "sequence is not monotone beyond quadrature noise")

    order = None
    note = ""
    if significant[-1] and significant[-2]:
        order = float(log(abs(diffs[-2]) / abs(diffs[-1])) / log(r[-3] / r[-2]))
    else:
        note = "differences at quadrature noise level"

    h = r ** 2
    tableau = list(v)
    previous = None
    for level in range(1, len(v)):
        if level == len(v) - 1:
            previous = tableau[1]
        for i in range(len(v) - level):
            tableau[i] = (h[i] * tableau[i + 1] - h[i + level] * tableau[i]) / (h[i] - h[i + level])
    value = float(tableau[0])
    return Extrapolation(value, float(abs(value - previous)), order, False, note)


def _direct(chart: TubeChart, box: ChartDomain, q: QuadratureSpec, weight: Callable) -> IntegralEstimate:
    def integrand(s: np.ndarray) -> np.ndarray:
        p = chart.surface.on_surface(s)
        x, jacobian = chart.psi(p)
        return weight(p, x) * chart._density_from(x, jacobian, p)

    return integrate(integrand, None, box, q)


def _tube_sequence(
    chart: TubeChart, box: ChartDomain, r_values: Sequence[float], q: QuadratureSpec, weight: Callable
) -> Tuple[List[float], List[float]]:
    def integrand(p: np.ndarray) -> np.ndarray:
        x, jacobian = chart.psi(p)
        return weight(p, x) * chart._density_from(x, jacobian, p)

    values, errors = [], []
    for r in r_values:
        estimate = integrate_product(integrand, box, chart.m, r, q)
        volume = ball_volume(chart.m, r)
        values.append(estimate.value / volume)
        errors.append(estimate.error / volume)
        logging.info(f"[TUBE] r = {r}: {values[-1]:.12g} ± {errors[-1]:.1e}")
    return values, errors


def tube_measure(
    surface: ElementarySurface,
    system: TransversalSystem,
    vs: VolumeStructure,
    r: float,
    q: Optional[QuadratureSpec] = None,
    engine: Optional[FlowEngine] = None,
) -> IntegralEstimate:
    """μ(Φ_{B_r} A) = ∫_{A_param × B_r} ρ(ψ) |det Dψ| dt ds."""
    q = q or QuadratureSpec()
    chart = prepare_chart(surface, system, vs, engine)
    chart.certify(surface.region, r)

    def integrand(p: np.ndarray) -> np.ndarray:
        return chart.density(p)

    return integrate_product(integrand, surface.region, chart.m, r, q)


def _limit_report(
    quantity: str,
    chart: TubeChart,
    r_values: Sequence[float],
    q: QuadratureSpec,
    weight: Callable,
    tolerance: Optional[float],
) -> SurfaceMeasureReport:
    box = chart.surface.region
    chart.certify(box, max(r_values))
    values, errors = _tube_sequence(chart, box, r_values, q, weight)
    direct = _direct(chart, box, q, weight)
    ext = richardson(r_values, values, errors)
    passed = None
    if tolerance is not None:
        passed = bool(not ext.flagged and abs(ext.value - direct.value) <= tolerance)
    report = SurfaceMeasureReport(
        quantity=quantity,
        r_values=list(r_values),
        values=values,
        errors=errors,
        extrapolated=ext.value,
        extrapolation_error=ext.error,
        direct=direct.value,
        direct_error=direct.error,
        observed_order=ext.order,
        flagged=ext.flagged,
        note=ext.note,
        tolerance=tolerance,
        passed=passed,
    )
    logging.info(f"[SURFACE] {quantity}: extrapolated {ext.value}, direct {direct.value:.12g}")
    return report


def surface_measure(
    surface: ElementarySurface,
    system: TransversalSystem,
    vs: VolumeStructure,
    r_values: Sequence[float],
    q: Optional[QuadratureSpec] = None,
    engine: Optional[FlowEngine] = None,
    tolerance: Optional[float] = None,
) -> SurfaceMeasureReport:
    chart = prepare_chart(surface, system, vs, engine)
    return _limit_report("sigma", chart, r_values, q or QuadratureSpec(), lambda p, x: 1.0, tolerance)


def lemma3_average(
    u: Field,
    surface: ElementarySurface,
    system: TransversalSystem,
    vs: VolumeStructure,
    r_values: Sequence[float],
    q: Optional[QuadratureSpec] = None,
    engine: Optional[FlowEngine] = None,
    tolerance: Optional[float] = None,
) -> SurfaceMeasureReport:
    """Tube averages (1/λ(B_r)) ∫_{Φ_{B_r}A} u dμ against ∫_A u dσ."""
    chart = prepare_chart(surface, system, vs, engine)
    return _limit_report(
        f"average of {u.label}", chart, r_values, q or QuadratureSpec(), lambda p, x: u.values(x), tolerance
    )


# ==========================================================
# LIFTS + THEOREM CHECKS
# ==========================================================


class LiftedField(CallableField):
    """Z̃ on the tube with q_* Z̃ = Z: Z̃(ψ(s,t)) = D_s ψ(s,t) · z(s)."""

    def __init__(self, chart: TubeChart, source: Field):
        self.chart = chart
        self.source = source
        self.surface_field = chart.surface_field(source)
        super().__init__(
            chart.n, 1, Variance.VECTOR, self._evaluate, self._difference_jet, chart.vs.domain, f"{source.label}~"
        )

    def at_params(self, params) -> np.ndarray:
        p = as_points(params, self.chart.n)
        _, jacobian = self.chart.psi(p)
        z = self.surface_field.evaluate(p[:, : self.chart.d])
        return np.einsum("pij,pj->pi", jacobian[:, :, : self.chart.d], z)

    def _evaluate(self, y: np.ndarray) -> np.ndarray:
        return self.at_params(self.chart.locate(y))

    def _difference_jet(self, y: np.ndarray) -> Jet:
        h = FD_STEP
        grad = np.empty((len(y), self.dimension, self.dimension))
        for j in range(self.dimension):
            e = np.zeros(self.dimension)
            e[j] = h
            grad[:, j, :] = (self._evaluate(y + e) - self._evaluate(y - e)) / (2 * h)
        return Jet(self._evaluate(y), grad)


def q_connected_lift(
    z: Field,
    surface: ElementarySurface,
    system: TransversalSystem,
    vs: VolumeStructure,
    engine: Optional[FlowEngine] = None,
) -> LiftedField:
    chart = prepare_chart(surface, system, vs, engine)
    chart.check_tangent(z)
    return LiftedField(chart, z)


def verify_lift(lift: LiftedField, params) -> List[IdentityReport]:
    """Dq · Z̃ = Z(q) with Dq = [∂_s g(s,0), 0] Dψ⁻¹, and the α-contraction of Z̃."""
    chart = lift.chart
    n, m, d = chart.n, chart.m, chart.d
    p = as_points(params, n)

    def pushforward(pts):
        x, jacobian = chart.psi(pts)
        lifted = lift.at_params(pts)
        coords = np.linalg.solve(jacobian, lifted[:, :, None])[:, :, 0]
        base, tangents = chart.base(pts[:, :d])
        projected = np.einsum("pia,pa->pi", tangents, coords[:, :d])
        return projected, lift.source.evaluate(base), [np.zeros((len(pts), 1))]

    def contraction(pts):
        x, _ = chart.psi(pts)
        lifted = lift.at_params(pts)
        alpha = chart.system.alpha.evaluate(x)
        values = contract_components(lifted, alpha, n, 1, m)
        scale = np.linalg.norm(lifted, axis=-1) * np.linalg.norm(alpha, axis=-1)
        return values, np.zeros_like(values), [scale]

    return [
        identity_report("lift-pushforward", p, pushforward),
        identity_report("lift-alpha-contraction", p, contraction),
    ]


def _tube_volume(chart: TubeChart, box: ChartDomain, r_values: Sequence[float]) -> VolumeStructure:
    return chart.volume_structure(chart.tube_domain(box, max(r_values)))


def _tube_probe(chart: TubeChart, box: ChartDomain, r: float) -> np.ndarray:
    probe = chart.tube_domain(box, r).grid(3)
    return probe[np.linalg.norm(probe[:, chart.d:], axis=-1) <= r]


def _ambient_mismatch(chart: TubeChart, z: Field, chart_div: Field, probe: np.ndarray) -> float:
    """max |div Z̃(ψ(p)) - div(Z̃ in tube coordinates)(p)|, the left side from the ambient lift."""
    if not len(probe):
        return 0.0
    ambient = div_vector(LiftedField(chart, z), chart.vs)
    x, _ = chart.psi(probe)
    return float(np.abs(ambient.values(x) - chart_div.values(probe)).max())


def _theorem_report(
    variant: str,
    chart: TubeChart,
    lhs: IntegralEstimate,
    r_values: Sequence[float],
    q: QuadratureSpec,
    weight: Callable,
    divergence: Field,
    tolerance: Optional[float],
    ambient_mismatch: Optional[float] = None,
) -> Theorem2Report:
    box = chart.surface.region
    chart.certify(box, max(r_values))
    values, errors = _tube_sequence(chart, box, r_values, q, weight)
    ext = richardson(r_values, values, errors)
    probe = _tube_probe(chart, box, max(r_values))
    evidence = float(np.abs(divergence.evaluate(probe)).max()) if len(probe) else 0.0
    difference = None if ext.value is None else abs(lhs.value - ext.value)
    passed = None
    if tolerance is not None:
        passed = bool(difference is not None and difference <= tolerance)
    report = Theorem2Report(
        variant=variant,
        lhs=lhs.value,
        lhs_error=lhs.error,
        r_values=list(r_values),
        rhs_values=values,
        rhs_errors=errors,
        rhs_extrapolated=ext.value,
        rhs_extrapolation_error=ext.error,
        difference=difference,
        observed_order=ext.order,
        flagged=ext.flagged,
        max_abs_lift_divergence=evidence,
        ambient_lift_mismatch=ambient_mismatch,
        tolerance=tolerance,
        passed=passed,
    )
    logging.info(f"[SURFACE] {variant}: lhs {lhs.value:.10g}, rhs {ext.value}, difference {difference}")
    return report


def theorem2_check(
    z: Field,
    u: Optional[Field],
    surface: ElementarySurface,
    system: TransversalSystem,
    vs: VolumeStructure,
    r_values: Sequence[float],
    q: Optional[QuadratureSpec] = None,
    engine: Optional[FlowEngine] = None,
    lift_u: bool = True,
    tolerance: Optional[float] = None,
) -> Theorem2Report:
    """∫_A u div_S Z dσ against the tube limit of (1/λ(B_r)) ∫ û div Z̃ dμ.

    With `lift_u` the tube integrand uses û(Φ_t x) = u(x); otherwise u itself
    is evaluated on the tube.
    """
    q = q or QuadratureSpec()
    chart = prepare_chart(surface, system, vs, engine)
    chart.check_tangent(z)
    box = surface.region

    def u_at(points: np.ndarray) -> np.ndarray:
        return np.ones(len(points)) if u is None else u.values(points)

    z_s = chart.surface_field(z)
    rho_s = chart.surface_density()
    div_s = div_vector(z_s, VolumeStructure(rho_s, surface.parameter_box))

    def lhs_integrand(s: np.ndarray) -> np.ndarray:
        return u_at(surface.points(s)) * div_s.values(s) * rho_s.values(s)

    lhs = integrate(lhs_integrand, None, box, q)
    div_lift = div_vector(chart.chart_field(z_s), _tube_volume(chart, box, r_values))

    def weight(p: np.ndarray, x: np.ndarray) -> np.ndarray:
        base = surface.points(p[:, : chart.d]) if lift_u else x
        return u_at(base) * div_lift.values(p)

    variant = "lifted-u" if lift_u else "ambient-u"
    mismatch = _ambient_mismatch(chart, z, div_lift, _tube_probe(chart, box, max(r_values)))
    return _theorem_report(variant, chart, lhs, r_values, q, weight, div_lift, tolerance, mismatch)


def corollary_check(
    vectors: Sequence[Field],
    alpha_s: Field,
    surface: ElementarySurface,
    system: TransversalSystem,
    vs: VolumeStructure,
    r_values: Sequence[float],
    q: Optional[QuadratureSpec] = None,
    engine: Optional[FlowEngine] = None,
    tolerance: Optional[float] = None,
) -> Theorem2Report:
    """Multivector version: tube averages of ⟨α̂, div Z̃⟩ against ∫_A ⟨α, div_S Z⟩ dσ."""
    q = q or QuadratureSpec()
    chart = prepare_chart(surface, system, vs, engine)
    k = len(vectors) - 1
    if alpha_s.grade != k or alpha_s.dimension != chart.d or alpha_s.variance != Variance.COVECTOR:
        raise ShapeError(f"the test form must be a {k}-form on the {chart.d}-dimensional surface chart")
    for z in vectors:
        chart.check_tangent(z)
    box = surface.region

    z_s = [chart.surface_field(z) for z in vectors]
    rho_s = chart.surface_density()
    div_s = div_strong(MultiVectorField.decomposable(z_s, label="Z|S"), VolumeStructure(rho_s, surface.parameter_box))

    def lhs_integrand(s: np.ndarray) -> np.ndarray:
        return np.sum(alpha_s.evaluate(s) * div_s.evaluate(s), axis=-1) * rho_s.values(s)

    lhs = integrate(lhs_integrand, None, box, q)
    lifted = MultiVectorField.decomposable([chart.chart_field(f) for f in z_s], label="Z~")
    div_lift = div_strong(lifted, _tube_volume(chart, box, r_values))

    def weight(p: np.ndarray, x: np.ndarray) -> np.ndarray:
        alpha_hat = chart.embed_surface_form(alpha_s.evaluate(p[:, : chart.d]), k)
        return np.sum(alpha_hat * div_lift.evaluate(p), axis=-1)

    return _theorem_report("multivector", chart, lhs, r_values, q, weight, div_lift, tolerance)


def restriction_check(
    z: Field,
    surface: ElementarySurface,
    system: TransversalSystem,
    vs: VolumeStructure,
    s_points,
    surface_volume: Optional[Field] = None,
    engine: Optional[FlowEngine] = None,
    per_axis: int = 5,
    radius: Optional[float] = None,
) -> IdentityReport:
    """div_S Z = (div Z̃)|_S, the right side taken with respect to β = Ω̃ ∧ α.

    Needs dα = 0; the identity also presumes α is compatible with the leaves
    Φ_t S (as for associated forms built from the straightening map). β lives
    on the tube of `radius`, by default the transversal half-width of the
    straightening chart.
    """
    chart = prepare_chart(surface, system, vs, engine, per_axis)
    st = surface.straightening
    tube_points = st.map(st.chart.grid(per_axis))
    d_alpha = exterior_derivative(system.alpha).evaluate(tube_points)
    size = np.linalg.norm(d_alpha, axis=-1)
    if size.max() > CLOSEDNESS_TOL * (1.0 + np.abs(system.alpha.evaluate(tube_points)).max()):
        raise ClosednessError(f"dα does not vanish (|dα| = {size.max():.2e})", tube_points[np.argmax(size)])
    chart.check_tangent(z, per_axis)

    omega_s = surface_volume if surface_volume is not None else chart.surface_density()
    z_s = chart.surface_field(z)
    lhs_div = div_vector(z_s, VolumeStructure(omega_s, surface.parameter_box))

    beta = chart.beta_field(omega_s)
    s_pts = as_points(s_points, chart.d)
    beta_values = beta.values(surface.on_surface(s_pts))
    if np.any(beta_values == 0):
        raise TransversalityError("β = Ω̃ ∧ α degenerates on the surface", s_pts[np.argmin(np.abs(beta_values))])
    if radius is None:
        radius = min(min(-lo, hi) for lo, hi in zip(st.chart.lower[chart.d:], st.chart.upper[chart.d:]))
    if radius <= 0:
        raise ShapeError(f"tube radius must be positive, got {radius}")
    tube_vs = VolumeStructure(beta, chart.tube_domain(surface.parameter_box, radius), "beta", check_grid=None)
    rhs_div = div_vector(chart.chart_field(z_s), tube_vs)

    def fn(s: np.ndarray):
        return lhs_div.evaluate(s), rhs_div.evaluate(surface.on_surface(s)), []

    return identity_report("restriction", s_pts, fn)
