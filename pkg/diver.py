# diver.py
"""
Divergence of multivector fields with respect to a volume form Ω = ρ dx^0∧…∧dx^(n-1).

div_strong solves i_{div Z}Ω = (-1)^(k-1) d i_Z Ω pointwise (flat, d, sharp);
div_recursive expands decomposable terms with
    div(X∧Z) = div X · Z − X ∧ div Z + L_X Z
and serves as an independent cross-check. The check_* functions sweep point
sets and return IdentityReports; the weak-form checks integrate against
compactly supported test forms.
"""
import logging
from math import comb
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from config import BOUNDARY_CHECK_GRID, DENSITY_CHECK_GRID
from errors import DensityError, ShapeError, SupportError
from exterior import (
    AlternatingTensor,
    Variance,
    contract_components,
    derivative_components,
    flat_components,
    multi_indices,
    sharp_components,
    wedge_components,
)
from fields import (
    CallableField,
    ChartDomain,
    ExpressionField,
    Field,
    Jet,
    MultiVectorField,
    ScalarField,
    Term,
    as_multivector,
    as_points,
    combine,
    directional_derivative,
    exterior_derivative,
    interior_by_form_field,
    lie_bracket,
    lie_derivative,
    lie_derivative_form,
    pair_fields,
    scale_field,
)
from models import IdentityReport, IntegralEstimate, QuadratureSpec, WeakDivergenceResult
from quad import integrate, map_chunks

# ==========================================================
# VOLUME STRUCTURE
# ==========================================================


class VolumeStructure:
    """Density ρ > 0 on a chart box; Ω = ρ dx^0∧…∧dx^(n-1), μ = ρ · Lebesgue."""

    def __init__(
        self,
        density: Field,
        domain: ChartDomain,
        label: str = "rho",
        check_grid: Optional[int] = DENSITY_CHECK_GRID,
    ):
        if density.grade != 0:
            raise ShapeError(f"density must be a scalar field, got {density.describe()}")
        if density.dimension != domain.dimension:
            raise ShapeError("density and domain disagree on dimension")
        self.density = density
        self.domain = domain
        self.label = label
        if check_grid:
            self._check_positive(check_grid)

    @classmethod
    def lebesgue(cls, domain: ChartDomain) -> "VolumeStructure":
        return cls(ScalarField(1.0, domain.dimension, domain, "1"), domain, "lebesgue")

    @classmethod
    def gaussian(cls, domain: ChartDomain, normalized: bool = True) -> "VolumeStructure":
        n = domain.dimension
        source = " + ".join(f"x{i}^2" for i in range(n))
        prefix = f"{(2 * np.pi) ** (-n / 2)!r} * " if normalized else ""
        return cls(ScalarField(f"{prefix}exp(-({source}) / 2)", n, domain, "gaussian"), domain, "gaussian")

    @classmethod
    def from_source(cls, source: str, domain: ChartDomain) -> "VolumeStructure":
        if source.strip().lower() == "gaussian":
            return cls.gaussian(domain)
        return cls(ScalarField(source, domain.dimension, domain, source), domain, source)

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    def _check_positive(self, per_axis: int):
        per_axis = max(2, min(per_axis, int(20_000 ** (1.0 / self.dimension))))
        corners = np.array(np.meshgrid(*zip(self.domain.lower, self.domain.upper), indexing="ij"))
        pts = np.concatenate(
            [self.domain.shrunk(0.0).grid(per_axis), corners.reshape(self.dimension, -1).T], axis=0
        )
        values = self.density_values(pts)
        if not np.all(values > 0):
            bad = pts[np.argmin(values)]
            raise DensityError(f"density {self.label} is not positive at {bad.tolist()}", bad)

    def density_values(self, points) -> np.ndarray:
        return self.density.values(points)

    def density_jet(self, points) -> Tuple[np.ndarray, np.ndarray]:
        jet = self.density.jet(points)
        return jet.value[:, 0], jet.grad[:, :, 0]

    def volume_form_at(self, point) -> AlternatingTensor:
        rho = float(self.density_values(as_points(point, self.dimension))[0])
        return AlternatingTensor(self.dimension, self.dimension, Variance.COVECTOR, np.array([rho]))


# ==========================================================
# DIVERGENCE OPERATORS
# ==========================================================


def flat_field(z: Field, vs: VolumeStructure) -> CallableField:
    """i_Z Ω as a form field; differentiable whenever Z and ρ are."""
    if z.variance != Variance.VECTOR:
        raise ShapeError(f"flat needs a multivector field, got {z.describe()}")
    n, k = z.dimension, z.grade

    def evaluator(pts: np.ndarray) -> np.ndarray:
        return flat_components(z.evaluate(pts), vs.density_values(pts), n, k)

    def jet(pts: np.ndarray) -> Jet:
        jz = z.jet(pts)
        rho, drho = vs.density_jet(pts)
        return Jet(
            flat_components(jz.value, rho, n, k),
            flat_components(drho[:, :, None] * jz.value[:, None, :] + rho[:, None, None] * jz.grad, 1.0, n, k),
        )

    return CallableField(n, n - k, Variance.COVECTOR, evaluator, jet, z.domain, f"i({z.label})Ω")


def div_strong(z: Field, vs: VolumeStructure) -> CallableField:
    """div Z = sharp((-1)^(k-1) d i_Z Ω), a (k-1)-vector field."""
    if z.variance != Variance.VECTOR:
        raise ShapeError(f"divergence needs a multivector field, got {z.describe()}")
    if z.grade == 0:
        raise ShapeError("divergence of a grade-0 field is undefined")
    if z.dimension != vs.dimension:
        raise ShapeError("field and volume structure disagree on dimension")
    n, k = z.dimension, z.grade
    flat = flat_field(z, vs)
    sign = (-1.0) ** (k - 1)

    def evaluator(pts: np.ndarray) -> np.ndarray:
        d_flat = derivative_components(flat.jet(pts).grad, n, n - k)
        out = sign * sharp_components(d_flat, vs.density_values(pts), n, k - 1)
        if out.shape[-1] != comb(n, k - 1):
            raise ShapeError(f"divergence produced {out.shape[-1]} components for grade {k - 1}")
        return out

    return CallableField(n, k - 1, Variance.VECTOR, evaluator, domain=z.domain, label=f"div {z.label}")


def div_vector(x: Field, vs: VolumeStructure) -> CallableField:
    if x.grade != 1 or x.variance != Variance.VECTOR:
        raise ShapeError(f"div_vector needs a vector field, got {x.describe()}")
    return div_strong(x, vs)


def coordinate_divergence(x: Field, vs: VolumeStructure, points) -> np.ndarray:
    """(1/ρ) Σ_i ∂_i(ρ X^i), straight from the coordinate formula."""
    jx = x.jet(points)
    rho, drho = vs.density_jet(points)
    return np.einsum("pii->p", jx.grad) + np.einsum("pi,pi->p", jx.value, drho) / rho


def div_recursive(z: Field, vs: VolumeStructure) -> MultiVectorField:
    """Divergence from the decomposable-term recursion; grade k input gives grade k-1."""
    z = as_multivector(z)
    if z.grade == 0:
        raise ShapeError("divergence of a grade-0 field is undefined")
    result = MultiVectorField.zero(z.dimension, z.grade - 1, z.domain)
    for term in z.terms:
        result = result + _div_term(term, z.dimension, vs)
    return MultiVectorField(result.terms, z.dimension, z.grade - 1, z.domain, f"div {z.label}")


def _div_term(term: Term, n: int, vs: VolumeStructure) -> MultiVectorField:
    leading = scale_field(term.coefficient, term.factors[0])
    rest = term.factors[1:]
    div_leading = div_vector(leading, vs)
    if not rest:
        return MultiVectorField([Term(div_leading, ())], n, 0)
    tail = MultiVectorField.decomposable(list(rest))
    return (
        MultiVectorField([Term(div_leading, rest)], n, len(rest))
        - div_recursive(tail, vs).wedge_left(leading)
        + lie_derivative(leading, tail)
    )


# ==========================================================
# POINTWISE IDENTITY CHECKS
# ==========================================================

ResidualFn = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray, Sequence[np.ndarray]]]


def _norms(values: np.ndarray) -> np.ndarray:
    return np.linalg.norm(values.reshape(len(values), -1), axis=-1)


def identity_report(name: str, points, fn: ResidualFn) -> IdentityReport:
    """Max abs/rel residual of lhs = rhs; the scale is the largest term magnitude at each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))

    def sweep(chunk: np.ndarray) -> np.ndarray:
        lhs, rhs, terms = fn(chunk)
        residual = _norms(lhs - rhs)
        scale = np.max(np.stack([_norms(lhs), _norms(rhs), *[_norms(t) for t in terms]]), axis=0)
        return np.stack([residual, scale], axis=-1)

    stats = map_chunks(sweep, pts)
    residual, scale = stats[:, 0], stats[:, 1]
    relative = np.where(scale > 0, residual / np.where(scale > 0, scale, 1.0), residual)
    worst = int(np.argmax(relative))
    report = IdentityReport(
        identity=name,
        samples=len(pts),
        max_abs_residual=float(residual.max()),
        max_rel_residual=float(relative[worst]),
        scale=float(scale[worst]),
        worst_point=pts[worst].tolist(),
    )
    logging.info(f"[DIV] {name}: max rel residual {report.max_rel_residual:.3e} over {report.samples} points")
    return report


def _pair_values(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1, keepdims=True)


def _require_form(omega: Field):
    if omega.variance != Variance.COVECTOR:
        raise ShapeError(f"expected a differential form, got {omega.describe()}")


def _require_multivector(z: Field):
    if z.variance != Variance.VECTOR:
        raise ShapeError(f"expected a multivector field, got {z.describe()}")


def check_lemma1(omega: Field, z: Field, vs: VolumeStructure, points) -> IdentityReport:
    """ω ∧ i_Z Ω = ⟨ω, Z⟩ Ω."""
    _require_form(omega)
    _require_multivector(z)
    if omega.grade != z.grade:
        raise ShapeError(f"grades differ: form {omega.grade}, multivector {z.grade}")
    n, k = z.dimension, z.grade

    def fn(pts):
        w, x, rho = omega.evaluate(pts), z.evaluate(pts), vs.density_values(pts)
        lhs = wedge_components(w, flat_components(x, rho, n, k), n, k, n - k)
        rhs = _pair_values(w, x) * rho[:, None]
        return lhs, rhs, [rho * _norms(w) * _norms(x)]

    return identity_report("lemma1", points, fn)


def check_aux(omega: Field, x: Field, vs: VolumeStructure, points) -> IdentityReport:
    """i_{j(ω)X} Ω = (-1)^(k(m+1)) ω ∧ i_X Ω for k ≤ m."""
    _require_form(omega)
    _require_multivector(x)
    n, k, m = x.dimension, omega.grade, x.grade
    if k > m:
        raise ShapeError(f"auxiliary formula needs grade(ω) ≤ grade(X), got {k} > {m}")
    sign = (-1.0) ** (k * (m + 1))

    def fn(pts):
        w, v, rho = omega.evaluate(pts), x.evaluate(pts), vs.density_values(pts)
        lhs = flat_components(contract_components(w, v, n, k, m), rho, n, m - k)
        rhs = sign * wedge_components(w, flat_components(v, rho, n, m), n, k, n - m)
        return lhs, rhs, [rho * _norms(w) * _norms(v)]

    return identity_report("auxiliary", points, fn)


def check_leibniz_j(omega: Field, z: Field, vs: VolumeStructure, points) -> IdentityReport:
    """div(j(ω)Z) = (-1)^k j(dω)Z + (-1)^k j(ω) div Z for k < m."""
    _require_form(omega)
    _require_multivector(z)
    n, k, m = z.dimension, omega.grade, z.grade
    if k >= m:
        raise ShapeError(f"Leibniz rule needs grade(ω) < grade(Z), got {k} ≥ {m}")
    sign = (-1.0) ** k
    lhs_field = div_strong(interior_by_form_field(omega, z), vs)
    d_omega = exterior_derivative(omega)
    div_z = div_strong(z, vs)

    def fn(pts):
        lhs = lhs_field.evaluate(pts)
        first = sign * contract_components(d_omega.evaluate(pts), z.evaluate(pts), n, k + 1, m)
        second = sign * contract_components(omega.evaluate(pts), div_z.evaluate(pts), n, k, m - 1)
        return lhs, first + second, [first, second]

    return identity_report("leibniz-j", points, fn)


def check_div_agreement(z: Field, vs: VolumeStructure, points) -> IdentityReport:
    strong = div_strong(z, vs)
    recursive = div_recursive(z, vs)

    def fn(pts):
        return strong.evaluate(pts), recursive.evaluate(pts), []

    return identity_report("div-agreement", points, fn)


def check_cartan(omega: Field, x: Field, y: Field, points) -> IdentityReport:
    """dω(X,Y) = X ω(Y) − Y ω(X) − ω([X,Y]) for a 1-form ω."""
    _require_form(omega)
    if omega.grade != 1:
        raise ShapeError("the Cartan check takes a 1-form")
    n = omega.dimension
    d_omega = exterior_derivative(omega)
    x_of_wy = directional_derivative(x, pair_fields(omega, y))
    y_of_wx = directional_derivative(y, pair_fields(omega, x))
    bracket = lie_bracket(x, y)

    def fn(pts):
        xy = wedge_components(x.evaluate(pts), y.evaluate(pts), n, 1, 1)
        lhs = _pair_values(d_omega.evaluate(pts), xy)
        a, b = x_of_wy.evaluate(pts), y_of_wx.evaluate(pts)
        c = _pair_values(omega.evaluate(pts), bracket.evaluate(pts))
        return lhs, a - b - c, [a, b, c]

    return identity_report("cartan", points, fn)


def check_lie_pairing(omega: Field, x: Field, z: Field, points) -> IdentityReport:
    """⟨ω, L_X Z⟩ = X⟨ω, Z⟩ - ⟨L_X ω, Z⟩ with L_X ω from Cartan's formula."""
    _require_form(omega)
    z = as_multivector(z)
    lie = lie_derivative(x, z)
    along = directional_derivative(x, pair_fields(omega, z))
    lie_omega = lie_derivative_form(x, omega)

    def fn(pts):
        lhs = _pair_values(omega.evaluate(pts), lie.evaluate(pts))
        a = along.evaluate(pts)
        b = _pair_values(lie_omega.evaluate(pts), z.evaluate(pts))
        return lhs, a - b, [a, b]

    return identity_report("lie-pairing", points, fn)


# ==========================================================
# WEAK FORMULATION
# ==========================================================


def _test_region(omega: Field, vs: VolumeStructure) -> ChartDomain:
    support = getattr(omega, "support", None)
    if support is not None:
        if not all(a > b for a, b in zip(support.lower, vs.domain.lower)) or not all(
            a < b for a, b in zip(support.upper, vs.domain.upper)
        ):
            raise SupportError(f"support of {omega.label} touches the domain boundary")
        return support
    # no declared support: ω and its gradient must vanish on the boundary faces
    pts = _boundary_points(vs.domain, BOUNDARY_CHECK_GRID)
    jet = omega.jet(pts)
    magnitude = np.abs(jet.value).max(initial=0.0) + np.abs(jet.grad).max(initial=0.0)
    if magnitude > 1e-12:
        raise SupportError(f"{omega.label} does not vanish near the domain boundary")
    return vs.domain


def _boundary_points(domain: ChartDomain, per_axis: int) -> np.ndarray:
    grid = domain.shrunk(0.0).grid(per_axis)
    faces = []
    for axis in range(domain.dimension):
        for value in (domain.lower[axis], domain.upper[axis]):
            face = grid.copy()
            face[:, axis] = value
            faces.append(face)
    return np.concatenate(faces, axis=0)


def _pairing_integrand(a: Field, b: Field) -> Callable[[np.ndarray], np.ndarray]:
    def integrand(pts: np.ndarray) -> np.ndarray:
        return np.sum(a.evaluate(pts) * b.evaluate(pts), axis=-1)

    return integrand


def weak_div_residual(
    z: Field, w: Field, omega: Field, vs: VolumeStructure, q: Optional[QuadratureSpec] = None
) -> WeakDivergenceResult:
    """|∫⟨dω, Z⟩ dμ + ∫⟨ω, W⟩ dμ| for a compactly supported (k-1)-form ω."""
    _require_form(omega)
    _require_multivector(z)
    _require_multivector(w)
    k = z.grade
    if w.grade != k - 1 or omega.grade != k - 1:
        raise ShapeError(
            f"weak divergence of a grade-{k} field needs a grade-{k - 1} candidate and test form"
        )
    region = _test_region(omega, vs)
    d_omega = exterior_derivative(omega)
    flux = integrate(_pairing_integrand(d_omega, z), vs, region, q)
    candidate = integrate(_pairing_integrand(omega, w), vs, region, q)
    result = WeakDivergenceResult(
        witness=omega.label,
        flux_term=flux.value,
        candidate_term=candidate.value,
        residual=abs(flux.value + candidate.value),
        error_estimate=flux.error + candidate.error,
    )
    logging.info(
        f"[DIV] weak residual {result.residual:.3e} (±{result.error_estimate:.1e}) with witness {omega.label}"
    )
    return result


def check_integration_by_parts(
    x: Field, u: Field, vs: VolumeStructure, q: Optional[QuadratureSpec] = None
) -> WeakDivergenceResult:
    """∫ X u dμ = −∫ u div X dμ for a compactly supported function u."""
    return weak_div_residual(x, div_vector(x, vs), u, vs, q)


def check_stokes(
    omega: Field, x: Field, vs: VolumeStructure, q: Optional[QuadratureSpec] = None
) -> WeakDivergenceResult:
    """∫ dω ∧ i_X Ω = (-1)^(k+1) ∫ ω ∧ d i_X Ω for a compactly supported k-form ω."""
    _require_form(omega)
    _require_multivector(x)
    n, k = x.dimension, omega.grade
    if x.grade != k + 1:
        raise ShapeError(f"Stokes check pairs a {k}-form with a {k + 1}-vector field")
    region = _test_region(omega, vs)
    d_omega = exterior_derivative(omega)
    flat = flat_field(x, vs)
    d_flat = exterior_derivative(flat)

    def left(pts):
        return wedge_components(d_omega.evaluate(pts), flat.evaluate(pts), n, k + 1, n - k - 1)[:, 0]

    def right(pts):
        return wedge_components(omega.evaluate(pts), d_flat.evaluate(pts), n, k, n - k)[:, 0]

    lhs = integrate(left, None, region, q)
    rhs = integrate(right, None, region, q)
    sign = (-1.0) ** k
    return WeakDivergenceResult(
        witness=omega.label,
        flux_term=lhs.value,
        candidate_term=sign * rhs.value,
        residual=abs(lhs.value + sign * rhs.value),
        error_estimate=lhs.error + rhs.error,
    )


def corrupted_candidate(z: Field, vs: VolumeStructure, corruption: Sequence[float]) -> Field:
    """div Z plus a constant (k-1)-vector, for the uniqueness probe."""
    divergence = div_strong(z, vs)
    if len(corruption) != divergence.size:
        raise ShapeError(f"corruption needs {divergence.size} components, got {len(corruption)}")
    n = z.dimension
    constant = ExpressionField(
        [ScalarField(float(c), n).expression for c in corruption],
        n, divergence.grade, Variance.VECTOR, z.domain, "corruption",
    )
    return combine([(1.0, divergence), (1.0, constant)], label=f"{divergence.label} + corruption")


def divergence_columns(n: int, grade: int) -> List[str]:
    return ["".join(f"e{i + 1}" for i in index) or "1" for index in multi_indices(n, grade)]
