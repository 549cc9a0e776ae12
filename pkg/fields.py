# fields.py
"""
Fields of alternating tensors over a chart box.

Every field evaluates batches: `evaluate(points)` returns an array of shape
(P, C(n,k)) and `jet(points)` returns the value together with the gradient
of every component, shape (P, n, C(n,k)) (derivative axis before component
axis). Expression-backed fields are closed under d, the Lie bracket and
directional derivatives; derived fields that are not expression-backed are
`CallableField`s whose jets follow from the product rule.
"""
import copy
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from math import comb
from typing import Callable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from errors import NotDifferentiableError, PointOutsideDomainError, ShapeError
from expr import Expression, parse
from exterior import (
    AlternatingTensor,
    Variance,
    compound_matrix,
    contract_components,
    derivative_components,
    index_map,
    multi_indices,
    permutation_sign,
    product_table,
    wedge_components,
)

ExpressionLike = Union[str, float, int, Expression]


# ==========================================================
# CHART DOMAIN
# ==========================================================


@dataclass(frozen=True)
class ChartDomain:
    """Closed box in chart coordinates; `margin` shrinks it to the interior subdomain."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    margin: float = 0.0

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper) or not lower:
            raise ShapeError("chart box needs matching, nonempty lower/upper corners")
        edges = np.subtract(upper, lower)
        if np.any(edges <= 0):
            raise ShapeError(f"chart box {lower} .. {upper} has empty interior")
        if self.margin < 0 or self.margin >= edges.min() / 2:
            raise ShapeError(f"margin {self.margin} must lie in [0, half the shortest edge)")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "margin", float(self.margin))

    @classmethod
    def cube(cls, dimension: int, low: float, high: float, margin: float = 0.0) -> "ChartDomain":
        return cls((low,) * dimension, (high,) * dimension, margin)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    def contains(self, points, slack: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all(
            (pts >= np.asarray(self.lower) - slack) & (pts <= np.asarray(self.upper) + slack), axis=-1
        )

    def require(self, points, slack: float = 1e-12):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.dimension:
            raise ShapeError(f"points of dimension {pts.shape[-1]} in a chart of dimension {self.dimension}")
        inside = self.contains(pts, slack)
        if not np.all(inside):
            bad = pts[np.argmin(inside)]
            raise PointOutsideDomainError(f"point {bad.tolist()} lies outside the chart box", bad)

    def shrunk(self, margin: Optional[float] = None) -> "ChartDomain":
        eps = self.margin if margin is None else float(margin)
        return ChartDomain(
            tuple(v + eps for v in self.lower), tuple(v - eps for v in self.upper), 0.0
        )

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        inner = self.shrunk()
        return rng.uniform(inner.lower, inner.upper, size=(count, self.dimension))

    def grid(self, per_axis: int) -> np.ndarray:
        """Cell-centred grid of the shrunken box, per_axis**n points."""
        inner = self.shrunk()
        axes = [
            lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis
            for lo, hi in zip(inner.lower, inner.upper)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def contains_box(self, other: "ChartDomain") -> bool:
        return all(a >= b for a, b in zip(other.lower, self.lower)) and all(
            a <= b for a, b in zip(other.upper, self.upper)
        )


# ==========================================================
# FIELD BASE
# ==========================================================


@dataclass(frozen=True, eq=False)
class Jet:
    value: np.ndarray
    grad: np.ndarray


def as_points(points, dimension: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != dimension:
        raise ShapeError(f"expected points of shape (P, {dimension}), got {pts.shape}")
    return pts


class Field(ABC):
    def __init__(
        self,
        dimension: int,
        grade: int,
        variance: Variance,
        domain: Optional[ChartDomain] = None,
        label: str = "",
    ):
        if domain is not None and domain.dimension != dimension:
            raise ShapeError(f"field of dimension {dimension} on a chart of dimension {domain.dimension}")
        self.dimension = int(dimension)
        self.grade = int(grade)
        self.variance = Variance(variance)
        self.domain = domain
        self.label = label or self.__class__.__name__

    @property
    def size(self) -> int:
        return comb(self.dimension, self.grade)

    @property
    def differentiable(self) -> bool:
        return False

    @abstractmethod
    def evaluate(self, points) -> np.ndarray:
        """Components at a batch of points, shape (P, C(n,k))."""

    def jet(self, points) -> Jet:
        raise NotDifferentiableError(f"{self.label} carries no derivative information")

    def values(self, points) -> np.ndarray:
        """Scalar fields only: shape (P,)."""
        if self.grade != 0:
            raise ShapeError(f"{self.label} is not a scalar field")
        return self.evaluate(points)[:, 0]

    def at(self, point) -> AlternatingTensor:
        pts = as_points(point, self.dimension)
        if self.domain is not None:
            self.domain.require(pts)
        return AlternatingTensor(self.dimension, self.grade, self.variance, self.evaluate(pts)[0])

    def describe(self) -> str:
        return f"{self.label} (n={self.dimension}, k={self.grade}, {self.variance.value})"


class ExpressionField(Field):
    """Components given as expressions, in lexicographic multi-index order."""

    def __init__(
        self,
        components: Sequence[Expression],
        dimension: int,
        grade: int,
        variance: Variance,
        domain: Optional[ChartDomain] = None,
        label: str = "",
    ):
        super().__init__(dimension, grade, variance, domain, label)
        components = tuple(components)
        if len(components) != self.size:
            raise ShapeError(f"{self.label}: expected {self.size} components, got {len(components)}")
        for component in components:
            if component.dimension != self.dimension:
                raise ShapeError(f"{self.label}: component of dimension {component.dimension}")
        self.components = components

    @property
    def differentiable(self) -> bool:
        return True

    def evaluate(self, points) -> np.ndarray:
        pts = as_points(points, self.dimension)
        if not self.components:
            return np.zeros((len(pts), 0))
        return np.stack([c.evaluate(pts) for c in self.components], axis=-1)

    def jet(self, points) -> Jet:
        pts = as_points(points, self.dimension)
        if not self.components:
            return Jet(np.zeros((len(pts), 0)), np.zeros((len(pts), self.dimension, 0)))
        parts = [c.jet(pts) for c in self.components]
        return Jet(
            np.stack([v for v, _ in parts], axis=-1),
            np.stack([g for _, g in parts], axis=-1),
        )

    def component(self, index: Sequence[int]) -> Expression:
        index = tuple(index)
        sign = permutation_sign(index)
        expression = self.components[index_map(self.dimension, self.grade)[tuple(sorted(index))]]
        return expression if sign > 0 else -expression

    def serialize(self) -> List[str]:
        return [c.serialize() for c in self.components]


def as_expression(value: ExpressionLike, dimension: int) -> Expression:
    if isinstance(value, Expression):
        if value.dimension != dimension:
            raise ShapeError(f"expression of dimension {value.dimension} where {dimension} is expected")
        return value
    if isinstance(value, str):
        return parse(value, dimension)
    return Expression.constant(float(value), dimension)


class ScalarField(ExpressionField):
    def __init__(self, expression: ExpressionLike, dimension: int, domain: Optional[ChartDomain] = None, label: str = ""):
        super().__init__(
            [as_expression(expression, dimension)], dimension, 0, Variance.COVECTOR, domain, label
        )

    @property
    def expression(self) -> Expression:
        return self.components[0]


class VectorField(ExpressionField):
    def __init__(self, components: Sequence[ExpressionLike], domain: Optional[ChartDomain] = None, label: str = ""):
        dimension = len(components)
        super().__init__(
            [as_expression(c, dimension) for c in components], dimension, 1, Variance.VECTOR, domain, label
        )


class DifferentialForm(ExpressionField):
    def __init__(
        self,
        dimension: int,
        grade: int,
        components: Union[Mapping[Tuple[int, ...], ExpressionLike], Sequence[ExpressionLike]],
        domain: Optional[ChartDomain] = None,
        label: str = "",
    ):
        if isinstance(components, Mapping):
            dense = [Expression.constant(0.0, dimension) for _ in multi_indices(dimension, grade)]
            lookup = index_map(dimension, grade)
            for index, value in components.items():
                index = tuple(index)
                sign = permutation_sign(index)
                if len(index) != grade or not sign:
                    raise ShapeError(f"{label or 'form'}: invalid multi-index {index} for grade {grade}")
                expression = as_expression(value, dimension)
                dense[lookup[tuple(sorted(index))]] = expression if sign > 0 else -expression
        else:
            dense = [as_expression(c, dimension) for c in components]
        super().__init__(dense, dimension, grade, Variance.COVECTOR, domain, label)


class CallableField(Field):
    """Field defined by a batch evaluator and, optionally, a batch jet."""

    def __init__(
        self,
        dimension: int,
        grade: int,
        variance: Variance,
        evaluator: Callable[[np.ndarray], np.ndarray],
        jet: Optional[Callable[[np.ndarray], Jet]] = None,
        domain: Optional[ChartDomain] = None,
        label: str = "",
    ):
        super().__init__(dimension, grade, variance, domain, label)
        self._evaluator = evaluator
        self._jet = jet

    @property
    def differentiable(self) -> bool:
        return self._jet is not None

    def evaluate(self, points) -> np.ndarray:
        return self._evaluator(as_points(points, self.dimension))

    def jet(self, points) -> Jet:
        if self._jet is None:
            return super().jet(points)
        return self._jet(as_points(points, self.dimension))


# ==========================================================
# MULTIVECTOR FIELDS
# ==========================================================


@dataclass(frozen=True)
class Term:
    coefficient: Field
    factors: Tuple[Field, ...]


def _wedge_chain_values(values: Sequence[np.ndarray], n: int, batch: int) -> np.ndarray:
    acc = np.ones((batch, 1))
    for grade, value in enumerate(values):
        acc = wedge_components(acc, value, n, grade, 1)
    return acc


def _wedge_chain_jets(jets: Sequence[Jet], n: int, batch: int) -> Jet:
    value = np.ones((batch, 1))
    grad = np.zeros((batch, n, 1))
    for grade, factor in enumerate(jets):
        grad = wedge_components(grad, factor.value[:, None, :], n, grade, 1) + wedge_components(
            value[:, None, :], factor.grad, n, grade, 1
        )
        value = wedge_components(value, factor.value, n, grade, 1)
    return Jet(value, grad)


def _scale_jet(coefficient: Jet, jet: Jet) -> Jet:
    return Jet(
        coefficient.value * jet.value,
        coefficient.grad * jet.value[:, None, :] + coefficient.value[:, None, :] * jet.grad,
    )


class MultiVectorField(Field):
    """Finite sum of decomposable terms f · Z1∧…∧Zk."""

    def __init__(
        self,
        terms: Sequence[Term],
        dimension: int,
        grade: int,
        domain: Optional[ChartDomain] = None,
        label: str = "",
    ):
        super().__init__(dimension, grade, Variance.VECTOR, domain, label)
        for term in terms:
            if term.coefficient.grade != 0 or term.coefficient.dimension != self.dimension:
                raise ShapeError(f"{self.label}: coefficient must be a scalar field in dimension {self.dimension}")
            if len(term.factors) != self.grade:
                raise ShapeError(f"{self.label}: term with {len(term.factors)} factors in a grade-{self.grade} field")
            for factor in term.factors:
                if factor.grade != 1 or factor.variance != Variance.VECTOR or factor.dimension != self.dimension:
                    raise ShapeError(f"{self.label}: factors must be vector fields in dimension {self.dimension}")
        self.terms = tuple(terms)

    # ---------- constructors ----------
    @classmethod
    def decomposable(
        cls,
        factors: Sequence[Field],
        coefficient: Optional[Field] = None,
        domain: Optional[ChartDomain] = None,
        label: str = "",
    ) -> "MultiVectorField":
        if not factors and coefficient is None:
            raise ShapeError("a grade-0 decomposable needs a coefficient")
        dimension = factors[0].dimension if factors else coefficient.dimension
        if coefficient is None:
            coefficient = ScalarField(1.0, dimension)
        domain = domain or _first_domain([coefficient, *factors])
        return cls([Term(coefficient, tuple(factors))], dimension, len(factors), domain, label)

    @classmethod
    def from_vector(cls, field: Field) -> "MultiVectorField":
        if isinstance(field, MultiVectorField):
            return field
        return cls.decomposable([field], domain=field.domain, label=field.label)

    @classmethod
    def zero(cls, dimension: int, grade: int, domain: Optional[ChartDomain] = None) -> "MultiVectorField":
        return cls([], dimension, grade, domain, "zero")

    # ---------- evaluation ----------
    @property
    def differentiable(self) -> bool:
        return all(
            term.coefficient.differentiable and all(f.differentiable for f in term.factors)
            for term in self.terms
        )

    def evaluate(self, points) -> np.ndarray:
        pts = as_points(points, self.dimension)
        total = np.zeros((len(pts), self.size))
        for term in self.terms:
            chain = _wedge_chain_values([f.evaluate(pts) for f in term.factors], self.dimension, len(pts))
            total += term.coefficient.evaluate(pts) * chain
        return total

    def jet(self, points) -> Jet:
        pts = as_points(points, self.dimension)
        value = np.zeros((len(pts), self.size))
        grad = np.zeros((len(pts), self.dimension, self.size))
        for term in self.terms:
            chain = _wedge_chain_jets([f.jet(pts) for f in term.factors], self.dimension, len(pts))
            scaled = _scale_jet(term.coefficient.jet(pts), chain)
            value += scaled.value
            grad += scaled.grad
        return Jet(value, grad)

    def component_view(self) -> CallableField:
        """Components through k×k minors of the factor matrices (independent of the wedge kernel)."""

        def evaluator(pts: np.ndarray) -> np.ndarray:
            total = np.zeros((len(pts), self.size))
            for term in self.terms:
                if term.factors:
                    matrix = np.stack([f.evaluate(pts) for f in term.factors], axis=-1)
                    minors = compound_matrix(matrix, self.grade)[..., 0]
                else:
                    minors = np.ones((len(pts), 1))
                total += term.coefficient.evaluate(pts) * minors
            return total

        return CallableField(
            self.dimension, self.grade, Variance.VECTOR, evaluator, domain=self.domain, label=f"{self.label} (components)"
        )

    # ---------- algebra ----------
    def __add__(self, other: "MultiVectorField") -> "MultiVectorField":
        if (other.dimension, other.grade) != (self.dimension, self.grade):
            raise ShapeError("cannot add multivector fields of different shape")
        return MultiVectorField(
            self.terms + other.terms, self.dimension, self.grade, self.domain or other.domain, self.label
        )

    def __neg__(self) -> "MultiVectorField":
        return self.scaled(-1.0)

    def __sub__(self, other: "MultiVectorField") -> "MultiVectorField":
        return self + (-other)

    def scaled(self, factor: float) -> "MultiVectorField":
        terms = [Term(scale_field(factor, t.coefficient), t.factors) for t in self.terms]
        return MultiVectorField(terms, self.dimension, self.grade, self.domain, self.label)

    def wedge_left(self, vector: Field) -> "MultiVectorField":
        """X ∧ self, with X prepended to every term."""
        terms = [Term(t.coefficient, (vector,) + t.factors) for t in self.terms]
        return MultiVectorField(terms, self.dimension, self.grade + 1, self.domain or vector.domain, self.label)


def as_multivector(field: Field) -> MultiVectorField:
    if isinstance(field, MultiVectorField):
        return field
    if field.variance == Variance.VECTOR and field.grade == 1:
        return MultiVectorField.from_vector(field)
    if field.grade == 0:
        return MultiVectorField.decomposable([], coefficient=field, domain=field.domain, label=field.label)
    raise ShapeError(f"{field.label} is not given as a sum of decomposable terms")


# ==========================================================
# POINTWISE ALGEBRA ON FIELDS
# ==========================================================


def _first_domain(fields: Sequence[Field]) -> Optional[ChartDomain]:
    for field in fields:
        if field.domain is not None:
            return field.domain
    return None


def _same_dimension(*fields: Field) -> int:
    dims = {f.dimension for f in fields}
    if len(dims) != 1:
        raise ShapeError(f"fields live in different dimensions: {sorted(dims)}")
    return dims.pop()


def _bilinear_field(
    a: Field,
    b: Field,
    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray],
    grade: int,
    variance: Variance,
    label: str,
) -> CallableField:
    n = _same_dimension(a, b)

    def evaluator(pts: np.ndarray) -> np.ndarray:
        return kernel(a.evaluate(pts), b.evaluate(pts))

    jet = None
    if a.differentiable and b.differentiable:

        def jet(pts: np.ndarray) -> Jet:
            ja, jb = a.jet(pts), b.jet(pts)
            return Jet(
                kernel(ja.value, jb.value),
                kernel(ja.grad, jb.value[:, None, :]) + kernel(ja.value[:, None, :], jb.grad),
            )

    return CallableField(n, grade, variance, evaluator, jet, _first_domain([a, b]), label)


def wedge_fields(a: Field, b: Field) -> Field:
    if a.variance != b.variance:
        raise ShapeError("wedge needs fields of the same variance")
    n, k, m = _same_dimension(a, b), a.grade, b.grade
    return _bilinear_field(
        a, b, lambda x, y: wedge_components(x, y, n, k, m), k + m, a.variance, f"{a.label} ∧ {b.label}"
    )


def pair_fields(omega: Field, x: Field) -> Field:
    if omega.variance != Variance.COVECTOR or x.variance != Variance.VECTOR or omega.grade != x.grade:
        raise ShapeError(f"cannot pair {omega.describe()} with {x.describe()}")
    return _bilinear_field(
        omega,
        x,
        lambda w, v: np.sum(w * v, axis=-1, keepdims=True),
        0,
        Variance.COVECTOR,
        f"<{omega.label}, {x.label}>",
    )


def interior_by_multivector_field(omega: Field, x: Field) -> Field:
    if omega.variance != Variance.COVECTOR or x.variance != Variance.VECTOR:
        raise ShapeError("i_X ω needs a form and a multivector field")
    n, k, m = _same_dimension(omega, x), omega.grade, x.grade
    return _bilinear_field(
        x,
        omega,
        lambda v, w: contract_components(v, w, n, m, k),
        max(k - m, 0),
        Variance.COVECTOR,
        f"i({x.label}){omega.label}",
    )


def interior_by_form_field(omega: Field, x: Field) -> Field:
    if omega.variance != Variance.COVECTOR or x.variance != Variance.VECTOR:
        raise ShapeError("j_ω X needs a form and a multivector field")
    n, k, m = _same_dimension(omega, x), omega.grade, x.grade
    return _bilinear_field(
        omega,
        x,
        lambda w, v: contract_components(w, v, n, k, m),
        max(m - k, 0),
        Variance.VECTOR,
        f"j({omega.label}){x.label}",
    )


def scale_field(factor: Union[float, Field], field: Field) -> Field:
    """factor · field, for a constant or a scalar-field factor."""
    if not isinstance(factor, Field):
        if isinstance(field, ExpressionField):
            return ExpressionField(
                [c * float(factor) for c in field.components],
                field.dimension, field.grade, field.variance, field.domain, field.label,
            )
        return combine([(float(factor), field)])
    if factor.grade != 0:
        raise ShapeError("scale factor must be a scalar field")
    if isinstance(factor, ExpressionField) and isinstance(field, ExpressionField):
        f = factor.components[0]
        return ExpressionField(
            [f * c for c in field.components],
            field.dimension, field.grade, field.variance, _first_domain([field, factor]),
            f"{factor.label}·{field.label}",
        )
    return _bilinear_field(
        factor, field, lambda s, v: s * v, field.grade, field.variance, f"{factor.label}·{field.label}"
    )


def combine(terms: Sequence[Tuple[float, Field]], label: str = "") -> Field:
    """Linear combination Σ c_i F_i of fields of one shape."""
    fields = [f for _, f in terms]
    n = _same_dimension(*fields)
    shapes = {(f.grade, f.variance) for f in fields}
    if len(shapes) != 1:
        raise ShapeError("linear combination of fields of different grade or variance")
    grade, variance = shapes.pop()
    coefficients = [float(c) for c, _ in terms]

    def evaluator(pts: np.ndarray) -> np.ndarray:
        return sum(c * f.evaluate(pts) for c, f in zip(coefficients, fields))

    jet = None
    if all(f.differentiable for f in fields):

        def jet(pts: np.ndarray) -> Jet:
            jets = [f.jet(pts) for f in fields]
            return Jet(
                sum(c * j.value for c, j in zip(coefficients, jets)),
                sum(c * j.grad for c, j in zip(coefficients, jets)),
            )

    return CallableField(n, grade, variance, evaluator, jet, _first_domain(fields), label or "combination")


def wedge_forms(a: ExpressionField, b: ExpressionField) -> ExpressionField:
    """Symbolic wedge of expression-backed fields (components stay expressions)."""
    if a.variance != b.variance:
        raise ShapeError("wedge needs fields of the same variance")
    n, k, m = _same_dimension(a, b), a.grade, b.grade
    if k + m > n:
        return ExpressionField([], n, k + m, a.variance, _first_domain([a, b]), f"{a.label} ∧ {b.label}")
    table = product_table(n, k, m)
    out = [Expression.constant(0.0, n) for _ in range(table.size)]
    for left, right, pos, sign in zip(table.left, table.right, table.out, table.sign):
        product = a.components[left] * b.components[right]
        out[pos] = out[pos] + product if sign > 0 else out[pos] - product
    return ExpressionField(out, n, k + m, a.variance, _first_domain([a, b]), f"{a.label} ∧ {b.label}")


# ==========================================================
# DIFFERENTIAL OPERATORS
# ==========================================================


def exterior_derivative(omega: Field) -> Field:
    """(dω)_K = Σ sgn(i, I) ∂_i ω_I over K = {i} ∪ I; the zero (n+1)-form for grade n."""
    if omega.variance != Variance.COVECTOR:
        raise ShapeError(f"d applies to forms, got {omega.describe()}")
    n, k = omega.dimension, omega.grade
    label = f"d{omega.label}"
    if isinstance(omega, ExpressionField):
        if k + 1 > n:
            return ExpressionField([], n, k + 1, Variance.COVECTOR, omega.domain, label)
        table = product_table(n, 1, k)
        out = [Expression.constant(0.0, n) for _ in range(table.size)]
        for axis, source, pos, sign in zip(table.left, table.right, table.out, table.sign):
            partial = omega.components[source].derivative(int(axis))
            out[pos] = out[pos] + partial if sign > 0 else out[pos] - partial
        return ExpressionField(out, n, k + 1, Variance.COVECTOR, omega.domain, label)
    if not omega.differentiable:
        raise NotDifferentiableError(f"{omega.label} has no jet; d is undefined")
    logging.debug(f"[FIELDS] d of non-expression form {omega.label}")

    def evaluator(pts: np.ndarray) -> np.ndarray:
        return derivative_components(omega.jet(pts).grad, n, k)

    return CallableField(n, k + 1, Variance.COVECTOR, evaluator, domain=omega.domain, label=label)


def _require_vector(field: Field, what: str):
    if field.grade != 1 or field.variance != Variance.VECTOR:
        raise ShapeError(f"{what} must be a vector field, got {field.describe()}")


def lie_bracket(x: Field, y: Field) -> Field:
    """[X,Y]^i = X^j ∂_j Y^i − Y^j ∂_j X^i."""
    _require_vector(x, "X")
    _require_vector(y, "Y")
    n = _same_dimension(x, y)
    label = f"[{x.label}, {y.label}]"
    if isinstance(x, ExpressionField) and isinstance(y, ExpressionField):
        comps = []
        for i in range(n):
            total = Expression.constant(0.0, n)
            for j in range(n):
                total = total + x.components[j] * y.components[i].derivative(j)
                total = total - y.components[j] * x.components[i].derivative(j)
            comps.append(total)
        return ExpressionField(comps, n, 1, Variance.VECTOR, _first_domain([x, y]), label)

    def evaluator(pts: np.ndarray) -> np.ndarray:
        jx, jy = x.jet(pts), y.jet(pts)
        return np.einsum("pj,pji->pi", jx.value, jy.grad) - np.einsum("pj,pji->pi", jy.value, jx.grad)

    return CallableField(n, 1, Variance.VECTOR, evaluator, domain=_first_domain([x, y]), label=label)


def directional_derivative(x: Field, f: Field) -> Field:
    """The function X f = X^j ∂_j f."""
    _require_vector(x, "X")
    if f.grade != 0:
        raise ShapeError(f"{f.label} is not a scalar field")
    n = _same_dimension(x, f)
    label = f"{x.label}({f.label})"
    if isinstance(x, ExpressionField) and isinstance(f, ExpressionField):
        total = Expression.constant(0.0, n)
        for j in range(n):
            total = total + x.components[j] * f.components[0].derivative(j)
        return ExpressionField([total], n, 0, Variance.COVECTOR, _first_domain([x, f]), label)

    def evaluator(pts: np.ndarray) -> np.ndarray:
        return np.einsum("pj,pj->p", x.evaluate(pts), f.jet(pts).grad[:, :, 0])[:, None]

    return CallableField(n, 0, Variance.COVECTOR, evaluator, domain=_first_domain([x, f]), label=label)


def lie_derivative(x: Field, z: Field) -> MultiVectorField:
    """L_X(f Z1∧…∧Zk) = (Xf) Z1∧…∧Zk + f Σ_r Z1∧…∧[X, Zr]∧…∧Zk."""
    _require_vector(x, "X")
    z = as_multivector(z)
    terms: List[Term] = []
    for term in z.terms:
        terms.append(Term(directional_derivative(x, term.coefficient), term.factors))
        for r, factor in enumerate(term.factors):
            swapped = term.factors[:r] + (lie_bracket(x, factor),) + term.factors[r + 1:]
            terms.append(Term(term.coefficient, swapped))
    return MultiVectorField(terms, z.dimension, z.grade, z.domain or x.domain, f"L_{x.label} {z.label}")


def lie_derivative_form(x: Field, omega: Field) -> Field:
    """Cartan's formula L_X ω = i_X dω + d i_X ω."""
    _require_vector(x, "X")
    if omega.variance != Variance.COVECTOR:
        raise ShapeError(f"L_X ω takes a form, got {omega.describe()}")
    n, k = _same_dimension(x, omega), omega.grade
    label = f"L_{x.label} {omega.label}"
    if k == 0:
        return directional_derivative(x, omega)
    parts = [(1.0, exterior_derivative(interior_by_multivector_field(omega, x)))]
    if k < n:
        parts.append((1.0, interior_by_multivector_field(exterior_derivative(omega), x)))
    return combine(parts, label)


def restrict(field: Field, subdomain: ChartDomain) -> Field:
    if field.domain is not None and not field.domain.contains_box(subdomain):
        raise PointOutsideDomainError(f"subdomain {subdomain} is not inside {field.domain}")
    if subdomain.dimension != field.dimension:
        raise ShapeError("subdomain dimension differs from the field's")
    restricted = copy.copy(field)
    restricted.domain = subdomain
    return restricted


def evaluate(field: Field, point) -> AlternatingTensor:
    return field.at(point)
