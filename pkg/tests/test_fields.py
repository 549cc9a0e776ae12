import numpy as np
import pytest

from errors import NotDifferentiableError, PointOutsideDomainError, ShapeError
from exterior import Variance, interior_by_form, interior_by_multivector, multi_indices
from fields import (
    CallableField,
    ChartDomain,
    DifferentialForm,
    MultiVectorField,
    ScalarField,
    VectorField,
    combine,
    directional_derivative,
    exterior_derivative,
    interior_by_form_field,
    interior_by_multivector_field,
    lie_bracket,
    lie_derivative,
    lie_derivative_form,
    pair_fields,
    restrict,
    scale_field,
    wedge_fields,
    wedge_forms,
)
from sampling import random_form, random_multivector, random_vector_field


def _fd_gradient(field, points, h=1e-6):
    grads = []
    for axis in range(field.dimension):
        shift = np.zeros(field.dimension)
        shift[axis] = h
        grads.append((field.evaluate(points + shift) - field.evaluate(points - shift)) / (2 * h))
    return np.stack(grads, axis=1)


# ---------- chart domains ----------


def test_chart_domain_shrinks_and_samples(rng):
    domain = ChartDomain.cube(2, -1.0, 1.0, 0.25)
    inner = domain.shrunk()
    assert inner.lower == (-0.75, -0.75) and inner.margin == 0.0
    pts = domain.sample(200, rng)
    assert np.all(inner.contains(pts))
    grid = domain.grid(4)
    assert grid.shape == (16, 2)
    assert np.all(inner.contains(grid))


def test_chart_domain_rejects_bad_boxes():
    with pytest.raises(ShapeError):
        ChartDomain((0.0, 1.0), (1.0, 1.0))
    with pytest.raises(ShapeError):
        ChartDomain.cube(2, 0.0, 1.0, 0.6)


def test_evaluation_outside_domain_is_rejected():
    field = VectorField(["x0", "x1"], ChartDomain.cube(2, -1.0, 1.0))
    with pytest.raises(PointOutsideDomainError) as info:
        field.at([2.0, 0.0])
    assert info.value.point == [2.0, 0.0]


def test_restrict_needs_a_subdomain():
    field = ScalarField("x0", 1, ChartDomain.cube(1, -1.0, 1.0))
    assert restrict(field, ChartDomain.cube(1, -0.5, 0.5)).domain.upper == (0.5,)
    with pytest.raises(PointOutsideDomainError):
        restrict(field, ChartDomain.cube(1, -2.0, 0.5))


# ---------- evaluation ----------


def test_constant_bivector():
    e1, e2 = VectorField(["1", "0", "0"]), VectorField(["0", "1", "0"])
    z = MultiVectorField.decomposable([e1, e2])
    assert z.at([0.3, -0.2, 0.9]).component((0, 1)) == 1.0


def test_coefficient_scales_decomposable():
    e1, e2 = VectorField(["1", "0", "0"]), VectorField(["0", "1", "0"])
    z = MultiVectorField.decomposable([e1, e2], coefficient=ScalarField("x0", 3))
    value = z.at([2.0, 0.0, 0.0])
    assert value.component((0, 1)) == 2.0
    assert value.norm() == 2.0


def test_form_from_mapping():
    omega = DifferentialForm(3, 2, {(1, 0): "x2"})
    assert omega.at([0.0, 0.0, 4.0]).component((0, 1)) == -4.0


def test_component_view_agrees_with_wedge_chain(rng):
    z = random_multivector(4, 3, rng, terms=2)
    pts = rng.uniform(-1, 1, size=(20, 4))
    assert np.allclose(z.evaluate(pts), z.component_view().evaluate(pts), atol=1e-12)


def test_jets_match_finite_differences(rng):
    pts = rng.uniform(-1, 1, size=(10, 3))
    for field in [
        random_multivector(3, 2, rng, trig=True),
        wedge_fields(random_vector_field(3, rng), random_vector_field(3, rng)),
        pair_fields(random_form(3, 1, rng), random_vector_field(3, rng)),
        scale_field(ScalarField("sin(x0)", 3), random_vector_field(3, rng)),
    ]:
        assert np.allclose(field.jet(pts).grad, _fd_gradient(field, pts), atol=1e-6)


def test_callable_without_jet_is_not_differentiable():
    field = CallableField(2, 0, Variance.COVECTOR, lambda p: p[:, :1])
    assert not field.differentiable
    with pytest.raises(NotDifferentiableError):
        exterior_derivative(field)


# ---------- exterior derivative ----------


@pytest.mark.parametrize("n, k", [(3, 0), (3, 1), (4, 1), (4, 2)])
def test_d_squared_vanishes(rng, n, k):
    omega = random_form(n, k, rng, degree=3, trig=True)
    dd = exterior_derivative(exterior_derivative(omega))
    pts = rng.uniform(-1, 1, size=(15, n))
    assert np.abs(dd.evaluate(pts)).max() < 1e-10


def test_d_of_callable_matches_symbolic(rng):
    omega = random_form(3, 1, rng, trig=True)
    wrapped = CallableField(3, 1, Variance.COVECTOR, omega.evaluate, omega.jet)
    pts = rng.uniform(-1, 1, size=(10, 3))
    assert np.allclose(exterior_derivative(wrapped).evaluate(pts), exterior_derivative(omega).evaluate(pts))


def test_d_of_top_form_is_empty():
    omega = DifferentialForm(2, 2, ["x0*x1"])
    assert exterior_derivative(omega).evaluate(np.zeros((3, 2))).shape == (3, 0)


def test_d_is_a_derivation_on_wedges(rng):
    a, b = random_form(4, 1, rng), random_form(4, 2, rng)
    lhs = exterior_derivative(wedge_forms(a, b))
    rhs = combine(
        [
            (1.0, wedge_forms(exterior_derivative(a), b)),
            (-1.0, wedge_forms(a, exterior_derivative(b))),
        ]
    )
    pts = rng.uniform(-1, 1, size=(10, 4))
    assert np.allclose(lhs.evaluate(pts), rhs.evaluate(pts), atol=1e-10)


# ---------- brackets ----------


def test_bracket_is_antisymmetric(rng):
    x, y = random_vector_field(3, rng, trig=True), random_vector_field(3, rng)
    pts = rng.uniform(-1, 1, size=(10, 3))
    assert np.allclose(lie_bracket(x, y).evaluate(pts), -lie_bracket(y, x).evaluate(pts))


def test_jacobi_identity(rng):
    x, y, z = (random_vector_field(3, rng) for _ in range(3))
    total = combine(
        [
            (1.0, lie_bracket(x, lie_bracket(y, z))),
            (1.0, lie_bracket(y, lie_bracket(z, x))),
            (1.0, lie_bracket(z, lie_bracket(x, y))),
        ]
    )
    pts = rng.uniform(-1, 1, size=(10, 3))
    assert np.abs(total.evaluate(pts)).max() < 1e-10


def test_bracket_of_callable_fields_matches_symbolic(rng):
    x, y = random_vector_field(2, rng), random_vector_field(2, rng)
    cx = CallableField(2, 1, Variance.VECTOR, x.evaluate, x.jet)
    pts = rng.uniform(-1, 1, size=(10, 2))
    assert np.allclose(lie_bracket(cx, y).evaluate(pts), lie_bracket(x, y).evaluate(pts))


def test_coordinate_fields_commute():
    e1, e2 = VectorField(["1", "0"]), VectorField(["0", "1"])
    assert np.abs(lie_bracket(e1, e2).evaluate(np.ones((2, 2)))).max() == 0.0


def test_lie_derivative_of_function_term(rng):
    x = random_vector_field(3, rng)
    f = ScalarField("x0*x1 + x2^2", 3)
    lie = lie_derivative(x, MultiVectorField.decomposable([], coefficient=f))
    pts = rng.uniform(-1, 1, size=(5, 3))
    assert np.allclose(lie.evaluate(pts), directional_derivative(x, f).evaluate(pts))


def test_lie_derivative_requires_vector_field(rng):
    with pytest.raises(ShapeError):
        lie_derivative(random_form(3, 1, rng), random_multivector(3, 2, rng))


def test_multivector_shape_checks():
    e1 = VectorField(["1", "0"])
    with pytest.raises(ShapeError):
        MultiVectorField.decomposable([e1, DifferentialForm(2, 1, ["1", "0"])])
    z = MultiVectorField.decomposable([e1])
    with pytest.raises(ShapeError):
        z + MultiVectorField.zero(2, 2)
    assert len(multi_indices(2, 1)) == z.size


def test_field_contractions_match_pointwise_algebra(rng):
    omega, x = random_form(3, 2, rng, trig=True), random_multivector(3, 1, rng)
    i_field = interior_by_multivector_field(omega, x)
    eta, z = random_form(3, 1, rng), random_multivector(3, 2, rng)
    j_field = interior_by_form_field(eta, z)
    p = rng.uniform(-1, 1, size=3)
    assert i_field.at(p).allclose(interior_by_multivector(omega.at(p), x.at(p)), atol=1e-12)
    assert j_field.at(p).allclose(interior_by_form(eta.at(p), z.at(p)), atol=1e-12)
    assert i_field.grade == 1 and j_field.grade == 1
    pts = rng.uniform(-1, 1, size=(8, 3))
    for field in (i_field, j_field):
        assert np.allclose(field.jet(pts).grad, _fd_gradient(field, pts), atol=1e-6)


def test_lie_derivative_of_one_form_acts_on_vectors(rng):
    # (L_X ω)(Y) = X(ω(Y)) - ω([X, Y])
    x, y = random_vector_field(3, rng), random_vector_field(3, rng)
    omega = random_form(3, 1, rng, trig=True)
    pts = rng.uniform(-1, 1, size=(12, 3))
    lhs = pair_fields(lie_derivative_form(x, omega), y).evaluate(pts)
    rhs = directional_derivative(x, pair_fields(omega, y)).evaluate(pts) - pair_fields(
        omega, lie_bracket(x, y)
    ).evaluate(pts)
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_lie_derivative_of_function_and_volume_form(rng):
    radial = VectorField(["x0", "x1", "x2"])
    f = ScalarField("x0*x1 + x2^2", 3)
    pts = rng.uniform(-1, 1, size=(6, 3))
    assert np.allclose(lie_derivative_form(radial, f).evaluate(pts), directional_derivative(radial, f).evaluate(pts))
    volume = DifferentialForm(3, 3, ["1"])
    assert np.allclose(lie_derivative_form(radial, volume).evaluate(pts), 3.0)


def test_lie_derivative_form_rejects_multivectors(rng):
    with pytest.raises(ShapeError):
        lie_derivative_form(random_vector_field(3, rng), random_multivector(3, 2, rng))


def test_d_commutes_with_restriction(rng):
    domain = ChartDomain.cube(3, -1.0, 1.0)
    sub = ChartDomain([-0.5, -0.5, -0.5], [0.5, 0.5, 0.5])
    omega = random_form(3, 1, rng, domain=domain, trig=True)
    restricted = exterior_derivative(restrict(omega, sub))
    assert restricted.domain == sub
    pts = sub.sample(10, rng)
    assert np.allclose(restricted.evaluate(pts), exterior_derivative(omega).evaluate(pts), atol=1e-12)
