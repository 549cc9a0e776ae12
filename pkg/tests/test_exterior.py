import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import ShapeError
from exterior import (
    AlternatingTensor,
    Variance,
    compound_matrix,
    decomposable,
    interior_by_form,
    interior_by_form_permutation,
    interior_by_multivector,
    interior_by_vectors,
    omega_flat,
    omega_sharp,
    pair,
    permutation_sign,
    pullback,
    pushforward,
    volume_form,
    wedge,
)
from sampling import random_tensor

V, C = Variance.VECTOR, Variance.COVECTOR


@st.composite
def shapes(draw, max_dimension=5):
    n = draw(st.integers(1, max_dimension))
    k = draw(st.integers(0, n))
    m = draw(st.integers(0, n - k))
    seed = draw(st.integers(0, 2**32 - 1))
    return n, k, m, np.random.default_rng(seed)


# ---------- basics ----------


def test_basis_wedge():
    e12 = wedge(AlternatingTensor.basis(3, [0], V), AlternatingTensor.basis(3, [1], V))
    assert e12.component((0, 1)) == 1.0
    assert e12.component((1, 0)) == -1.0
    assert e12.component((0, 2)) == 0.0
    assert e12.allclose(AlternatingTensor.basis(3, [1, 0], V) * -1.0)


def test_from_dict_sorts_with_sign():
    t = AlternatingTensor.from_dict(4, 2, C, {(2, 0): 3.0, (1, 3): 1.0})
    assert t.component((0, 2)) == -3.0
    assert t.component((1, 3)) == 1.0


def test_permutation_sign():
    assert permutation_sign((0, 1, 2)) == 1
    assert permutation_sign((1, 0, 2)) == -1
    assert permutation_sign((2, 0, 1)) == 1
    assert permutation_sign((1, 1)) == 0


def test_wedge_beyond_dimension_is_empty():
    a = AlternatingTensor.basis(3, [0, 1], V)
    b = AlternatingTensor.basis(3, [1, 2], V)
    out = wedge(a, b)
    assert out.grade == 4 and out.components.size == 0


def test_shape_errors():
    with pytest.raises(ShapeError):
        pair(AlternatingTensor.covector([1.0, 0.0]), AlternatingTensor.basis(2, [0, 1], V))
    with pytest.raises(ShapeError):
        wedge(AlternatingTensor.vector([1.0, 0.0]), AlternatingTensor.covector([1.0, 0.0]))
    with pytest.raises(ShapeError):
        AlternatingTensor(3, 2, V, np.zeros(2))


@settings(max_examples=60, deadline=None)
@given(shapes())
def test_graded_commutativity(shape):
    n, k, m, rng = shape
    a, b = random_tensor(n, k, V, rng), random_tensor(n, m, V, rng)
    assert wedge(a, b).allclose(wedge(b, a) * (-1.0) ** (k * m), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_wedge_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_tensor(5, g, C, rng) for g in (1, 2, 1))
    assert wedge(wedge(a, b), c).allclose(wedge(a, wedge(b, c)), atol=1e-12)


def test_pairing_decomposables_is_a_determinant(rng):
    covectors = [random_tensor(4, 1, C, rng) for _ in range(3)]
    vectors = [random_tensor(4, 1, V, rng) for _ in range(3)]
    omega = decomposable([AlternatingTensor(4, 1, V, c.components) for c in covectors], 4)
    omega = AlternatingTensor(4, 3, C, omega.components)
    matrix = np.array([[pair(a, x) for x in vectors] for a in covectors])
    assert pair(omega, decomposable(vectors, 4)) == pytest.approx(np.linalg.det(matrix), abs=1e-12)


# ---------- contractions ----------


@settings(max_examples=80, deadline=None)
@given(shapes())
def test_interior_by_multivector_is_adjoint_to_wedge(shape):
    n, m, rest, rng = shape
    omega = random_tensor(n, m + rest, C, rng)
    x, y = random_tensor(n, m, V, rng), random_tensor(n, rest, V, rng)
    lhs = pair(interior_by_multivector(omega, x), y)
    assert lhs == pytest.approx(pair(omega, wedge(x, y)), abs=1e-10)


@settings(max_examples=80, deadline=None)
@given(shapes())
def test_interior_by_form_is_adjoint_to_wedge(shape):
    n, k, rest, rng = shape
    omega, eta = random_tensor(n, k, C, rng), random_tensor(n, rest, C, rng)
    x = random_tensor(n, k + rest, V, rng)
    lhs = pair(eta, interior_by_form(omega, x))
    assert lhs == pytest.approx(pair(wedge(omega, eta), x), abs=1e-10)


def test_interior_degenerate_grades():
    omega = AlternatingTensor.basis(3, [0, 1], C)
    x = AlternatingTensor.basis(3, [0, 1, 2], V)
    i = interior_by_multivector(omega, x)
    assert i.grade == 0 and i.components.tolist() == [0.0]
    j = interior_by_form(AlternatingTensor.basis(3, [0, 1], C), AlternatingTensor.basis(3, [0], V))
    assert j.grade == 0 and j.components.tolist() == [0.0]


def test_interior_by_scalar_form_scales(rng):
    x = random_tensor(4, 2, V, rng)
    out = interior_by_form(AlternatingTensor.scalar(4, 2.5), x)
    assert out.allclose(x * 2.5)


@pytest.mark.parametrize("k, m", [(0, 2), (1, 2), (1, 3), (2, 3), (2, 4), (3, 3)])
def test_interior_by_form_matches_permutation_sum(rng, k, m):
    n = 4
    vectors = [random_tensor(n, 1, V, rng) for _ in range(m)]
    omega = random_tensor(n, k, C, rng)
    expected = interior_by_form_permutation(omega, vectors)
    assert interior_by_form(omega, decomposable(vectors, n)).allclose(expected, atol=1e-10)


def test_iterated_interior_matches_multivector_interior(rng):
    vectors = [random_tensor(5, 1, V, rng) for _ in range(2)]
    omega = random_tensor(5, 3, C, rng)
    iterated = interior_by_vectors(omega, vectors)
    assert iterated.allclose(interior_by_multivector(omega, decomposable(vectors, 5)), atol=1e-12)


# ---------- volume forms ----------


def test_flat_of_basis_vectors():
    e1 = AlternatingTensor.basis(3, [0], V)
    assert omega_flat(e1, 1.0).allclose(AlternatingTensor.basis(3, [1, 2], C))
    e2 = AlternatingTensor.basis(3, [1], V)
    assert omega_flat(e2, 2.0).allclose(AlternatingTensor.basis(3, [0, 2], C) * -2.0)


@settings(max_examples=40, deadline=None)
@given(shapes(), st.floats(0.1, 10.0))
def test_sharp_inverts_flat(shape, rho):
    n, k, _, rng = shape
    x = random_tensor(n, k, V, rng)
    assert omega_sharp(omega_flat(x, rho), rho).allclose(x, atol=1e-10)


def test_flat_rejects_non_positive_density():
    with pytest.raises(ShapeError):
        omega_flat(AlternatingTensor.vector([1.0, 0.0]), 0.0)


# ---------- linear maps ----------


def test_pullback_of_volume_form_is_determinant(rng):
    matrix = rng.standard_normal((4, 4))
    pulled = pullback(volume_form(4), matrix)
    assert pulled.components[0] == pytest.approx(np.linalg.det(matrix))


def test_pushforward_of_decomposable(rng):
    matrix = rng.standard_normal((3, 3))
    vectors = [random_tensor(3, 1, V, rng) for _ in range(2)]
    images = [AlternatingTensor.vector(matrix @ v.components) for v in vectors]
    assert pushforward(decomposable(vectors, 3), matrix).allclose(decomposable(images, 3), atol=1e-12)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_compound_matrix_is_multiplicative(rng, k):
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5))
    assert np.allclose(compound_matrix(a @ b, k), compound_matrix(a, k) @ compound_matrix(b, k), atol=1e-10)


def test_grade_zero_pushforward_and_pullback(rng):
    matrix = rng.standard_normal((3, 2))
    assert compound_matrix(matrix, 0).tolist() == [[1.0]]
    assert pushforward(AlternatingTensor.scalar(2, 1.5, V), matrix).components.tolist() == [1.5]
    assert pullback(AlternatingTensor.scalar(3, -2.0), matrix).components.tolist() == [-2.0]
