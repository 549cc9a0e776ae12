import numpy as np
import pytest

from diver import VolumeStructure
from errors import QuadratureError, ShapeError, SupportError
from fields import ChartDomain, ScalarField
from models import QuadratureSpec
from quad import (
    Bump,
    ball_rule,
    ball_volume,
    gauss_legendre,
    integrate,
    integrate_product,
    make_bump_form,
    map_chunks,
)


@pytest.mark.parametrize("nodes", [1, 3, 6])
def test_gauss_legendre_is_exact_for_polynomials(nodes):
    x, w = gauss_legendre(-1.0, 2.0, nodes, panels=3)
    degree = 2 * nodes - 1
    exact = (2.0 ** (degree + 1) - (-1.0) ** (degree + 1)) / (degree + 1)
    assert np.dot(w, x ** degree) == pytest.approx(exact, rel=1e-12)


def test_gauss_legendre_rejects_empty_rules():
    with pytest.raises(QuadratureError):
        gauss_legendre(0.0, 1.0, 0)


@pytest.mark.parametrize("m, expected", [(1, 2.0), (2, np.pi), (3, 4.0 * np.pi / 3.0)])
def test_ball_volume(m, expected):
    assert ball_volume(m, 1.0) == pytest.approx(expected)
    assert ball_volume(m, 0.5) == pytest.approx(expected * 0.5 ** m)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_ball_rule_integrates_radial_moments(m):
    points, weights = ball_rule(m, 0.5, 8, 16)
    assert weights.sum() == pytest.approx(ball_volume(m, 0.5), rel=1e-12)
    second = np.dot(weights, np.sum(points ** 2, axis=-1))
    # ∫_{B_r} |t|² dt = m/(m+2) · r² · λ(B_r)
    assert second == pytest.approx(m / (m + 2) * 0.25 * ball_volume(m, 0.5), rel=1e-12)


def test_ball_rule_rejects_high_codimension():
    with pytest.raises(QuadratureError):
        ball_rule(4, 1.0, 4, 4)


def test_integrate_gaussian_mass():
    domain = ChartDomain.cube(2, -7.0, 7.0)
    vs = VolumeStructure.gaussian(domain)
    estimate = integrate(ScalarField("1", 2), vs, q=QuadratureSpec(nodes_per_axis=16, panels=4))
    assert estimate.value == pytest.approx(1.0, abs=1e-10)
    assert estimate.error < 1e-4


def test_integrate_reports_error_estimate():
    domain = ChartDomain.cube(1, 0.0, 1.0)
    estimate = integrate(lambda p: np.exp(p[:, 0]), None, domain, QuadratureSpec(nodes_per_axis=8))
    assert estimate.value == pytest.approx(np.e - 1.0, rel=1e-13)
    assert estimate.nodes == 8


def test_monte_carlo_is_seeded():
    domain = ChartDomain.cube(2, 0.0, 1.0)
    q = QuadratureSpec(mode="monte-carlo", samples=4000, seed=7)
    first = integrate(lambda p: p[:, 0] * p[:, 1], None, domain, q)
    second = integrate(lambda p: p[:, 0] * p[:, 1], None, domain, q)
    assert first == second
    assert abs(first.value - 0.25) < 5 * first.error


def test_monte_carlo_error_shrinks_like_inverse_square_root():
    domain = ChartDomain.cube(2, 0.0, 1.0)
    exact = 1.0 / 3.0 + 1.0 - np.cos(1.0)
    errors = []
    for samples in (1_000, 10_000, 100_000):
        q = QuadratureSpec(mode="monte-carlo", samples=samples, seed=11)
        estimate = integrate(lambda p: p[:, 0] ** 2 + np.sin(p[:, 1]), None, domain, q)
        assert abs(estimate.value - exact) < 5 * estimate.error
        errors.append(estimate.error)
    for coarse, fine in zip(errors, errors[1:]):
        assert 2.5 < coarse / fine < 4.0


def test_unit_square_has_unit_measure():
    estimate = integrate(ScalarField("1", 2), None, ChartDomain.cube(2, 0.0, 1.0))
    assert estimate.value == pytest.approx(1.0, abs=1e-14)
    assert estimate.error < 1e-14


def test_integrate_is_linear_on_shared_nodes(gaussian3):
    f = ScalarField("sin(x0)*x1 + x2^2", 3)
    g = ScalarField("exp(x1) - x0*x2", 3)
    q = QuadratureSpec(nodes_per_axis=8)
    combined = integrate(lambda p: 2.5 * f.values(p) - 0.75 * g.values(p), gaussian3, q=q)
    separate = 2.5 * integrate(f, gaussian3, q=q).value - 0.75 * integrate(g, gaussian3, q=q).value
    assert combined.value == pytest.approx(separate, abs=1e-13)


def test_non_finite_integrand_is_reported():
    with pytest.raises(QuadratureError):
        integrate(lambda p: np.full(len(p), np.nan), None, ChartDomain.cube(1, 0.0, 1.0))


def test_integrate_product_over_tube_box():
    box = ChartDomain.cube(1, -1.0, 1.0)
    q = QuadratureSpec(nodes_per_axis=6, radial_nodes=6, angular_nodes=12)
    estimate = integrate_product(lambda p: 1.0 + p[:, 0] ** 2 + p[:, 1] ** 2, box, 1, 0.1, q)
    assert estimate.value == pytest.approx(2 * 0.2 * (1 + 1 / 3) + 2 * (2 * 0.1 ** 3 / 3), rel=1e-12)


def test_map_chunks_preserves_order(monkeypatch):
    import quad

    monkeypatch.setattr(quad, "CHUNK_SIZE", 7)
    monkeypatch.setattr(quad, "MAX_WORKERS", 4)
    points = np.arange(60, dtype=float)[:, None]
    assert np.array_equal(map_chunks(lambda p: p[:, 0] * 2, points), np.arange(60) * 2.0)


# ---------- bumps ----------


def test_scalar_bump_is_one_at_center():
    form = make_bump_form(0, [0.2, -0.1], 0.5)
    assert form.values(np.array([[0.2, -0.1]]))[0] == 1.0


@pytest.mark.parametrize("metric", ["chebyshev", "euclidean"])
def test_bump_vanishes_with_gradient_at_support_edge(metric):
    bump = Bump((0.0, 0.0), 1.0, metric)
    edge = np.array([[1.0, 0.0], [0.0, -1.0], [1.2, 0.3]])
    value, grad = bump.jet(edge)
    assert np.all(value == 0.0) and np.all(grad == 0.0)


@pytest.mark.parametrize("metric", ["chebyshev", "euclidean"])
def test_bump_gradient_matches_finite_differences(rng, metric):
    bump = Bump((0.1, 0.3, -0.2), 0.7, metric)
    pts = rng.uniform(-0.4, 0.4, size=(20, 3))
    _, grad = bump.jet(pts)
    h = 1e-6
    for axis in range(3):
        shift = np.zeros(3)
        shift[axis] = h
        fd = (bump.values(pts + shift) - bump.values(pts - shift)) / (2 * h)
        assert np.allclose(grad[:, axis], fd, atol=1e-6)


def test_bump_form_components_and_support():
    domain = ChartDomain.cube(3, -1.0, 1.0)
    form = make_bump_form(2, [0.0, 0.0, 0.0], 0.4, {(2, 0): 2.0}, domain)
    value = form.at([0.0, 0.0, 0.0])
    assert value.component((0, 2)) == -2.0
    assert value.component((0, 1)) == 0.0
    assert form.support.upper == (0.4, 0.4, 0.4)


def test_default_bump_is_supported_in_the_ball():
    corner = np.array([[0.8, 0.8, 0.0]])
    value, grad = Bump((0.0, 0.0, 0.0), 1.0).jet(corner)
    assert value[0] == 0.0 and np.all(grad == 0.0)
    form = make_bump_form(1, [0.0, 0.0, 0.0], 1.0, {(0,): 1.0, (2,): 1.0})
    assert np.all(form.evaluate(corner) == 0.0)
    assert np.all(form.jet(corner).grad == 0.0)
    assert Bump((0.0, 0.0, 0.0), 1.0, "chebyshev").values(corner)[0] > 0.0


def test_bump_support_must_be_interior():
    with pytest.raises(SupportError):
        make_bump_form(0, [0.8], 0.2, domain=ChartDomain.cube(1, -1.0, 1.0))
    with pytest.raises(ShapeError):
        make_bump_form(1, [0.0, 0.0], 0.2, [(0, 1)])
