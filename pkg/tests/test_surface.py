import math

import numpy as np
import pytest

from diver import VolumeStructure
from errors import ClosednessError, ConfigError, ConvergenceError, FlowExitError, ShapeError, TransversalityError
from fields import ChartDomain, DifferentialForm, ScalarField, VectorField
from models import QuadratureSpec
from quad import make_bump_form
from surface import (
    ElementarySurface,
    FlowEngine,
    StraighteningMap,
    TransversalSystem,
    TubeChart,
    associated_form,
    corollary_check,
    flow,
    lemma3_average,
    prepare_chart,
    q_connected_lift,
    restriction_check,
    richardson,
    surface_measure,
    theorem2_check,
    tube_measure,
    verify_lift,
)

R_VALUES = [0.2, 0.1, 0.05, 0.025]
SIGMA_CIRCLE = math.exp(-0.5)


class Setup:
    def __init__(self, surface, system, vs, engine):
        self.surface = surface
        self.system = system
        self.vs = vs
        self.engine = engine

    def args(self):
        return self.surface, self.system, self.vs


@pytest.fixture
def segment():
    """The segment [-1, 1] × {0} in the plane, ρ = 1, Y = e2."""
    straightening = StraighteningMap(["x0", "x1"], ["x0", "x1"], 1, ChartDomain((-1.5, -1.0), (1.5, 1.0)))
    domain = ChartDomain.cube(2, -2.0, 2.0)
    system = TransversalSystem([VectorField(["0", "1"], label="e2")], associated_form(straightening))
    return Setup(
        ElementarySurface(straightening, ChartDomain((-1.0,), (1.0,))),
        system,
        VolumeStructure.lebesgue(domain),
        FlowEngine(domain=domain),
    )


@pytest.fixture
def circle():
    """Unit circle under the standard Gaussian, Y = radial field."""
    straightening = StraighteningMap(
        ["exp(x1)*cos(x0)", "exp(x1)*sin(x0)"],
        ["atan2(x1, x0)", "log(sqrt(x0^2 + x1^2))"],
        1,
        ChartDomain((-3.1416, -1.0), (3.1416, 1.0)),
    )
    domain = ChartDomain.cube(2, -6.0, 6.0)
    system = TransversalSystem(
        [VectorField(["x0", "x1"], label="radial")], associated_form(straightening, "1 + x0^2")
    )
    return Setup(
        ElementarySurface(straightening, ChartDomain((-math.pi,), (math.pi,))),
        system,
        VolumeStructure.gaussian(domain),
        FlowEngine(domain=domain),
    )


ROTATION = VectorField(["-x1", "x0"], label="rotation")


# ---------- flows ----------


def test_zero_time_flow_is_identity(rng):
    engine = FlowEngine()
    pts = rng.uniform(-1, 1, size=(5, 2))
    result = engine.flow([ROTATION], np.zeros((5, 1)), pts)
    assert np.array_equal(result.points, pts)
    assert np.allclose(result.time_columns[:, :, 0], ROTATION.evaluate(pts))


def test_radial_flow_is_exponential():
    engine = FlowEngine()
    out = flow(engine, [VectorField(["x0", "x1"])], [0.5], [1.0, -2.0])
    assert out == pytest.approx([math.exp(0.5), -2.0 * math.exp(0.5)], rel=1e-10)


def test_flow_semigroup(rng):
    engine = FlowEngine()
    pts = rng.uniform(-1, 1, size=(6, 2))
    assert engine.semigroup_residual([ROTATION], [0.3], [0.2], pts) < 1e-10


def test_commuting_flows_compose():
    engine = FlowEngine()
    e1, e2 = VectorField(["1", "0", "0"]), VectorField(["0", "1", "0"])
    out = flow(engine, [e1, e2], [0.25, -0.5], [0.0, 0.0, 1.0])
    assert out == pytest.approx([0.25, -0.5, 1.0], abs=1e-12)


def test_variational_equation_tracks_the_jacobian(rng):
    engine = FlowEngine()
    pts = rng.uniform(-1, 1, size=(4, 2))
    tangents = np.repeat(np.eye(2)[None], 4, axis=0)
    result = engine.flow([ROTATION], np.full((4, 1), 0.7), pts, tangents)
    c, s = math.cos(0.7), math.sin(0.7)
    assert np.allclose(result.tangents, np.array([[c, -s], [s, c]])[None], atol=1e-10)


def test_trajectory_leaving_the_chart_is_reported():
    engine = FlowEngine(domain=ChartDomain.cube(2, -1.0, 1.0))
    with pytest.raises(FlowExitError) as info:
        flow(engine, [VectorField(["x0", "x1"])], [1.0], [0.9, 0.0])
    assert info.value.point is not None and info.value.point[0] > 1.0


def test_step_budget_is_enforced():
    engine = FlowEngine(step=1e-3, max_steps=10)
    with pytest.raises(ConvergenceError):
        flow(engine, [ROTATION], [1.0], [1.0, 0.0])


def test_rk4_error_drops_sixteenfold_when_the_step_halves():
    exact = np.array([math.cos(1.0), math.sin(1.0)])
    coarse, fine = (
        np.abs(flow(FlowEngine(step=h), [ROTATION], [1.0], [1.0, 0.0]) - exact).max() for h in (0.1, 0.05)
    )
    assert 12.0 < coarse / fine < 20.0


# ---------- extrapolation ----------


def test_richardson_recovers_quadratic_limit():
    r = np.array(R_VALUES)
    ext = richardson(r, 1.0 + 0.5 * r ** 2 - 0.3 * r ** 4, np.zeros(4))
    assert not ext.flagged
    assert ext.value == pytest.approx(1.0, abs=1e-12)
    assert ext.order == pytest.approx(2.0, abs=0.05)


def test_richardson_flags_non_monotone_sequences():
    ext = richardson(R_VALUES, [1.0, 1.1, 1.0, 1.1], [0.0] * 4)
    assert ext.flagged and ext.value is None


def test_richardson_notes_noise_level_sequences():
    ext = richardson(R_VALUES, [2.0, 2.0 + 1e-14, 2.0, 2.0 - 1e-14], [1e-15] * 4)
    assert not ext.flagged
    assert ext.order is None
    assert "noise" in ext.note
    assert ext.value == pytest.approx(2.0, abs=1e-12)


# ---------- surface measure ----------


def test_segment_length(segment):
    report = surface_measure(*segment.args(), R_VALUES, engine=segment.engine, tolerance=1e-10)
    assert report.direct == pytest.approx(2.0, abs=1e-12)
    assert report.extrapolated == pytest.approx(2.0, abs=1e-10)
    assert report.passed


def test_tube_measure_scales_with_the_ball(segment):
    estimate = tube_measure(*segment.args(), 0.1, engine=segment.engine)
    assert estimate.value == pytest.approx(0.4, abs=1e-12)


def test_gaussian_circle_measure(circle):
    report = surface_measure(*circle.args(), R_VALUES, engine=circle.engine, tolerance=1e-4)
    assert report.direct == pytest.approx(SIGMA_CIRCLE, abs=1e-8)
    assert report.extrapolated == pytest.approx(SIGMA_CIRCLE, abs=1e-4)
    assert all(abs(v - SIGMA_CIRCLE) < 0.01 for v in report.values)
    assert not report.flagged


def test_surface_measure_is_additive(circle):
    whole = surface_measure(*circle.args(), R_VALUES, engine=circle.engine)
    halves = [
        surface_measure(
            circle.surface.with_box(ChartDomain((lo,), (hi,))), circle.system, circle.vs, R_VALUES,
            engine=circle.engine,
        )
        for lo, hi in [(-math.pi, 0.0), (0.0, math.pi)]
    ]
    for half in halves:
        assert half.direct == pytest.approx(SIGMA_CIRCLE / 2.0, abs=1e-8)
        assert half.extrapolated == pytest.approx(SIGMA_CIRCLE / 2.0, abs=1e-4)
    assert sum(h.direct for h in halves) == pytest.approx(whole.direct, abs=1e-8)
    assert sum(h.extrapolated for h in halves) == pytest.approx(whole.extrapolated, abs=1e-4)


def test_surface_density_is_symbolic_on_the_circle(circle):
    chart = TubeChart(*circle.args(), circle.engine)
    rho_s = chart.surface_density()
    assert isinstance(rho_s, ScalarField)
    s = np.linspace(-3.0, 3.0, 7)[:, None]
    assert np.allclose(rho_s.values(s), SIGMA_CIRCLE / (2 * math.pi))


def test_average_of_a_function(segment, circle):
    u = ScalarField("x0^2", 2, label="u")
    flat = lemma3_average(u, *segment.args(), R_VALUES, engine=segment.engine)
    assert flat.extrapolated == pytest.approx(2.0 / 3.0, abs=1e-10)
    curved = lemma3_average(u, *circle.args(), R_VALUES, engine=circle.engine)
    assert curved.direct == pytest.approx(SIGMA_CIRCLE / 2.0, abs=1e-8)
    assert curved.extrapolated == pytest.approx(SIGMA_CIRCLE / 2.0, abs=1e-4)


def test_average_of_a_bump(segment):
    bump = make_bump_form(0, [0.5, 0.0], 0.3, domain=segment.vs.domain, metric="chebyshev", label="u")
    report = lemma3_average(bump, *segment.args(), R_VALUES, QuadratureSpec(panels=8), segment.engine)
    # ∫ (1 - ((s - 0.5)/0.3)²)² ds = 0.3 · 16/15
    assert report.direct == pytest.approx(0.32, abs=1e-3)
    assert report.extrapolated == pytest.approx(report.direct, abs=1e-8)


def test_average_of_zero_vanishes(segment):
    report = lemma3_average(ScalarField("0", 2), *segment.args(), R_VALUES, engine=segment.engine)
    assert report.extrapolated == 0.0 and report.direct == 0.0


# ---------- tube chart ----------


def test_locate_inverts_the_tube_chart(circle):
    chart = prepare_chart(*circle.args(), circle.engine)
    params = np.array([[0.3, 0.1], [-1.0, -0.15], [2.5, 0.0]])
    x, _ = chart.psi(params)
    assert np.allclose(chart.locate(x), params, atol=1e-9)


def test_certify_returns_the_jacobian_floor(circle):
    chart = prepare_chart(*circle.args(), circle.engine)
    floor = chart.certify(circle.surface.region, 0.2)
    # cell-centred grid: the outermost t nodes sit at ±0.16
    assert floor == pytest.approx(math.exp(-0.32), rel=1e-6)


def test_inconsistent_inverse_is_a_config_error():
    st = StraighteningMap(["x0", "x1"], ["x0", "2*x1"], 1, ChartDomain((-1.0, -1.0), (1.0, 1.0)))
    with pytest.raises(ConfigError):
        st.validate()


def test_non_commuting_system_is_rejected():
    fields = [VectorField(["0", "1", "0"]), VectorField(["0", "0", "1 + x1"])]
    system = TransversalSystem(fields, DifferentialForm(3, 2, {(1, 2): "1"}))
    with pytest.raises(TransversalityError) as info:
        system.check_commuting(np.zeros((2, 3)))
    assert info.value.witness == [0.0, 0.0, 0.0]


def test_weak_transversality_is_rejected(segment):
    alpha = DifferentialForm(2, 1, {(1,): "1e-4"})
    system = TransversalSystem(segment.system.fields, alpha)
    with pytest.raises(TransversalityError):
        system.validate(segment.surface)


def test_non_tangent_field_is_rejected(segment):
    chart = prepare_chart(*segment.args(), segment.engine)
    with pytest.raises(TransversalityError):
        chart.check_tangent(VectorField(["0", "1"], label="normal"))


# ---------- divergence on the surface ----------


def test_divergence_theorem_on_the_segment(segment):
    bump = make_bump_form(0, [0.5, 0.0], 0.3, domain=segment.vs.domain, metric="chebyshev", label="u")
    report = theorem2_check(
        VectorField(["x0", "0"], label="Zx"), bump, *segment.args(), R_VALUES,
        QuadratureSpec(panels=8), segment.engine, tolerance=1e-8,
    )
    assert report.lhs == pytest.approx(0.32, abs=1e-3)
    assert report.difference < 1e-8
    assert report.passed
    assert report.ambient_lift_mismatch < 1e-6


def test_divergence_theorem_with_a_linear_weight(segment):
    report = theorem2_check(
        VectorField(["x0", "0"], label="Zx"), ScalarField("1 + x0", 2, label="u"), *segment.args(), R_VALUES,
        engine=segment.engine, tolerance=1e-8,
    )
    assert report.lhs == pytest.approx(2.0, abs=1e-12)
    assert report.rhs_extrapolated == pytest.approx(2.0, abs=1e-8)
    assert report.passed


def test_divergence_theorem_for_the_rotation(circle):
    report = theorem2_check(ROTATION, None, *circle.args(), R_VALUES, engine=circle.engine, tolerance=1e-6)
    assert abs(report.lhs) < 1e-10
    assert report.difference < 1e-6
    assert report.max_abs_lift_divergence < 1e-4
    assert report.ambient_lift_mismatch < 1e-4


def test_restriction_on_the_segment(segment):
    z = VectorField(["1 + x0^2", "x0*x1"], label="Zt")
    omega_s = ScalarField("1 + x0^2/2", 1, segment.surface.parameter_box, "omega_S")
    s = np.linspace(-0.9, 0.9, 7)[:, None]
    report = restriction_check(z, *segment.args(), s, omega_s, segment.engine)
    assert report.max_rel_residual < 1e-6


def test_restriction_on_the_circle(circle):
    omega_s = ScalarField("2 + cos(x0)", 1, circle.surface.parameter_box, "omega_S")
    s = np.linspace(-3.0, 3.0, 7)[:, None]
    report = restriction_check(ROTATION, *circle.args(), s, omega_s, circle.engine)
    assert report.max_rel_residual < 1e-6


def test_restriction_uses_the_given_tube_radius(circle):
    omega_s = ScalarField("2 + cos(x0)", 1, circle.surface.parameter_box, "omega_S")
    s = np.linspace(-3.0, 3.0, 5)[:, None]
    narrow = restriction_check(ROTATION, *circle.args(), s, omega_s, circle.engine, radius=0.2)
    assert narrow.max_rel_residual < 1e-6
    with pytest.raises(ShapeError):
        restriction_check(ROTATION, *circle.args(), s, omega_s, circle.engine, radius=0.0)


def test_restriction_needs_a_closed_form(segment):
    system = TransversalSystem(segment.system.fields, DifferentialForm(2, 1, {(1,): "1 + x0^2"}))
    with pytest.raises(ClosednessError) as info:
        restriction_check(VectorField(["1", "0"]), segment.surface, system, segment.vs, [[0.0]])
    assert info.value.witness is not None


def test_lift_pushes_forward_to_the_field(circle, segment):
    for setup, z in [(circle, ROTATION), (segment, VectorField(["1 + x0^2", "x0*x1"]))]:
        lift = q_connected_lift(z, *setup.args(), setup.engine)
        params = np.array([[0.4, 0.1], [-0.8, -0.05], [0.0, 0.15]])
        for report in verify_lift(lift, params):
            assert report.max_rel_residual < 1e-8, report.identity


def test_multivector_corollary_on_a_plane():
    straightening = StraighteningMap(
        ["x0", "x1", "x2"], ["x0", "x1", "x2"], 1, ChartDomain((-1.5, -1.5, -1.0), (1.5, 1.5, 1.0))
    )
    domain = ChartDomain.cube(3, -2.0, 2.0)
    box = ChartDomain((-1.0, -1.0), (1.0, 1.0))
    system = TransversalSystem([VectorField(["0", "0", "1"])], associated_form(straightening))
    vectors = [
        VectorField(["1 + x0*x1", "x0^2", "x2*x0"], label="Z1"),
        VectorField(["sin(x1)", "1 + x1^2", "x2"], label="Z2"),
    ]
    alpha_s = make_bump_form(1, [0.2, -0.1], 0.5, {(0,): 1.0, (1,): 0.5}, box, "chebyshev")
    report = corollary_check(
        vectors, alpha_s, ElementarySurface(straightening, box), system, VolumeStructure.lebesgue(domain),
        [0.2, 0.1, 0.05], QuadratureSpec(nodes_per_axis=8, panels=2, radial_nodes=4),
        FlowEngine(domain=domain), tolerance=1e-6,
    )
    assert report.variant == "multivector"
    assert report.difference < 1e-6
