import numpy as np
import pytest

from app.collocation import ForcedLinearField, interpolate, orbit_from_function
from app.continuation import (
    ContinuationPoint,
    ReducedNetworkField,
    continue_branch,
    detect_events,
    determinant_sign,
    factorize,
    fired_indicators,
    floquet,
    lift_phase_differences,
    measure_orbit,
    newton,
    newton_correct,
    orbit_from_seed,
    prepare_start,
    reduce_phase_differences,
    run_branch,
    switch_branch,
    tangent_vector,
)
from app.errors import AmbiguousEvent, ContractViolation, NoConvergence, SingularJacobian, StepUnderflow
from app.models import ContinuationSettings
from app.network import TWO_PI, PatternSpec
from app.parametrization import first_order_solution
from app.reduced_dynamics import build_seed_orbit, sdd_fixed_points

QUARTER_TURNS = [0.0, np.pi / 2, np.pi, 3 * np.pi / 2]
LINEAR_PATTERN = PatternSpec("SD")


def circular_gap(a, b):
    gap = abs(a - b) % (2 * np.pi)
    return min(gap, 2 * np.pi - gap)


def stability_changes(branch):
    points = branch.points
    return [0.5 * (a.lam + b.lam) for a, b in zip(points, points[1:]) if a.stable != b.stable]


def test_phase_difference_reduction_round_trip():
    theta = np.array([[0.5, 1.0, 2.0], [0.0, -1.0, 3.0]])
    u = reduce_phase_differences(theta)
    np.testing.assert_allclose(u, [[0.5, 1.5], [-1.0, 3.0]])
    np.testing.assert_allclose(reduce_phase_differences(lift_phase_differences(u)), u)
    with pytest.raises(ContractViolation):
        reduce_phase_differences(np.zeros(1))


def test_reduced_field_derivatives(network, perturb):
    vf = ReducedNetworkField(network, perturb, "r")
    u = np.random.default_rng(2).uniform(0.0, 2 * np.pi, vf.dim)
    step = 1e-7
    numeric = np.stack([(vf(u + step * e, perturb.r) - vf(u - step * e, perturb.r)) / (2 * step) for e in np.eye(vf.dim)], axis=-1)
    np.testing.assert_allclose(vf.jacobian(u, perturb.r), numeric, atol=1e-6)
    dlam = (vf(u, perturb.r + step) - vf(u, perturb.r - step)) / (2 * step)
    np.testing.assert_allclose(vf.parameter_derivative(u, perturb.r), dlam, atol=1e-7)
    assert vf.delta_at(0.3) == perturb.delta
    assert vf.r_at(0.3) == 0.3


def test_reduced_field_rejects_unknown_parameter(network, perturb):
    with pytest.raises(ContractViolation):
        ReducedNetworkField(network, perturb, "alpha")


def test_newton_on_a_scalar_root():
    result = newton(lambda x: x**2 - 2.0, lambda x: np.array([[2.0 * x[0]]]), [1.0], 1e-12, 10)
    assert result.x[0] == pytest.approx(np.sqrt(2.0))
    assert result.iterations <= 6
    with pytest.raises(NoConvergence) as caught:
        newton(lambda x: x**2 - 2.0, lambda x: np.array([[2.0 * x[0]]]), [1.0], 1e-12, 1)
    assert caught.value.residual > 1e-12


def test_factorize_refuses_singular_matrices():
    with pytest.raises(SingularJacobian):
        factorize(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_determinant_sign():
    assert determinant_sign(np.diag([2.0, -3.0])) == -1.0
    assert determinant_sign(np.array([[0.0, 1.0], [1.0, 0.0]])) == -1.0
    assert determinant_sign(np.array([[0.0, 1.0], [-1.0, 0.0]])) == 1.0


def test_tangent_vector_follows_previous_direction():
    jac = np.array([[1.0, -1.0]])
    weights = np.ones(2)
    np.testing.assert_allclose(tangent_vector(jac, np.array([1.0, 0.0]), weights), [1 / np.sqrt(2), 1 / np.sqrt(2)])
    np.testing.assert_allclose(tangent_vector(jac, np.array([-1.0, 0.0]), weights), [-1 / np.sqrt(2), -1 / np.sqrt(2)])


def _fake_point(index, **indicators):
    values = {"SN": 1.0, "BP": 1.0, "TR": None, "PD": 1.0}
    values.update(indicators)
    orbit = ForcedLinearField().exact_orbit(0.1 * (index + 1), 2, 1)
    return ContinuationPoint(index, orbit, np.zeros(orbit.unknowns().size), None, 0.0, values)


def test_fired_indicators():
    assert fired_indicators(_fake_point(0), _fake_point(1)) == []
    assert fired_indicators(_fake_point(0), _fake_point(1, SN=-0.5)) == ["SN"]
    assert fired_indicators(_fake_point(0, TR=0.1), _fake_point(1, TR=-0.1, BP=-1.0)) == ["BP", "TR"]
    assert fired_indicators(_fake_point(0, TR=0.1), _fake_point(1)) == []


def test_detect_events_without_sign_change():
    assert detect_events(_fake_point(0), _fake_point(1, TR=0.2), None, ContinuationSettings(), PatternSpec("SDD")) == []


def test_simultaneous_indicators_are_ambiguous():
    with pytest.raises(AmbiguousEvent) as caught:
        detect_events(_fake_point(0), _fake_point(1, SN=-1.0, PD=-1.0), None, ContinuationSettings(), PatternSpec("SDD"))
    assert "SN, PD" in str(caught.value)
    assert "lambda=0.1" in str(caught.value)


@pytest.fixture
def linear_start():
    field = ForcedLinearField(omega=1.0, decay=1.0)
    settings = ContinuationSettings(ntst=8, ncol=3, ds=0.05, dsmax=0.1, lambda_min=-1.0, lambda_max=0.5)
    start = newton_correct(field.exact_orbit(0.1, settings.ntst, settings.ncol), field, settings).orbit
    return field, settings, start


def test_linear_branch_runs_to_the_end_of_the_range(linear_start):
    field, settings, start = linear_start
    branch = continue_branch(start, field, settings, LINEAR_PATTERN)
    assert branch.status == "completed"
    assert branch.free == "lambda"
    assert not branch.partial
    assert branch.events == []
    assert np.all(np.diff(branch.lambdas()) > 0)
    assert branch.points[-1].lam > settings.lambda_max
    np.testing.assert_allclose([point.period for point in branch.points], 2 * np.pi, atol=1e-9)
    assert all(point.stable for point in branch.points)
    assert max(point.spectrum.trivial_error for point in branch.points) < 1e-4


def test_linear_branch_backwards(linear_start):
    field, settings, start = linear_start
    branch = continue_branch(start, field, settings, LINEAR_PATTERN, direction=-1)
    assert branch.status == "completed"
    assert np.all(np.diff(branch.lambdas()) < 0)
    assert branch.points[-1].lam < settings.lambda_min


def test_direction_must_be_a_sign(linear_start):
    field, settings, start = linear_start
    with pytest.raises(ContractViolation):
        continue_branch(start, field, settings, LINEAR_PATTERN, direction=2)


def test_step_underflow_without_accepted_steps(linear_start):
    field, settings, start = linear_start
    strict = settings.model_copy(update={"newton_tol": 1e-300, "max_iter": 1, "ds": 0.01, "dsmin": 0.005})
    with pytest.raises(StepUnderflow):
        continue_branch(start, field, strict, LINEAR_PATTERN)


def test_period_beyond_t_max_is_flagged(linear_start):
    field, settings, start = linear_start
    branch = continue_branch(start, field, settings.model_copy(update={"t_max": 5.0}), LINEAR_PATTERN)
    assert branch.status == "homoclinic"
    assert branch.partial
    assert [event.kind for event in branch.events] == ["HOM"]


def test_max_steps(linear_start):
    field, settings, start = linear_start
    branch = continue_branch(start, field, settings.model_copy(update={"max_steps": 2}), LINEAR_PATTERN)
    assert branch.status == "max_steps"
    assert len(branch.points) == 3


def test_switching_needs_a_branch_point(linear_start):
    field, settings, start = linear_start
    branch = continue_branch(start, field, settings.model_copy(update={"t_max": 5.0}), LINEAR_PATTERN)
    with pytest.raises(ContractViolation):
        switch_branch(branch.events[0], field, settings)


def test_seed_correction_converges_quickly(sdd, network, perturb, coarse_settings):
    sol = first_order_solution(sdd, network, perturb)
    point = sdd_fixed_points(perturb)[1]
    seed = build_seed_orbit(sdd, point, perturb, network, sol=sol)
    vf = ReducedNetworkField(network, perturb, "delta")
    corrected = newton_correct(orbit_from_seed(seed, sol, coarse_settings, perturb.delta), vf, coarse_settings)
    assert corrected.iterations <= 6
    assert corrected.orbit.period == pytest.approx(seed.period_estimate, rel=0.01)


@pytest.mark.parametrize("angle", QUARTER_TURNS)
def test_sdd_primary_orbits_sit_at_their_fixed_points(sdd, network, perturb, coarse_settings, angle):
    orbit, vf = prepare_start(sdd, angle, network, perturb, coarse_settings)
    assert circular_gap(measure_orbit(orbit, sdd), angle) < 0.05
    assert floquet(orbit, vf, coarse_settings).trivial_error < 1e-4


def test_sdd_half_turn_images_share_their_spectrum(sdd, network, perturb, coarse_settings):
    spectra = []
    for angle in (0.0, np.pi):
        orbit, vf = prepare_start(sdd, angle, network, perturb, coarse_settings)
        spectra.append(np.sort_complex(floquet(orbit, vf, coarse_settings).multipliers))
    np.testing.assert_allclose(spectra[0], spectra[1], atol=1e-6)


def test_short_network_branch(sdd, network, perturb, coarse_settings):
    settings = coarse_settings.model_copy(update={"max_steps": 3})
    orbit, vf = prepare_start(sdd, np.pi / 2, network, perturb, settings)
    branch = continue_branch(orbit, vf, settings, sdd)
    assert branch.status == "max_steps"
    assert np.all(np.diff(branch.lambdas()) > 0)
    assert max(point.spectrum.trivial_error for point in branch.points) < 1e-4


@pytest.mark.slow
def test_sdd_branch_points(sdd, network, outgoing):
    settings = ContinuationSettings(lambda_max=0.5)
    for angle in (0.0, np.pi):
        branch = run_branch(sdd, angle, network, outgoing, settings)
        assert not branch.points[0].stable
        bps = branch.events_of("BP")
        assert bps, f"no branch point on gamma_{angle:.3f}"
        assert bps[0].lam == pytest.approx(0.3152, abs=0.01)
        assert all(point.stable for point in branch.points if point.lam > bps[0].lam + 0.01)


@pytest.mark.slow
def test_sdd_isola(sdd, network, outgoing):
    settings = ContinuationSettings(lambda_max=0.6)
    branch = run_branch(sdd, 0.0, network, outgoing, settings)
    switched = switch_branch(branch.events_of("BP")[0], branch.vf, settings)
    secondary = continue_branch(switched[0].orbit, branch.vf, settings, sdd, tangent=switched[0].tangent)
    assert secondary.status == "closed"
    kinds = [event.kind for event in secondary.events]
    assert "SN" in kinds and "TR" in kinds
    assert any(point.stable and abs(point.lam - 0.4037) < 0.02 for point in secondary.points)


@pytest.mark.slow
def test_ssd_diagram(ssd, network, outgoing):
    settings = ContinuationSettings(lambda_max=1.0)
    gamma_0 = run_branch(ssd, 0.0, network, outgoing, settings)
    assert min(abs(lam - 0.227) for lam in stability_changes(gamma_0)) < 0.01

    gamma_pi = run_branch(ssd, np.pi, network, outgoing, settings)
    assert min(abs(lam - 0.250) for lam in stability_changes(gamma_pi)) < 0.005

    gamma_3 = run_branch(ssd, 3 * np.pi / 2, network, outgoing, settings)
    assert gamma_3.events_of("BP")[0].lam == pytest.approx(0.179, abs=0.01)

    gamma_1 = run_branch(ssd, np.pi / 2, network, outgoing, settings)
    assert gamma_1.status == "homoclinic"
    assert gamma_1.events_of("HOM")[0].lam == pytest.approx(0.80, abs=0.05)


def test_outgoing_coupling_leaves_one_unstable_direction(sdd, network, perturb, outgoing, coarse_settings):
    unstable = {}
    for q in (perturb, outgoing):
        orbit, vf = prepare_start(sdd, 0.0, network, q, coarse_settings)
        spectrum = floquet(orbit, vf, coarse_settings)
        unstable[q.orientation] = int(np.sum(np.abs(spectrum.nontrivial) > 1.0))
    assert unstable == {"incoming": 2, "outgoing": 1}


def _time_shifted(orbit, shift):
    windings = np.asarray(orbit.windings, dtype=float)

    def curve(t):
        s = np.asarray(t) + shift
        turns = np.floor(s)
        return interpolate(orbit, s - turns) + TWO_PI * turns[:, None] * windings

    return orbit_from_function(curve, orbit.period, orbit.windings, orbit.lam, orbit.ntst, orbit.ncol)


def test_newton_recovers_from_noise(sdd, network, perturb, coarse_settings):
    orbit, vf = prepare_start(sdd, np.pi / 2, network, perturb, coarse_settings)
    x = orbit.unknowns().copy()
    x[:-2] += 1e-3 * np.random.default_rng(9).standard_normal(x.size - 2)
    corrected = newton_correct(orbit.with_unknowns(x), vf, coarse_settings, reference=orbit)
    assert corrected.iterations >= 1
    np.testing.assert_allclose(corrected.orbit.states, orbit.states, atol=1e-7)
    assert corrected.orbit.period == pytest.approx(orbit.period, rel=1e-9)


def test_measure_is_blind_to_the_time_origin(sdd, network, perturb, coarse_settings):
    orbit, vf = prepare_start(sdd, np.pi / 2, network, perturb, coarse_settings)
    moved = newton_correct(_time_shifted(orbit, 0.37), vf, coarse_settings).orbit
    assert np.abs(moved.states - orbit.states).max() > 1e-3
    assert moved.period == pytest.approx(orbit.period, rel=1e-8)
    assert circular_gap(measure_orbit(moved, sdd), measure_orbit(orbit, sdd)) < 1e-5


def test_branch_retraces_itself(sdd, network, perturb, coarse_settings):
    orbit, vf = prepare_start(sdd, np.pi / 2, network, perturb, coarse_settings)
    forward = continue_branch(orbit, vf, coarse_settings.model_copy(update={"max_steps": 4}), sdd)
    lams = forward.lambdas()
    periods = [point.period for point in forward.points]
    measures = [point.measure for point in forward.points]

    back_settings = coarse_settings.model_copy(update={"max_steps": 8, "lambda_min": 0.005})
    backward = continue_branch(forward.points[-1].orbit, vf, back_settings, sdd, direction=-1)
    assert np.all(np.diff(backward.lambdas()) < 0)
    inside = [point for point in backward.points if lams[0] <= point.lam <= lams[-1]]
    assert len(inside) >= 2
    for point in inside:
        assert point.period == pytest.approx(np.interp(point.lam, lams, periods), rel=1e-3)
        assert circular_gap(point.measure, np.interp(point.lam, lams, measures)) < 1e-2
