import numpy as np
import pytest

from app.closed_forms import oracle_discrepancy
from app.errors import ContractViolation, LmaxOverflow, SmallDivisorWarning
from app.fourier import FourierMap, torus_grid
from app.network import PatternSpec
from app.parametrization import (
    compute_G1,
    conjugacy_residual,
    embedding_eval,
    embedding_jacobian,
    first_order_solution,
    invariance_defect,
    reduced_vf_eval,
    residual_sup,
    solve_normal,
    solve_tangential,
    split_rhs,
    torus_distance,
)

ORACLE_TOL = 1e-10
SCAN_DELTAS = (0.005, 0.01, 0.02)


def test_solver_matches_closed_forms(solution, network, perturb):
    gaps = oracle_discrepancy(solution, network, perturb)
    assert gaps["max"] < ORACLE_TOL, gaps


def test_numeric_and_analytic_rhs_agree(pattern, network, perturb):
    analytic = compute_G1(pattern, network, perturb, method="analytic")
    numeric = compute_G1(pattern, network, perturb, method="numeric")
    assert analytic.max_difference(numeric) < ORACLE_TOL


def test_unknown_rhs_method(pattern, network, perturb):
    with pytest.raises(ContractViolation):
        compute_G1(pattern, network, perturb, method="symbolic")


def test_lmax_below_second_harmonic(pattern, network, perturb):
    with pytest.raises(LmaxOverflow):
        first_order_solution(pattern, network, perturb, lmax=1)


def test_split_reassembles_rhs(solution):
    frame = solution.frame
    rebuilt = solution.U1.apply(frame.R) + solution.V1.apply(frame.N)
    assert rebuilt.max_difference(solution.G1) < 1e-12


def test_split_rejects_wrong_range(solution):
    with pytest.raises(ContractViolation):
        split_rhs(FourierMap.zero(3, 4), solution.frame)


def test_normal_solve_inverts_resolvent(solution):
    frame = solution.frame
    Y1 = solve_normal(solution.V1, frame)
    for mode, y, v in zip(Y1.modes, Y1.coeffs, solution.V1.coeffs):
        lhs = 1j * float(frame.Omega @ mode) * y - frame.L @ y
        np.testing.assert_allclose(lhs, v, atol=1e-12)


def test_tangential_solve_splits_resonant_modes(solution):
    frame = solution.frame
    X1, f1 = solve_tangential(solution.U1, frame)
    np.testing.assert_allclose(f1.modes @ frame.Omega, 0.0, atol=1e-12)
    assert np.all(np.abs(X1.modes @ frame.Omega) > 1.0)
    assert len(X1) + len(f1) == len(solution.U1)
    rebuilt = FourierMap(X1.modes, X1.coeffs * (1j * (X1.modes @ frame.Omega))[:, None], 3, 3) + f1
    assert rebuilt.max_difference(solution.U1) < 1e-12


def test_small_divisor_warning(solution):
    with pytest.warns(SmallDivisorWarning):
        solve_tangential(solution.U1, solution.frame, resonance_tol=0.5)


def test_series_are_real(solution):
    for fmap in (solution.X1, solution.Y1, solution.f1):
        assert fmap.reality_defect() < 1e-14


def test_normal_form_keeps_only_resonant_modes(solution):
    frequencies = solution.f1.modes @ solution.frame.Omega
    np.testing.assert_allclose(frequencies, 0.0, atol=1e-12)
    assert np.all(np.abs(solution.X1.modes @ solution.frame.Omega) > 1e-9)


def test_sdd_embedding_correction_at_origin(sdd, network, perturb):
    sol = first_order_solution(sdd, network, perturb)
    np.testing.assert_allclose(
        sol.e1(np.zeros(3)),
        [-0.2, -0.2, -0.092308, 0.292308, 0.541176, -0.341176],
        atol=1e-6,
    )


def test_embedding_at_zero_delta_is_the_torus(solution):
    phi = np.array([0.4, 1.0, -2.2])
    np.testing.assert_allclose(
        embedding_eval(solution, phi, 0.0, unwrapped=True), solution.pattern.embed(phi), atol=1e-15
    )
    np.testing.assert_allclose(embedding_jacobian(solution, phi, 0.0), solution.frame.R, atol=1e-15)
    np.testing.assert_allclose(reduced_vf_eval(solution, phi, 0.0), solution.frame.Omega, atol=1e-15)


def test_embedding_is_wrapped(solution):
    theta = embedding_eval(solution, torus_grid(4, 3), 0.01)
    assert np.all((theta >= 0) & (theta < 2 * np.pi))


def test_conjugacy_residual_is_second_order(solution, network, perturb):
    residuals = [residual_sup(solution, delta, network, perturb) for delta in SCAN_DELTAS]
    for small, large in zip(residuals, residuals[1:]):
        assert 3.6 <= large / small <= 4.4


def test_conjugacy_residual_vanishes_without_perturbation(solution, network, perturb):
    grid = torus_grid(6, 3)
    assert conjugacy_residual(solution, grid, 0.0, network, perturb).max() < 1e-12


def test_torus_distance_recovers_coordinates(solution):
    phi = np.array([0.3, 2.1, 4.0])
    theta = embedding_eval(solution, phi, 0.01)
    distance, found = torus_distance(solution, theta, 0.01, phi_guess=phi + 0.05)
    assert distance < 1e-10
    np.testing.assert_allclose(np.mod(found - phi + np.pi, 2 * np.pi) - np.pi, 0.0, atol=1e-8)


def test_torus_distance_of_a_normal_offset(solution):
    phi = np.array([0.3, 2.1, 4.0])
    offset = 1e-3 * solution.frame.N[:, 1]
    distance, _ = torus_distance(solution, solution.pattern.embed(phi) + offset, 0.0, phi_guess=phi)
    assert distance == pytest.approx(np.linalg.norm(offset), rel=1e-6)


@pytest.mark.slow
def test_trajectories_stay_attached_to_the_torus(solution, network, perturb):
    starts = np.random.default_rng(11).uniform(0.0, 2 * np.pi, (3, 3))
    coarse = invariance_defect(solution, network, perturb, 0.005, starts)
    fine = invariance_defect(solution, network, perturb, 0.01, starts)
    assert 3.0 <= fine / coarse <= 5.0


def test_reduced_field_depends_only_on_the_resonant_angle(solution):
    grid = torus_grid(6, 3)
    base = solution.f1(grid)
    for s, t in np.random.default_rng(11).uniform(0.0, 2 * np.pi, (3, 2)):
        shift = np.array([s, t, t]) if solution.pattern.word == "SDD" else np.array([t, t, s])
        np.testing.assert_allclose(solution.f1(grid + shift), base, atol=1e-12)


@pytest.mark.parametrize("word", ["SDD", "SSD"])
def test_outgoing_solution_matches_closed_forms(word, network, perturb):
    outgoing = perturb.with_values(orientation="outgoing")
    sol = first_order_solution(PatternSpec(word), network, outgoing)
    assert oracle_discrepancy(sol, network, outgoing)["max"] < ORACLE_TOL
