import numpy as np
import pytest

from app.closed_forms import (
    closed_form_e1,
    normal_map,
    printed_normal_map,
    printed_y_coefficient,
    sdd_constants,
    sdd_psi_rate,
    sdd_psi_slope,
    sdd_reduced_field,
    ssd_constants,
    ssd_phi_rate,
    ssd_phi_slope,
)
from app.errors import ContractViolation
from app.models import NetworkParams
from app.network import PatternSpec


def test_sdd_constants(network, perturb):
    constants = sdd_constants(network, perturb)
    assert constants["a"] == pytest.approx(0.384615, abs=1e-6)
    assert constants["b"] == pytest.approx(-1.923077, abs=1e-6)
    assert constants["c"] == pytest.approx(-0.882353, abs=1e-6)
    assert constants["d"] == pytest.approx(1.470588, abs=1e-6)


def test_ssd_constants(network, perturb):
    constants = ssd_constants(network, perturb)
    kappa = 2 * network.r0
    assert constants["a"] == pytest.approx(2 * (np.cos(perturb.alpha) - kappa * np.sin(perturb.alpha)) / (kappa**2 + 1))
    assert constants["b"] == pytest.approx(-2 * (np.sin(perturb.alpha) + kappa * np.cos(perturb.alpha)) / (kappa**2 + 1))


def test_printed_coefficient(network, perturb):
    value = printed_y_coefficient(PatternSpec("SDD"), network, perturb, 1)[0]
    assert value == pytest.approx((0.2 + 1j) / 1.04)


def test_even_harmonics_do_not_reach_the_normal_directions(network, perturb):
    np.testing.assert_allclose(printed_y_coefficient(PatternSpec("SSD"), network, perturb, 2), 0.0)


def test_frame_normalisation_halves_printed_families(pattern, network, perturb):
    printed = printed_normal_map(pattern, network, perturb)
    assert normal_map(pattern, network, perturb).max_difference(printed.apply(0.5 * np.eye(3))) == 0.0


def test_reduced_rates_match_fields(perturb):
    psi = np.linspace(0.0, 2 * np.pi, 13)
    phi = np.stack([np.zeros_like(psi), np.zeros_like(psi), psi], axis=-1)
    field = sdd_reduced_field(phi, perturb)
    np.testing.assert_allclose(perturb.delta * (field[:, 2] - field[:, 1]), sdd_psi_rate(psi, perturb), atol=1e-15)
    np.testing.assert_allclose(
        sdd_psi_rate(psi, perturb), -4 * perturb.r * perturb.delta * np.cos(2 * perturb.beta) * np.sin(2 * psi), atol=1e-15
    )


@pytest.mark.parametrize("rate, slope", [(sdd_psi_rate, sdd_psi_slope), (ssd_phi_rate, ssd_phi_slope)])
def test_slopes_are_derivatives_of_rates(perturb, rate, slope):
    angle = np.linspace(0.1, 6.0, 7)
    step = 1e-6
    numeric = (rate(angle + step, perturb) - rate(angle - step, perturb)) / (2 * step)
    np.testing.assert_allclose(slope(angle, perturb), numeric, atol=1e-9)


def test_closed_forms_need_the_three_population_network(perturb):
    with pytest.raises(ContractViolation):
        closed_form_e1(PatternSpec("SDD"), np.zeros(3), NetworkParams(k_plus=0.3), perturb)
    with pytest.raises(ContractViolation):
        closed_form_e1(PatternSpec("DDD"), np.zeros(3), NetworkParams(), perturb)
