import math

import numpy as np
import pytest

from app.collocation import orbit_from_function
from app.continuation import ReducedNetworkField, reduce_phase_differences
from app.models import ContinuationSettings, NetworkParams, PerturbParams
from app.network import TWO_PI, PatternSpec, build_frame
from app.parametrization import first_order_solution

# α = β = π/2, r = 0.2 on the default network (α₂, α₄, K±, r₀, ω) = (π/2, π, 0.4, 0.1, -1)
ALPHA = math.pi / 2
BETA = math.pi / 2
R = 0.2
DELTA = 0.01


@pytest.fixture
def network() -> NetworkParams:
    return NetworkParams()


@pytest.fixture
def perturb() -> PerturbParams:
    return PerturbParams(alpha=ALPHA, beta=BETA, r=R, delta=DELTA)


@pytest.fixture
def outgoing(perturb) -> PerturbParams:
    """Same h with the argument reversed; the primary branches that start in-torus stable then gain full stability."""
    return perturb.with_values(orientation="outgoing")


@pytest.fixture
def coarse_settings() -> ContinuationSettings:
    return ContinuationSettings(ntst=20, ncol=4)


@pytest.fixture(params=["SDD", "SSD"])
def pattern(request) -> PatternSpec:
    return PatternSpec(request.param)


@pytest.fixture
def sdd() -> PatternSpec:
    return PatternSpec("SDD")


@pytest.fixture
def ssd() -> PatternSpec:
    return PatternSpec("SSD")


@pytest.fixture
def solution(pattern, network, perturb):
    return first_order_solution(pattern, network, perturb)


def unperturbed_orbit(pattern: PatternSpec, network: NetworkParams, ntst: int = 10, ncol: int = 4):
    """The drift cycle φ(t) = φ(0) + ΩTt on the unperturbed torus, in phase differences."""
    frame = build_frame(pattern, network)
    period = TWO_PI / np.abs(frame.Omega).max()
    windings = np.rint(frame.Omega * period / TWO_PI).astype(int)

    def curve(t):
        return reduce_phase_differences(pattern.embed(np.outer(t, frame.Omega * period)))

    full = np.repeat(windings, pattern.n)
    return orbit_from_function(curve, period, reduce_phase_differences(full), 0.0, ntst, ncol)


@pytest.fixture
def sdd_unperturbed(sdd, network, perturb):
    orbit = unperturbed_orbit(sdd, network)
    return orbit, ReducedNetworkField(network, perturb.with_values(delta=0.0), "delta")
