"""Periodic-orbit continuation on the perturbed tori.

Orbits are computed in phase differences u = θ[1:] - θ[0] (the residual
circle symmetry is quotiented out), discretised by :mod:`app.collocation` and
followed in one parameter by pseudo-arclength continuation. Floquet
multipliers, fold / branch-point / torus / period-doubling indicators and the
averaged phase difference are recorded at every accepted point.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, NamedTuple, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import LinAlgError, lu_factor, lu_solve

from app.collocation import (
    FloquetSpectrum,
    OrbitSegment,
    bvp_jacobian,
    bvp_residual,
    equidistributed,
    floquet_spectrum,
    gauss_values,
    needs_remesh,
    orbit_from_function,
    quadrature_mean,
    refined,
)
from app.errors import (
    AmbiguousEvent,
    ContractViolation,
    NoConvergence,
    SingularJacobian,
    StepUnderflow,
    SwitchFailure,
    TorusError,
    TrivialMultiplierDrift,
)
from app.models import ContinuationSettings, NetworkParams, PerturbParams
from app.network import (
    TWO_PI,
    PatternSpec,
    eval_full,
    jacobian_full,
    parameter_derivative,
    wrap,
)
from app.parametrization import FirstOrderSolution, embedding_eval, first_order_solution
from app.reduced_dynamics import SeedOrbit, build_seed_orbit, reduced_fixed_points

logger = logging.getLogger(__name__)

FreeParameter = Literal["delta", "r"]
EventKind = Literal["SN", "TR", "BP", "PD", "HOM"]

TRIVIAL_TARGET = 1e-4
COMPLEX_TOL = 1e-6
PIVOT_TOL = 1e-14
SWITCH_ANGLE = 1e-3
SWITCH_HALVINGS = 4
GROWTH_ITERATIONS = 3
GROWTH_FACTOR = 1.5
BISECTION_LIMIT = 60
CLOSURE_MIN_POINTS = 10

# populations (first oscillator each) whose phase difference is averaged
MEASURE_PAIRS = {"SDD": (2, 1), "SSD": (1, 0)}


def reduce_phase_differences(theta) -> NDArray[np.float64]:
    """θ_{σ,k} - θ_{1,1} for every oscillator except the first."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] < 2:
        raise ContractViolation("phase reduction needs at least two oscillators")
    return theta[..., 1:] - theta[..., :1]


def lift_phase_differences(u) -> NDArray[np.float64]:
    """Representative of the circle orbit with θ_{1,1} = 0."""
    u = np.asarray(u, dtype=float)
    return np.concatenate([np.zeros(u.shape[:-1] + (1,)), u], axis=-1)


@dataclass(frozen=True)
class ReducedNetworkField:
    """G(u, λ) = F[1:] - F[0] on the lifted state, with λ the free perturbation parameter."""

    network: NetworkParams
    perturb: PerturbParams
    free: FreeParameter = "delta"

    def __post_init__(self):
        if self.free not in ("delta", "r"):
            raise ContractViolation(f"unknown continuation parameter {self.free!r}")

    @property
    def dim(self) -> int:
        return self.network.size - 1

    def params(self, lam: float) -> PerturbParams:
        # no validation: predictors may step briefly outside the model's ranges
        return self.perturb.model_copy(update={self.free: float(lam)})

    def with_perturb(self, **values: float) -> "ReducedNetworkField":
        return ReducedNetworkField(self.network, self.perturb.model_copy(update=values), self.free)

    def __call__(self, u, lam: float):
        velocity = eval_full(lift_phase_differences(u), self.network, self.params(lam))
        return velocity[..., 1:] - velocity[..., :1]

    def jacobian(self, u, lam: float):
        jac = jacobian_full(lift_phase_differences(u), self.network, self.params(lam))
        return jac[..., 1:, 1:] - jac[..., :1, 1:]

    def parameter_derivative(self, u, lam: float):
        dlam = parameter_derivative(lift_phase_differences(u), self.params(lam), self.free)
        return dlam[..., 1:] - dlam[..., :1]

    def delta_at(self, lam: float) -> float:
        return float(lam) if self.free == "delta" else self.perturb.delta

    def r_at(self, lam: float) -> float:
        return float(lam) if self.free == "r" else self.perturb.r


class NewtonResult(NamedTuple):
    x: NDArray[np.float64]
    iterations: int
    residual: float


class CorrectedOrbit(NamedTuple):
    orbit: OrbitSegment
    iterations: int
    residual: float


def factorize(matrix):
    """LU factors of a square matrix, refusing numerically singular ones."""
    try:
        factors = lu_factor(matrix, check_finite=True)
    except (ValueError, LinAlgError) as exc:
        raise SingularJacobian(str(exc)) from exc
    pivots = np.abs(np.diag(factors[0]))
    if pivots.min() <= PIVOT_TOL * max(pivots.max(), 1.0):
        raise SingularJacobian(f"pivot ratio {pivots.min() / pivots.max():.3e}")
    return factors


def determinant_sign(matrix) -> float:
    lu, piv = lu_factor(matrix, check_finite=False)
    swaps = np.count_nonzero(piv != np.arange(piv.size))
    sign = np.prod(np.sign(np.diag(lu)))
    return float(sign * (-1.0) ** swaps)


def newton(
    residual: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    jacobian: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    x0,
    tol: float,
    max_iter: int,
) -> NewtonResult:
    """Plain Newton iteration on a square system; converged when |residual|∞ < tol."""
    x = np.array(x0, dtype=float)
    norm = np.inf
    for iteration in range(max_iter + 1):
        values = residual(x)
        norm = float(np.abs(values).max())
        logger.debug("Newton iteration %d: residual %.3e", iteration, norm)
        if not np.isfinite(norm):
            break
        if norm < tol:
            return NewtonResult(x, iteration, norm)
        if iteration == max_iter:
            break
        x = x + lu_solve(factorize(jacobian(x)), -values)
    raise NoConvergence(f"Newton stopped at residual {norm:.3e}", iterations=max_iter, residual=norm)


def newton_correct(
    orbit: OrbitSegment,
    vf: ReducedNetworkField,
    settings: ContinuationSettings,
    reference: Optional[OrbitSegment] = None,
) -> CorrectedOrbit:
    """Correct an orbit at fixed λ; the phase condition is taken against ``reference`` (default: the guess)."""
    reference = reference or orbit
    count = orbit.states.size + 1

    def residual(x):
        return bvp_residual(orbit.with_unknowns(np.append(x, orbit.lam)), vf, reference)

    def jacobian(x):
        return bvp_jacobian(orbit.with_unknowns(np.append(x, orbit.lam)), vf, reference)[:, :count]

    result = newton(residual, jacobian, orbit.unknowns()[:count], settings.newton_tol, settings.max_iter)
    corrected = orbit.with_unknowns(np.append(result.x, orbit.lam))
    logger.debug("Corrected orbit at lambda=%.6g in %d iterations, T=%.6f", orbit.lam, result.iterations, corrected.period)
    return CorrectedOrbit(corrected, result.iterations, result.residual)


def arclength_weights(orbit: OrbitSegment) -> NDArray[np.float64]:
    """Node entries share weight one between them; T and λ count fully."""
    weights = np.full(orbit.states.size + 2, 1.0 / orbit.node_count)
    weights[-2:] = 1.0
    return weights


def _wdot(a, b, weights) -> float:
    return float(np.sum(weights * a * b))


def tangent_vector(jac, previous, weights) -> NDArray[np.float64]:
    """Unit null vector of the (n-1) x n Jacobian oriented along ``previous``."""
    bordered = np.vstack([jac, (weights * previous)[None, :]])
    rhs = np.zeros(bordered.shape[0])
    rhs[-1] = 1.0
    tangent = lu_solve(factorize(bordered), rhs)
    return tangent / np.sqrt(_wdot(tangent, tangent, weights))


def floquet(orbit: OrbitSegment, vf: ReducedNetworkField, settings: ContinuationSettings) -> FloquetSpectrum:
    """Floquet multipliers; recomputed on a doubled mesh when the trivial one drifts."""
    spectrum = floquet_spectrum(orbit, vf)
    if spectrum.trivial_error > TRIVIAL_TARGET:
        logger.warning(
            "Trivial multiplier off by %.2e at lambda=%.6g; refining mesh to ntst=%d",
            spectrum.trivial_error, orbit.lam, 2 * orbit.ntst,
        )
        fine = newton_correct(refined(orbit), vf, settings).orbit
        spectrum = floquet_spectrum(fine, vf)
    if spectrum.trivial_error > settings.trivial_tol:
        raise TrivialMultiplierDrift(f"|mu_trivial - 1| = {spectrum.trivial_error:.3e} at lambda={orbit.lam:.6g}")
    return spectrum


def measure_orbit(orbit: OrbitSegment, pattern: PatternSpec) -> float:
    """Time average of the pattern's reporting phase difference, mod 2π."""
    upper, lower = MEASURE_PAIRS.get(pattern.word, (1, 0))
    theta = lift_phase_differences(gauss_values(orbit))
    difference = theta[..., upper * pattern.n] - theta[..., lower * pattern.n]
    return float(wrap(quadrature_mean(orbit, difference)))


def _torus_indicator(spectrum: FloquetSpectrum) -> Optional[float]:
    others = spectrum.nontrivial
    pairs = others[np.abs(others.imag) > COMPLEX_TOL]
    if pairs.size == 0:
        return None
    gaps = np.abs(pairs) - 1.0
    return float(gaps[np.argmin(np.abs(gaps))])


def _doubling_indicator(spectrum: FloquetSpectrum) -> float:
    return float(np.prod(spectrum.nontrivial + 1.0).real)


@dataclass(frozen=True)
class ContinuationPoint:
    index: int
    orbit: OrbitSegment
    tangent: NDArray[np.float64]
    spectrum: FloquetSpectrum
    measure: float
    indicators: dict
    iterations: int = 0

    @property
    def lam(self) -> float:
        return self.orbit.lam

    @property
    def period(self) -> float:
        return self.orbit.period

    @property
    def stable(self) -> bool:
        return self.spectrum.is_stable


@dataclass(frozen=True)
class BifurcationEvent:
    kind: EventKind
    lam: float
    bracket: tuple[int, int]
    localization_tol: float
    orbit: OrbitSegment
    tangent: Optional[NDArray[np.float64]] = None
    multipliers: Optional[NDArray[np.complex128]] = None

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lambda": self.lam,
            "bracket": list(self.bracket),
            "localization_tol": self.localization_tol,
            "period": self.orbit.period,
            "windings": self.orbit.windings.tolist(),
            "multipliers": [] if self.multipliers is None else [[m.real, m.imag] for m in self.multipliers],
        }


@dataclass
class Branch:
    pattern: PatternSpec
    vf: ReducedNetworkField
    direction: int
    points: list[ContinuationPoint] = field(default_factory=list)
    events: list[BifurcationEvent] = field(default_factory=list)
    status: str = "running"
    label: str = ""

    @property
    def free(self) -> str:
        return self.vf.free

    @property
    def partial(self) -> bool:
        return self.status not in ("completed", "closed")

    def lambdas(self) -> NDArray[np.float64]:
        return np.array([point.lam for point in self.points])

    def events_of(self, kind: str) -> list[BifurcationEvent]:
        return [event for event in self.events if event.kind == kind]


def evaluate_point(
    index: int,
    orbit: OrbitSegment,
    tangent,
    jac,
    vf: ReducedNetworkField,
    settings: ContinuationSettings,
    pattern: PatternSpec,
    iterations: int = 0,
) -> ContinuationPoint:
    spectrum = floquet(orbit, vf, settings)
    indicators = {
        "SN": float(tangent[-1]),
        "BP": determinant_sign(np.vstack([jac, tangent[None, :]])),
        "TR": _torus_indicator(spectrum),
        "PD": _doubling_indicator(spectrum),
    }
    return ContinuationPoint(index, orbit, np.asarray(tangent), spectrum, measure_orbit(orbit, pattern), indicators, iterations)


def _fires(left, right) -> bool:
    if left is None or right is None:
        return False
    return np.sign(left) * np.sign(right) < 0


def fired_indicators(left: ContinuationPoint, right: ContinuationPoint) -> list[str]:
    """Indicator names whose sign changes between two consecutive points."""
    return [kind for kind in ("SN", "BP", "TR", "PD") if _fires(left.indicators[kind], right.indicators[kind])]


def _arclength_step(
    left: ContinuationPoint,
    step: float,
    vf: ReducedNetworkField,
    settings: ContinuationSettings,
    pattern: PatternSpec,
    index: int,
) -> ContinuationPoint:
    """Predict along the left tangent by ``step`` and correct on the arclength hyperplane."""
    template = left.orbit
    weights = arclength_weights(template)
    origin = template.unknowns()
    predicted = origin + step * left.tangent
    border = weights * left.tangent

    def residual(x):
        values = bvp_residual(template.with_unknowns(x), vf, template)
        return np.append(values, np.dot(border, x - predicted))

    def jacobian(x):
        return np.vstack([bvp_jacobian(template.with_unknowns(x), vf, template), border[None, :]])

    result = newton(residual, jacobian, predicted, settings.newton_tol, settings.max_iter)
    orbit = template.with_unknowns(result.x)
    jac = bvp_jacobian(orbit, vf, template)
    tangent = tangent_vector(jac, left.tangent, weights)
    return evaluate_point(index, orbit, tangent, jac, vf, settings, pattern, result.iterations)


def localize_event(
    kind: str,
    left: ContinuationPoint,
    right: ContinuationPoint,
    vf: ReducedNetworkField,
    settings: ContinuationSettings,
    pattern: PatternSpec,
) -> BifurcationEvent:
    """Bisection on the arclength between two points until the bracket is below localization_tol."""
    weights = arclength_weights(left.orbit)
    low, high = 0.0, _wdot(right.orbit.unknowns() - left.orbit.unknowns(), left.tangent, weights)
    low_value = left.indicators[kind]
    best = right
    for _ in range(BISECTION_LIMIT):
        if abs(high - low) < settings.localization_tol:
            break
        middle = 0.5 * (low + high)
        try:
            point = _arclength_step(left, middle, vf, settings, pattern, right.index)
        except TorusError as exc:
            logger.warning("Localization of %s stopped early: %s", kind, exc)
            break
        value = point.indicators[kind]
        if value is None:
            break
        if np.sign(value) == np.sign(low_value):
            low, low_value = middle, value
        else:
            high, best = middle, point
    event = BifurcationEvent(
        kind=kind,
        lam=best.lam,
        bracket=(left.index, right.index),
        localization_tol=abs(high - low),
        orbit=best.orbit,
        tangent=best.tangent,
        multipliers=best.spectrum.multipliers,
    )
    logger.info("%s detected on %s at lambda=%.8f (bracket %.1e)", kind, pattern.word, event.lam, event.localization_tol)
    return event


def detect_events(
    left: ContinuationPoint,
    right: ContinuationPoint,
    vf: ReducedNetworkField,
    settings: ContinuationSettings,
    pattern: PatternSpec,
) -> list[BifurcationEvent]:
    fired = fired_indicators(left, right)
    if len(fired) > 1:
        raise AmbiguousEvent(f"{', '.join(fired)} fire between lambda={left.lam:.6g} and {right.lam:.6g}")
    return [localize_event(kind, left, right, vf, settings, pattern) for kind in fired]


def _circular_gap(a: float, b: float) -> float:
    gap = abs(a - b) % TWO_PI
    return min(gap, TWO_PI - gap)


def _closes(branch: Branch, point: ContinuationPoint, ds: float) -> bool:
    if len(branch.points) < CLOSURE_MIN_POINTS:
        return False
    first = branch.points[0]
    return (
        abs(point.lam - first.lam) < ds
        and abs(point.period - first.period) < ds
        and _circular_gap(point.measure, first.measure) < ds
    )


def start_point(
    start: OrbitSegment,
    vf: ReducedNetworkField,
    settings: ContinuationSettings,
    pattern: PatternSpec,
    direction: int = 1,
    tangent=None,
) -> ContinuationPoint:
    jac = bvp_jacobian(start, vf, start)
    weights = arclength_weights(start)
    if tangent is None:
        previous = np.zeros(start.states.size + 2)
        previous[-1] = float(direction)
    else:
        previous = np.asarray(tangent, dtype=float)
    return evaluate_point(0, start, tangent_vector(jac, previous, weights), jac, vf, settings, pattern)


def continue_branch(
    start: OrbitSegment,
    vf: ReducedNetworkField,
    settings: ContinuationSettings,
    pattern: PatternSpec,
    direction: int = 1,
    tangent=None,
    label: str = "",
) -> Branch:
    """Pseudo-arclength continuation in the field's free parameter from a converged orbit."""
    if direction not in (1, -1):
        raise ContractViolation("direction must be +1 or -1")
    if needs_remesh(start, vf):
        logger.info("Equidistributing mesh before continuation")
        start = newton_correct(equidistributed(start), vf, settings).orbit

    branch = Branch(pattern, vf, direction, label=label)
    branch.points.append(start_point(start, vf, settings, pattern, direction, tangent))
    logger.info(
        "Continuing %s %s in %s from %.6g (direction %+d)", pattern.word, label, vf.free, start.lam, direction
    )

    ds = settings.ds
    while len(branch.points) <= settings.max_steps:
        current = branch.points[-1]
        try:
            candidate = _arclength_step(current, ds, vf, settings, pattern, current.index + 1)
            events = detect_events(current, candidate, vf, settings, pattern)
        except AmbiguousEvent as exc:
            if ds / 2 < settings.dsmin:
                logger.warning("%s; accepting the step at the minimum size", exc)
                events = [
                    localize_event(kind, current, candidate, vf, settings, pattern)
                    for kind in fired_indicators(current, candidate)
                ]
            else:
                ds /= 2
                logger.debug("%s; halving step to %.3e", exc, ds)
                continue
        except (NoConvergence, SingularJacobian, TrivialMultiplierDrift) as exc:
            ds /= 2
            logger.debug("Step rejected (%s); ds=%.3e", exc, ds)
            if ds < settings.dsmin:
                if len(branch.points) == 1:
                    raise StepUnderflow(f"no step accepted from lambda={current.lam:.6g}: {exc}") from exc
                branch.status = "underflow"
                logger.warning("Step size underflow at lambda=%.6g, T=%.6f", current.lam, current.period)
                break
            continue

        branch.points.append(candidate)
        branch.events.extend(events)

        if candidate.period > settings.t_max:
            branch.events.append(
                BifurcationEvent("HOM", candidate.lam, (current.index, candidate.index), 0.0, candidate.orbit,
                                 candidate.tangent, candidate.spectrum.multipliers)
            )
            branch.status = "homoclinic"
            logger.info("Period %.1f exceeds t_max at lambda=%.6g: homoclinic approach", candidate.period, candidate.lam)
            break
        if not settings.lambda_min <= candidate.lam <= settings.lambda_max:
            branch.status = "completed"
            break
        if _closes(branch, candidate, ds):
            branch.status = "closed"
            logger.info("Branch closed after %d points", len(branch.points))
            break
        if candidate.iterations <= GROWTH_ITERATIONS:
            ds = min(ds * GROWTH_FACTOR, settings.dsmax)
    else:
        branch.status = "max_steps"

    logger.info(
        "Branch %s %s finished (%s): %d points, %d events",
        pattern.word, label, branch.status, len(branch.points), len(branch.events),
    )
    return branch


class SwitchResult(NamedTuple):
    orbit: OrbitSegment
    tangent: NDArray[np.float64]


def switch_branch(
    event: BifurcationEvent, vf: ReducedNetworkField, settings: ContinuationSettings
) -> list[SwitchResult]:
    """Orbits on the secondary branch at a branch point, one per successful direction."""
    if event.kind != "BP":
        raise ContractViolation(f"branch switching needs a BP event, got {event.kind}")
    orbit = event.orbit
    weights = arclength_weights(orbit)
    primary = event.tangent
    jac = bvp_jacobian(orbit, vf, orbit)
    _, _, vt = np.linalg.svd(jac)
    first, second = vt[-2], vt[-1]
    # combination of the two kernel vectors orthogonal to the primary tangent
    direction = _wdot(second, primary, weights) * first - _wdot(first, primary, weights) * second
    direction /= np.sqrt(_wdot(direction, direction, weights))

    origin = orbit.unknowns()
    border = weights * direction
    found = []
    for sign in (1.0, -1.0):
        eps = settings.eps_switch
        for _ in range(SWITCH_HALVINGS + 1):
            guess = origin + sign * eps * direction

            def residual(x, guess=guess):
                return np.append(bvp_residual(orbit.with_unknowns(x), vf, orbit), np.dot(border, x - guess))

            def jacobian(x):
                return np.vstack([bvp_jacobian(orbit.with_unknowns(x), vf, orbit), border[None, :]])

            try:
                result = newton(residual, jacobian, guess, settings.newton_tol, settings.max_iter)
                secondary = orbit.with_unknowns(result.x)
                tangent = tangent_vector(bvp_jacobian(secondary, vf, orbit), sign * direction, weights)
            except TorusError as exc:
                logger.warning("Switch attempt (sign %+d, eps %.1e) failed: %s", sign, eps, exc)
                eps /= 2
                continue
            overlap = min(abs(_wdot(tangent, primary, weights)), 1.0)
            if np.arccos(overlap) > SWITCH_ANGLE:
                found.append(SwitchResult(secondary, tangent))
                break
            logger.warning("Switch attempt (sign %+d, eps %.1e) fell back onto the primary branch", sign, eps)
            eps /= 2
    if not found:
        raise SwitchFailure(f"no secondary branch found at lambda={event.lam:.6g}")
    logger.info("Switched onto %d secondary direction(s) at lambda=%.6g", len(found), event.lam)
    return found


def orbit_from_seed(
    seed: SeedOrbit, sol: FirstOrderSolution, settings: ContinuationSettings, lam: float
) -> OrbitSegment:
    """Sample e_δ along the seed loop at the collocation nodes, reduced to phase differences."""
    phi_star = np.asarray(seed.fixed_point.phi, dtype=float)

    def curve(t):
        phi = phi_star + TWO_PI * np.outer(t, seed.windings)
        return reduce_phase_differences(embedding_eval(sol, phi, seed.delta, unwrapped=True))

    windings = reduce_phase_differences(seed.full_windings)
    return orbit_from_function(curve, seed.period_estimate, windings, lam, settings.ntst, settings.ncol)


def nearest_fixed_point(points, angle: float):
    return min(points, key=lambda point: _circular_gap(point.angle, angle))


def prepare_start(
    pattern: PatternSpec,
    angle: float,
    p: NetworkParams,
    q: PerturbParams,
    settings: ContinuationSettings,
    free: FreeParameter = "delta",
    lmax: int = 4,
) -> tuple[OrbitSegment, ReducedNetworkField]:
    """Seed at the reduced fixed point closest to ``angle`` and correct it in the full network."""
    sol = first_order_solution(pattern, p, q, lmax=lmax)
    fixed_point = nearest_fixed_point(reduced_fixed_points(pattern, q), angle)
    seed = build_seed_orbit(pattern, fixed_point, q, p, sol=sol)
    vf = ReducedNetworkField(p, q, free)
    lam = q.delta if free == "delta" else q.r
    corrected = newton_correct(orbit_from_seed(seed, sol, settings, lam), vf, settings)
    logger.info(
        "Seed %s at angle %.4f corrected in %d iterations: T=%.6f (estimate %.6f)",
        pattern.word, fixed_point.angle, corrected.iterations, corrected.orbit.period, seed.period_estimate,
    )
    return corrected.orbit, vf


def run_branch(
    pattern: PatternSpec,
    angle: float,
    p: NetworkParams,
    q: PerturbParams,
    settings: ContinuationSettings,
    free: FreeParameter = "delta",
    direction: int = 1,
    lmax: int = 4,
) -> Branch:
    start, vf = prepare_start(pattern, angle, p, q, settings, free, lmax)
    return continue_branch(start, vf, settings, pattern, direction, label=f"gamma_{angle:.4f}")
