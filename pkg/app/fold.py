"""Two-parameter continuation of saddle-node curves of periodic orbits in (r, δ).

The fold is followed through the extended system

    R(x; r, δ) = 0,   R_x(x; r, δ) φ = 0,   ⟨φ_ref, φ⟩ = 1,

with x = (orbit nodes, T). The second derivative R_xx[φ, ·] is taken as a
central difference of R_x along φ, which is exact to O(ε²) because the
bilinear form is symmetric.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from app.collocation import OrbitSegment, bvp_jacobian, bvp_residual, parameter_column
from app.continuation import (
    GROWTH_FACTOR,
    GROWTH_ITERATIONS,
    BifurcationEvent,
    ReducedNetworkField,
    newton,
    tangent_vector,
)
from app.errors import (
    ContractViolation,
    ExtendedSingular,
    NoConvergence,
    SingularJacobian,
)
from app.models import ContinuationSettings

logger = logging.getLogger(__name__)

FD_STEP = 1e-6


@dataclass(frozen=True)
class FoldPoint:
    index: int
    r: float
    delta: float
    orbit: OrbitSegment
    tangent: NDArray[np.float64]
    iterations: int = 0

    @property
    def period(self) -> float:
        return self.orbit.period

    @property
    def parameter_direction(self) -> NDArray[np.float64]:
        plane = self.tangent[-2:]
        return plane / max(np.linalg.norm(plane), 1e-300)


@dataclass
class FoldCurve:
    points: list[FoldPoint] = field(default_factory=list)
    cusps: list[tuple[float, float]] = field(default_factory=list)
    endpoints: list[tuple[float, float, str]] = field(default_factory=list)
    status: str = "running"

    def parameters(self) -> NDArray[np.float64]:
        """Rows (r, δ)."""
        return np.array([[point.r, point.delta] for point in self.points])


class FoldSystem:
    """Extended system packed as y = [x, φ, r, δ] with x = [nodes, T]."""

    def __init__(self, template: OrbitSegment, base: ReducedNetworkField, phi_ref: NDArray[np.float64]):
        self.template = template
        self.base = base if base.free == "delta" else ReducedNetworkField(base.network, base.perturb, "delta")
        self.phi_ref = phi_ref
        self.n = template.states.size + 1

    def split(self, y):
        n = self.n
        return y[:n], y[n:2 * n], y[2 * n], y[2 * n + 1]

    def orbit(self, x, delta: float) -> OrbitSegment:
        return self.template.with_unknowns(np.append(x, delta))

    def _field(self, r: float) -> ReducedNetworkField:
        return self.base.with_perturb(r=r)

    def _jx(self, x, r: float, delta: float, reference: OrbitSegment):
        return bvp_jacobian(self.orbit(x, delta), self._field(r), reference)[:, :self.n]

    def residual(self, y, reference: OrbitSegment):
        x, phi, r, delta = self.split(y)
        orbit = self.orbit(x, delta)
        vf = self._field(r)
        jx = bvp_jacobian(orbit, vf, reference)[:, :self.n]
        return np.concatenate([bvp_residual(orbit, vf, reference), jx @ phi, [self.phi_ref @ phi - 1.0]])

    def jacobian(self, y, reference: OrbitSegment):
        x, phi, r, delta = self.split(y)
        n = self.n
        orbit = self.orbit(x, delta)
        vf = self._field(r)
        full = bvp_jacobian(orbit, vf, reference)
        jx = full[:, :n]
        d_delta = full[:, n]
        r_field = ReducedNetworkField(vf.network, vf.params(delta), "r")
        d_r = parameter_column(self.template.with_unknowns(np.append(x, r)), r_field)

        eps = FD_STEP / max(np.abs(phi).max(), 1.0)
        second = (self._jx(x + eps * phi, r, delta, reference) - self._jx(x - eps * phi, r, delta, reference)) / (2 * eps)
        dr_phi = (self._jx(x, r + FD_STEP, delta, reference) - self._jx(x, r - FD_STEP, delta, reference)) @ phi / (2 * FD_STEP)
        dd_phi = (self._jx(x, r, delta + FD_STEP, reference) - self._jx(x, r, delta - FD_STEP, reference)) @ phi / (2 * FD_STEP)

        jac = np.zeros((2 * n + 1, 2 * n + 2))
        jac[:n, :n] = jx
        jac[:n, 2 * n] = d_r
        jac[:n, 2 * n + 1] = d_delta
        jac[n:2 * n, :n] = second
        jac[n:2 * n, n:2 * n] = jx
        jac[n:2 * n, 2 * n] = dr_phi
        jac[n:2 * n, 2 * n + 1] = dd_phi
        jac[-1, n:2 * n] = self.phi_ref
        return jac

    def weights(self) -> NDArray[np.float64]:
        # the null vector does not take part in the arclength
        weights = np.zeros(2 * self.n + 2)
        weights[:self.n - 1] = 1.0 / self.template.node_count
        weights[self.n - 1] = 1.0
        weights[-2:] = 1.0
        return weights


def _fold_start(event: BifurcationEvent, base: ReducedNetworkField) -> tuple[OrbitSegment, float, float, NDArray[np.float64]]:
    if event.kind != "SN":
        raise ContractViolation(f"fold continuation needs an SN event, got {event.kind}")
    if event.tangent is None:
        raise ContractViolation("SN event carries no tangent to seed the null vector")
    if base.free == "delta":
        delta, r = event.lam, base.perturb.r
    else:
        delta, r = base.perturb.delta, event.lam
    orbit = event.orbit.with_unknowns(np.append(event.orbit.unknowns()[:-1], delta))
    phi = np.array(event.tangent[:-1], dtype=float)
    phi /= np.linalg.norm(phi)
    return orbit, r, delta, phi


def _in_range(point: FoldPoint, settings: ContinuationSettings) -> bool:
    low, high = settings.lambda_min, settings.lambda_max
    return low <= point.r <= high and low <= point.delta <= high


def continue_fold(
    event: BifurcationEvent,
    base: ReducedNetworkField,
    settings: ContinuationSettings,
    direction: int = -1,
) -> FoldCurve:
    """Follow the fold through (r, δ); ``direction`` orients the initial step in δ."""
    template, r0, delta0, phi0 = _fold_start(event, base)
    system = FoldSystem(template, base, phi0)
    weights = system.weights()
    y = np.concatenate([template.unknowns()[:-1], phi0, [r0, delta0]])
    # the parameter the branch held fixed stays pinned while the fold is refined
    pinned = 2 * system.n if base.free == "delta" else 2 * system.n + 1
    pin = np.zeros_like(y)
    pin[pinned] = 1.0
    target = y[pinned]

    try:
        y = newton(
            lambda v: np.append(system.residual(v, template), v[pinned] - target),
            lambda v: np.vstack([system.jacobian(v, template), pin[None, :]]),
            y,
            settings.newton_tol,
            settings.max_iter,
        ).x
        previous = np.zeros_like(y)
        previous[-1] = float(direction)
        tangent = tangent_vector(system.jacobian(y, template), previous, weights)
    except (NoConvergence, SingularJacobian) as exc:
        raise ExtendedSingular(f"fold system at (r, delta)=({r0:.6g}, {delta0:.6g}) is not regular: {exc}") from exc

    curve = FoldCurve()
    x, _, r, delta = system.split(y)
    curve.points.append(FoldPoint(0, r, delta, system.orbit(x, delta), tangent))
    logger.info("Fold curve starts at r=%.6g, delta=%.6g", r, delta)

    ds = settings.ds
    while len(curve.points) <= settings.max_steps:
        current = curve.points[-1]
        reference = current.orbit
        origin = np.concatenate([reference.unknowns()[:-1], system.split(y)[1], [current.r, current.delta]])
        predicted = origin + ds * current.tangent
        border = weights * current.tangent
        try:
            result = newton(
                lambda v: np.append(system.residual(v, reference), border @ (v - predicted)),
                lambda v: np.vstack([system.jacobian(v, reference), border[None, :]]),
                predicted,
                settings.newton_tol,
                settings.max_iter,
            )
            tangent = tangent_vector(system.jacobian(result.x, reference), current.tangent, weights)
        except (NoConvergence, SingularJacobian) as exc:
            ds /= 2
            logger.debug("Fold step rejected (%s); ds=%.3e", exc, ds)
            if ds < settings.dsmin:
                curve.status = "underflow"
                curve.endpoints.append((current.r, current.delta, "underflow"))
                logger.info("Fold curve terminates at r=%.6g, delta=%.6g", current.r, current.delta)
                break
            continue

        y = result.x
        x, _, r, delta = system.split(y)
        point = FoldPoint(current.index + 1, r, delta, system.orbit(x, delta), tangent, result.iterations)
        if float(point.parameter_direction @ current.parameter_direction) < 0:
            cusp = (0.5 * (r + current.r), 0.5 * (delta + current.delta))
            curve.cusps.append(cusp)
            logger.info("Cusp on fold curve near r=%.6g, delta=%.6g", *cusp)
        curve.points.append(point)

        if not _in_range(point, settings):
            curve.status = "completed"
            curve.endpoints.append((r, delta, "range"))
            break
        if result.iterations <= GROWTH_ITERATIONS:
            ds = min(ds * GROWTH_FACTOR, settings.dsmax)
    else:
        curve.status = "max_steps"

    logger.info("Fold curve finished (%s): %d points, %d cusps", curve.status, len(curve.points), len(curve.cusps))
    return curve


def fit_exponent(curve: FoldCurve, delta_range: tuple[float, float], points: Optional[NDArray[np.float64]] = None) -> float:
    """Slope of log r against log δ over the points with δ in ``delta_range``."""
    params = curve.parameters() if points is None else np.asarray(points, dtype=float)
    low, high = delta_range
    mask = (params[:, 1] >= low) & (params[:, 1] <= high) & (params[:, 0] > 0)
    if np.count_nonzero(mask) < 3:
        raise ContractViolation(f"need at least 3 fold points with delta in {delta_range}")
    slope, _ = np.polyfit(np.log(params[mask, 1]), np.log(params[mask, 0]), 1)
    return float(slope)
