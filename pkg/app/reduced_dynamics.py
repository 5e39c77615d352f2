"""Effective one-dimensional dynamics on the perturbed SDD and SSD tori, and seed orbits."""
import logging
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from app.closed_forms import sdd_psi_rate, sdd_psi_slope, ssd_phi_rate, ssd_phi_slope
from app.errors import ContractViolation, NeutralSeed, StepFailure
from app.models import NetworkParams, PerturbParams
from app.network import PatternSpec, TWO_PI, wrap
from app.parametrization import FirstOrderSolution, embedding_eval, first_order_solution, reduced_vf_eval

logger = logging.getLogger(__name__)

Stability = Literal["stable", "unstable", "neutral"]

DEGENERATE_TOL = 1e-10
NEUTRAL_SLOPE_TOL = 1e-12
SCAN_POINTS = 1024


@dataclass(frozen=True)
class ReducedFixedPoint:
    pattern: str
    angle: float
    stability: Stability
    eigenvalue: float
    phi: tuple[float, ...]

    def as_dict(self) -> dict:
        return {
            "pattern": self.pattern,
            "angle": self.angle,
            "stability": self.stability,
            "eigenvalue": self.eigenvalue,
            "phi": list(self.phi),
        }


def _classify(slope: float) -> Stability:
    if abs(slope) < NEUTRAL_SLOPE_TOL:
        return "neutral"
    return "stable" if slope < 0 else "unstable"


def _require_positive(q: PerturbParams) -> None:
    if q.r <= 0 or q.delta <= 0:
        raise ContractViolation("reduced fixed points need r > 0 and delta > 0")


def is_degenerate(points: list[ReducedFixedPoint]) -> bool:
    return bool(points) and all(point.stability == "neutral" for point in points)


def sdd_critical_beta(k: int = 0) -> float:
    """β* = π/4 + kπ/2, where the SDD normal form vanishes identically."""
    return np.pi / 4 + k * np.pi / 2


def sdd_fixed_points(q: PerturbParams) -> list[ReducedFixedPoint]:
    """Zeros of ψ̇ on [0, 2π) with ψ = φ₃ - φ₂."""
    _require_positive(q)
    q = q.incoming()
    angles = np.pi / 2 * np.arange(4)
    if abs(np.cos(2 * q.beta)) < DEGENERATE_TOL:
        logger.info("SDD normal form is degenerate at beta=%.6f: torus foliated by neutral orbits", q.beta)
        return [ReducedFixedPoint("SDD", float(psi), "neutral", 0.0, (0.0, 0.0, float(psi))) for psi in angles]
    points = []
    for psi in angles:
        slope = float(sdd_psi_slope(psi, q))
        points.append(ReducedFixedPoint("SDD", float(psi), _classify(slope), slope, (0.0, 0.0, float(psi))))
    return points


def ssd_rho(q: PerturbParams) -> float:
    """ρ = cos α / (2r cos 2β); the extra SSD fixed points exist for |ρ| < 1."""
    q = q.incoming()
    denom = 2 * q.r * np.cos(2 * q.beta)
    if abs(denom) < DEGENERATE_TOL:
        return float("nan") if abs(np.cos(q.alpha)) < DEGENERATE_TOL else float(np.copysign(np.inf, np.cos(q.alpha)))
    return float(np.cos(q.alpha) / denom)


def ssd_fixed_points(q: PerturbParams) -> list[ReducedFixedPoint]:
    """Zeros of φ̇ on [0, 2π) with φ = φ₂ - φ₁."""
    _require_positive(q)
    q = q.incoming()
    if abs(q.r * np.cos(2 * q.beta)) < DEGENERATE_TOL and abs(np.cos(q.alpha)) < DEGENERATE_TOL:
        logger.info("SSD normal form is degenerate: phi-dot vanishes identically")
        return [ReducedFixedPoint("SSD", float(phi), "neutral", 0.0, (0.0, float(phi), 0.0)) for phi in (0.0, np.pi)]

    angles = [0.0, np.pi]
    rho = ssd_rho(q)
    if abs(rho) < 1.0:
        branch = float(np.arccos(-rho))
        angles.extend([branch, float(wrap(-branch))])
    elif abs(abs(rho) - 1.0) < DEGENERATE_TOL:
        logger.info("SSD pitchfork: |rho| = 1 at phi = %s", "pi" if rho > 0 else "0")

    points = []
    for phi in sorted(set(round(a, 15) for a in angles)):
        slope = float(ssd_phi_slope(phi, q))
        points.append(ReducedFixedPoint("SSD", float(phi), _classify(slope), slope, (0.0, float(phi), 0.0)))
    return points


def reduced_fixed_points(pattern: PatternSpec, q: PerturbParams) -> list[ReducedFixedPoint]:
    if pattern.word == "SDD":
        return sdd_fixed_points(q)
    if pattern.word == "SSD":
        return ssd_fixed_points(q)
    raise ContractViolation(f"no reduced normal form for pattern {pattern.word}")


def scan_zeros(rate: Callable[[NDArray[np.float64]], NDArray[np.float64]], points: int = SCAN_POINTS) -> list[float]:
    """Roots of a 2π-periodic rate by bracketing on a uniform grid plus Brent refinement."""
    grid = np.linspace(0.0, TWO_PI, points + 1)
    values = rate(grid)
    roots = []
    for left, right, f_left, f_right in zip(grid[:-1], grid[1:], values[:-1], values[1:]):
        if f_left == 0.0:
            roots.append(float(left))
        elif f_left * f_right < 0:
            roots.append(float(brentq(lambda x: float(rate(np.array(x))), left, right, xtol=1e-14)))
    return roots


def reduced_rate(pattern: PatternSpec, q: PerturbParams) -> Callable[[NDArray[np.float64]], NDArray[np.float64]]:
    """Rate of the resonant angle (ψ for SDD, φ for SSD) as a function of that angle."""
    if pattern.word == "SDD":
        return lambda angle: sdd_psi_rate(angle, q)
    if pattern.word == "SSD":
        return lambda angle: ssd_phi_rate(angle, q)
    raise ContractViolation(f"no reduced normal form for pattern {pattern.word}")


def scanned_angles(pattern: PatternSpec, q: PerturbParams, points: int = SCAN_POINTS) -> list[float]:
    """Fixed-point angles found numerically, independent of the closed-form list."""
    return scan_zeros(reduced_rate(pattern, q), points)


@dataclass(frozen=True)
class SeedOrbit:
    """Closed loop φ(s) = φ* + 2πls on T^m and its image under e_δ."""

    pattern: PatternSpec
    fixed_point: ReducedFixedPoint
    s: NDArray[np.float64]
    curve: NDArray[np.float64]
    windings: NDArray[np.int64]
    period_estimate: float
    full_state_curve: NDArray[np.float64]
    full_windings: NDArray[np.int64]
    delta: float


def seed_windings(Omega) -> tuple[NDArray[np.int64], int]:
    """Windings l of one resonant cycle relative to population 1, and the reference fast index."""
    relative = np.asarray(Omega, dtype=float) - Omega[0]
    scale = np.abs(relative).max()
    if scale < DEGENERATE_TOL:
        raise ContractViolation("all populations drift together; no resonant cycle to seed")
    ratios = relative / scale
    windings = np.rint(ratios).astype(np.int64)
    if np.abs(ratios - windings).max() > 1e-8:
        raise ContractViolation(f"drift ratios {ratios} are not integer; seed needs a closed cycle")
    return windings, int(np.argmax(np.abs(windings)))


def build_seed_orbit(
    pattern: PatternSpec,
    fixed_point: ReducedFixedPoint,
    q: PerturbParams,
    p: NetworkParams,
    sol: Optional[FirstOrderSolution] = None,
    s=None,
) -> SeedOrbit:
    """Freeze the resonant angles at the fixed point and run the fast ones through one cycle."""
    if fixed_point.stability == "neutral":
        raise NeutralSeed(f"fixed point at angle {fixed_point.angle} is neutral")
    sol = sol or first_order_solution(pattern, p, q)
    s = np.linspace(0.0, 1.0, 201) if s is None else np.asarray(s, dtype=float)

    windings, fast = seed_windings(sol.frame.Omega)
    phi_star = np.asarray(fixed_point.phi, dtype=float)
    rates = reduced_vf_eval(sol, phi_star, q.delta)
    nu = rates[fast] - rates[0]
    period = TWO_PI * abs(windings[fast]) / abs(nu)

    curve = phi_star + TWO_PI * np.outer(s, windings)
    theta = embedding_eval(sol, curve, q.delta, unwrapped=True)
    full_windings = np.repeat(windings, pattern.n)
    logger.info(
        "Seed %s at angle %.6f: windings %s, period %.6f, delta %.4g",
        pattern.word, fixed_point.angle, windings.tolist(), period, q.delta,
    )
    return SeedOrbit(pattern, fixed_point, s, curve, windings, float(period), theta, full_windings, q.delta)


@dataclass(frozen=True)
class ReducedTrajectory:
    t: NDArray[np.float64]
    phi: NDArray[np.float64]


def integrate_reduced(
    sol: FirstOrderSolution,
    phi0,
    t_span: tuple[float, float],
    delta: float,
    tol: float = 1e-9,
    t_eval=None,
) -> ReducedTrajectory:
    """Adaptive embedded Runge-Kutta integration of φ̇ = f_δ(φ), phases unwrapped."""
    if tol <= 0:
        raise ContractViolation("integration tolerance must be positive")
    run = solve_ivp(
        lambda t, phi: reduced_vf_eval(sol, phi, delta),
        t_span,
        np.asarray(phi0, dtype=float),
        method="RK45",
        rtol=tol,
        atol=tol,
        t_eval=t_eval,
    )
    if not run.success:
        raise StepFailure(f"reduced integration failed: {run.message}")
    return ReducedTrajectory(run.t, run.y.T)


def displaced_start(point: ReducedFixedPoint, offset: float) -> NDArray[np.float64]:
    """Torus angles next to a fixed point, shifted along its resonant combination."""
    phi = np.asarray(point.phi, dtype=float).copy()
    phi[2 if point.pattern == "SDD" else 1] += offset
    return phi
