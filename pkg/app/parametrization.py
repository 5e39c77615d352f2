"""First-order parametrization of the perturbed torus e_δ = E + δe₁, f_δ = Ω + δf₁.

The homological equations are solved mode by mode in Fourier space:
the normal part through the resolvent of L, the tangential part by dividing
out i⟨Ω, ℓ⟩ on nonresonant modes and keeping resonant ones in f₁.
"""
import logging
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import solve_ivp
from scipy.optimize import least_squares

from app.errors import ContractViolation, LmaxOverflow, NearSingularResolvent, SmallDivisorWarning
from app.fourier import FourierMap, Mode, sample_to_fourier, torus_grid
from app.models import NetworkParams, PerturbParams
from app.network import (
    PatternSpec,
    SymmetryFrame,
    build_frame,
    eval_full,
    eval_perturbation,
    jacobian_full,
    wrap,
)

logger = logging.getLogger(__name__)

RESONANCE_TOL = 1e-9
DEFAULT_LMAX = 4
TAIL_TOL = 1e-10
RESOLVENT_COND_LIMIT = 1e12


@dataclass(frozen=True)
class FirstOrderSolution:
    frame: SymmetryFrame
    X1: FourierMap
    Y1: FourierMap
    f1: FourierMap
    resonance_tol: float
    G1: Optional[FourierMap] = None
    U1: Optional[FourierMap] = None
    V1: Optional[FourierMap] = None

    @property
    def pattern(self) -> PatternSpec:
        return self.frame.pattern

    @cached_property
    def e1(self) -> FourierMap:
        """e₁ = R X₁ + N Y₁ as a map T^m -> R^{mn}."""
        return self.X1.apply(self.frame.R) + self.Y1.apply(self.frame.N)


def _check_lmax(q: PerturbParams, lmax: int) -> None:
    needed = max(abs(ell) for ell in q.harmonics())
    if needed > lmax:
        raise LmaxOverflow(f"perturbation has harmonics up to {needed}, lmax={lmax}")


def compute_G1(
    pattern: PatternSpec,
    p: NetworkParams,
    q: PerturbParams,
    lmax: int = DEFAULT_LMAX,
    method: Literal["analytic", "numeric"] = "analytic",
) -> FourierMap:
    """Fourier series of Z∘E: T^m -> R^{mn}."""
    pattern.check(p)
    _check_lmax(q, lmax)
    if method == "analytic":
        return _analytic_G1(pattern, q)
    if method == "numeric":
        return _numeric_G1(pattern, q, lmax)
    raise ContractViolation(f"unknown G1 construction {method!r}")


def _analytic_G1(pattern: PatternSpec, q: PerturbParams) -> FourierMap:
    # h(θ_{τ,p} - θ_{σ,k}) on E(φ) contributes h_ℓ e^{iℓ(b_{τp} - b_{σk})} at mode ℓ(e_τ - e_σ)
    base = pattern.base_point
    m, n = pattern.m, pattern.n
    size = m * n
    terms: dict[Mode, NDArray[np.complex128]] = {}
    for i in range(size):
        sigma = i // n
        for j in range(size):
            tau = j // n
            for ell, h in q.harmonics().items():
                mode = [0] * m
                mode[tau] += ell
                mode[sigma] -= ell
                coeff = terms.setdefault(tuple(mode), np.zeros(size, dtype=complex))
                coeff[i] += h * np.exp(1j * ell * (base[j] - base[i]))
    return FourierMap.from_terms(terms, m, size).pruned()


def _numeric_G1(pattern: PatternSpec, q: PerturbParams, lmax: int) -> FourierMap:
    points = 2 * lmax + 2
    grid = torus_grid(points, pattern.m)
    samples = eval_perturbation(pattern.embed(grid), q)
    fmap, tail = sample_to_fourier(samples, points, pattern.m, lmax)
    if tail > TAIL_TOL:
        raise LmaxOverflow(f"numeric G1 leaves {tail:.3e} above |l| = {lmax}")
    return fmap.pruned()


def split_rhs(G1: FourierMap, frame: SymmetryFrame) -> tuple[FourierMap, FourierMap]:
    """U₁ = R⁺πG₁ (tangential) and V₁ = N⁺(1-π)G₁ (normal)."""
    if G1.dim_range != frame.R.shape[0]:
        raise ContractViolation(f"G1 has range {G1.dim_range}, frame acts on {frame.R.shape[0]}")
    complement = np.eye(frame.pi.shape[0]) - frame.pi
    return G1.apply(frame.Rplus @ frame.pi), G1.apply(frame.Nplus @ complement)


def solve_normal(V1: FourierMap, frame: SymmetryFrame) -> FourierMap:
    """Ŷ_ℓ = (i⟨Ω,ℓ⟩ - L)⁻¹ V̂_ℓ."""
    L = frame.L
    eye = np.eye(L.shape[0])
    coeffs = np.empty_like(V1.coeffs)
    for index, (mode, rhs) in enumerate(zip(V1.modes, V1.coeffs)):
        resolvent = 1j * float(frame.Omega @ mode) * eye - L
        if np.linalg.cond(resolvent) > RESOLVENT_COND_LIMIT:
            raise NearSingularResolvent(f"resolvent at mode {tuple(mode)} is numerically singular")
        coeffs[index] = np.linalg.solve(resolvent, rhs)
    return FourierMap(V1.modes, coeffs, V1.dim_domain, V1.dim_range)


def solve_tangential(
    U1: FourierMap, frame: SymmetryFrame, resonance_tol: float = RESONANCE_TOL
) -> tuple[FourierMap, FourierMap]:
    """Split U₁ into the normal form f₁ (resonant modes) and X₁ = nonresonant Û_ℓ / (i⟨Ω,ℓ⟩)."""
    freq = U1.modes @ frame.Omega
    resonant = np.abs(freq) < resonance_tol
    close = ~resonant & (np.abs(freq) < 10.0 * resonance_tol)
    if np.any(close):
        message = f"small divisors at modes {U1.modes[close].tolist()}"
        logger.warning(message)
        warnings.warn(message, SmallDivisorWarning, stacklevel=2)

    f1 = U1.select(resonant)
    nonresonant = U1.select(~resonant)
    X1 = FourierMap(
        nonresonant.modes,
        nonresonant.coeffs / (1j * freq[~resonant])[:, None],
        U1.dim_domain,
        U1.dim_range,
    )
    return X1, f1


def first_order_solution(
    pattern: PatternSpec,
    p: NetworkParams,
    q: PerturbParams,
    lmax: int = DEFAULT_LMAX,
    resonance_tol: float = RESONANCE_TOL,
    method: Literal["analytic", "numeric"] = "analytic",
    frame: Optional[SymmetryFrame] = None,
) -> FirstOrderSolution:
    frame = frame or build_frame(pattern, p)
    G1 = compute_G1(pattern, p, q, lmax, method)
    U1, V1 = split_rhs(G1, frame)
    Y1 = solve_normal(V1, frame)
    X1, f1 = solve_tangential(U1, frame, resonance_tol)
    logger.info(
        "First-order solution %s: %d G1 modes, %d resonant, %d nonresonant",
        pattern.word, len(G1), len(f1), len(X1),
    )
    return FirstOrderSolution(frame, X1, Y1, f1, resonance_tol, G1, U1, V1)


def _embedding_unwrapped(sol: FirstOrderSolution, phi, delta: float):
    return sol.pattern.embed(phi) + delta * sol.e1(phi)


def embedding_eval(sol: FirstOrderSolution, phi, delta: float, unwrapped: bool = False):
    """e_δ(φ) = E(φ) + δ(R X₁(φ) + N Y₁(φ)), on [0, 2π) unless unwrapped."""
    theta = _embedding_unwrapped(sol, phi, delta)
    return theta if unwrapped else wrap(theta)


def embedding_jacobian(sol: FirstOrderSolution, phi, delta: float):
    """De_δ = R + δ(R DX₁ + N DY₁), shape (..., mn, m)."""
    frame = sol.frame
    dX = sol.X1.jacobian(phi)
    dY = sol.Y1.jacobian(phi)
    return frame.R + delta * (frame.R @ dX + frame.N @ dY)


def reduced_vf_eval(sol: FirstOrderSolution, phi, delta: float):
    """f_δ(φ) = Ω + δ f₁(φ)."""
    return sol.frame.Omega + delta * sol.f1(phi)


def conjugacy_residual(sol: FirstOrderSolution, phi, delta: float, p: NetworkParams, q: PerturbParams):
    """‖De_δ(φ) f_δ(φ) - F(e_δ(φ))‖₂, vectorised over leading axes of φ."""
    q = q.with_values(delta=delta)
    tangent = np.einsum("...ij,...j->...i", embedding_jacobian(sol, phi, delta), reduced_vf_eval(sol, phi, delta))
    return np.linalg.norm(tangent - eval_full(_embedding_unwrapped(sol, phi, delta), p, q), axis=-1)


def residual_sup(sol: FirstOrderSolution, delta: float, p: NetworkParams, q: PerturbParams, points: int = 16) -> float:
    grid = torus_grid(points, sol.pattern.m)
    return float(conjugacy_residual(sol, grid, delta, p, q).max())


def _signed(angles):
    return np.mod(np.asarray(angles) + np.pi, 2.0 * np.pi) - np.pi


def torus_distance(sol: FirstOrderSolution, theta, delta: float, phi_guess=None) -> tuple[float, NDArray[np.float64]]:
    """Distance from θ to e_δ(T^m) and the closest torus coordinates."""
    theta = np.asarray(theta, dtype=float)
    frame = sol.frame
    if phi_guess is None:
        phi_guess = frame.Rplus @ (theta - frame.base_point)

    def defect(phi):
        return _signed(theta - _embedding_unwrapped(sol, phi, delta))

    def defect_jac(phi):
        return -embedding_jacobian(sol, phi, delta)

    fit = least_squares(defect, np.asarray(phi_guess, dtype=float), jac=defect_jac, xtol=1e-14, ftol=1e-14, gtol=1e-14)
    return float(np.linalg.norm(fit.fun)), fit.x


def invariance_defect(
    sol: FirstOrderSolution,
    p: NetworkParams,
    q: PerturbParams,
    delta: float,
    starts,
    t_end: float = 10.0,
    samples: int = 41,
) -> float:
    """Largest distance to e_δ(T^m) of full trajectories started on it."""
    q = q.with_values(delta=delta)
    times = np.linspace(0.0, t_end, samples)
    step = times[1] - times[0]
    worst = 0.0
    for phi0 in np.atleast_2d(starts):
        theta0 = _embedding_unwrapped(sol, phi0, delta)
        run = solve_ivp(
            lambda t, y: eval_full(y, p, q),
            (0.0, t_end),
            theta0,
            method="DOP853",
            t_eval=times,
            rtol=1e-12,
            atol=1e-12,
            jac=lambda t, y: jacobian_full(y, p, q),
        )
        phi = np.asarray(phi0, dtype=float)
        for k in range(run.y.shape[1]):
            guess = phi + sol.frame.Omega * step if k else phi
            distance, phi = torus_distance(sol, run.y[:, k], delta, phi_guess=guess)
            worst = max(worst, distance)
    return worst
