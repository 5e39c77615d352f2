"""Coupled phase-oscillator populations with nonpairwise coupling.

The network has m populations of n oscillators. Phases are flat arrays of
length m*n indexed (sigma, k) row-major; every function also accepts a stack
of states with shape (..., m*n).
"""
import logging
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from numpy.typing import NDArray

from app.errors import ContractViolation, NotNormallyHyperbolic, NotRelativeEquilibrium
from app.models import NetworkParams, PerturbParams

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
TWO_PI = 2.0 * np.pi

EQUILIBRIUM_TOL = 1e-8
INVARIANCE_TOL = 1e-10
HYPERBOLICITY_TOL = 1e-8
EIGENBASIS_TOL = 1e-9
EIGENBASIS_COND = 1e6


def wrap(theta) -> FloatArray:
    """Reduce angles to [0, 2π)."""
    wrapped = np.mod(np.asarray(theta, dtype=float), TWO_PI)
    # mod can return 2π itself for tiny negative inputs
    return np.where(wrapped >= TWO_PI, 0.0, wrapped)


def phase_state(theta, p: NetworkParams) -> FloatArray:
    """Validate a PhaseState and store it on [0, 2π)."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size != p.size:
        raise ContractViolation(f"phase state needs {p.size} angles, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ContractViolation("phase state has non-finite entries")
    return wrap(theta)


@dataclass(frozen=True)
class PatternSpec:
    """Synchrony pattern: one letter per population, S synchronous, D splayed."""

    word: str
    n: int = 2

    def __post_init__(self):
        word = self.word.strip().upper()
        if not word or set(word) - {"S", "D"}:
            raise ContractViolation(f"pattern must be a word over {{S, D}}, got {self.word!r}")
        if self.n < 2:
            raise ContractViolation("populations need at least two oscillators")
        object.__setattr__(self, "word", word)

    @property
    def m(self) -> int:
        return len(self.word)

    @property
    def base_point(self) -> FloatArray:
        splay = TWO_PI * np.arange(self.n) / self.n
        blocks = [np.zeros(self.n) if letter == "S" else splay for letter in self.word]
        return np.concatenate(blocks)

    def embed(self, phi) -> FloatArray:
        """E(φ) = E(0) + Rφ, unwrapped."""
        phi = np.asarray(phi, dtype=float)
        if phi.shape[-1] != self.m:
            raise ContractViolation(f"torus point needs {self.m} angles, got {phi.shape[-1]}")
        return self.base_point + np.repeat(phi, self.n, axis=-1)

    def cyclic_image(self, shift: int = 1) -> "PatternSpec":
        word = "".join(self.word[(sigma - shift) % self.m] for sigma in range(self.m))
        return PatternSpec(word, self.n)

    def check(self, p: NetworkParams) -> None:
        if self.m != p.m or self.n != p.n:
            raise ContractViolation(
                f"pattern {self.word} (n={self.n}) does not fit a network with m={p.m}, n={p.n}"
            )


def permute_populations(theta, shift: int, m: int, n: int) -> FloatArray:
    """Relabel populations sigma -> sigma + shift (cyclic)."""
    theta = np.asarray(theta, dtype=float)
    blocks = theta.reshape(theta.shape[:-1] + (m, n))
    return np.roll(blocks, shift, axis=-2).reshape(theta.shape)


def _population_view(theta, p: NetworkParams) -> FloatArray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != p.size:
        raise ContractViolation(f"expected {p.size} phases, got {theta.shape[-1]}")
    return theta.reshape(theta.shape[:-1] + (p.m, p.n))


def _g2(x, p: NetworkParams):
    return np.sin(x + p.alpha2) - p.r0 * np.sin(2.0 * (x + p.alpha2))


def _g2_prime(x, p: NetworkParams):
    return np.cos(x + p.alpha2) - 2.0 * p.r0 * np.cos(2.0 * (x + p.alpha2))


def _g4(x, p: NetworkParams):
    return np.sin(x + p.alpha4)


def _g4_prime(x, p: NetworkParams):
    return np.cos(x + p.alpha4)


def _pair_differences(blocks: FloatArray) -> FloatArray:
    # d[..., sigma, k, j] = theta[sigma, j] - theta[sigma, k]
    return blocks[..., None, :] - blocks[..., :, None]


def _nonlocal_gain(blocks: FloatArray, p: NetworkParams) -> FloatArray:
    """K+ G4-weight of population sigma+1 minus K- weight of sigma-1.

    G4(theta_tau; phi) = |mean exp(i theta_tau)|^2 g4(phi), so only the squared
    order parameters of the neighbours enter.
    """
    rho2 = np.abs(np.exp(1j * blocks).mean(axis=-1)) ** 2
    return p.k_plus * np.roll(rho2, -1, axis=-1) - p.k_minus * np.roll(rho2, 1, axis=-1)


def eval_unperturbed(theta, p: NetworkParams) -> FloatArray:
    """H(θ): pairwise g2 coupling inside populations plus nonpairwise K± terms."""
    blocks = _population_view(theta, p)
    d = _pair_differences(blocks)
    gain = _nonlocal_gain(blocks, p)
    pairwise = _g2(d, p).sum(axis=-1) - _g2(0.0, p)
    nonpairwise = _g4(d, p).sum(axis=-1) - _g4(0.0, p)
    velocity = p.omega + pairwise + gain[..., None] * nonpairwise
    return velocity.reshape(np.shape(theta))


def jacobian_unperturbed(theta, p: NetworkParams) -> FloatArray:
    blocks = _population_view(theta, p)
    d = _pair_differences(blocks)
    gain = _nonlocal_gain(blocks, p)
    eye = np.eye(p.n)

    weights = (_g2_prime(d, p) + gain[..., None, None] * _g4_prime(d, p)) * (1.0 - eye)
    local = weights - eye * weights.sum(axis=-1)[..., None]
    nonpairwise = _g4(d, p).sum(axis=-1) - _g4(0.0, p)
    # d rho^2_tau / d theta_{tau,p}
    drho2 = (2.0 / p.n**2) * np.sin(d).sum(axis=-1)

    jac = np.zeros(blocks.shape[:-2] + (p.m, p.n, p.m, p.n))
    for sigma in range(p.m):
        up, down = (sigma + 1) % p.m, (sigma - 1) % p.m
        jac[..., sigma, :, sigma, :] += local[..., sigma, :, :]
        jac[..., sigma, :, up, :] += p.k_plus * nonpairwise[..., sigma, :, None] * drho2[..., up, None, :]
        jac[..., sigma, :, down, :] -= p.k_minus * nonpairwise[..., sigma, :, None] * drho2[..., down, None, :]
    return jac.reshape(blocks.shape[:-2] + (p.size, p.size))


def _all_differences(theta) -> FloatArray:
    theta = np.asarray(theta, dtype=float)
    # diff[..., i, j] = theta_j - theta_i
    return theta[..., None, :] - theta[..., :, None]


def eval_perturbation(theta, q: PerturbParams) -> FloatArray:
    """Z(θ): all-to-all h coupling, self-term included, oriented by ``q.orientation``."""
    return q.coupling(_all_differences(theta)).sum(axis=-1)


def jacobian_perturbation(theta, q: PerturbParams) -> FloatArray:
    slopes = q.coupling_derivative(_all_differences(theta))
    eye = np.eye(slopes.shape[-1])
    return slopes - eye * slopes.sum(axis=-1)[..., None]


def eval_full(theta, p: NetworkParams, q: PerturbParams) -> FloatArray:
    """F = H + δZ."""
    return eval_unperturbed(theta, p) + q.delta * eval_perturbation(theta, q)


def jacobian_full(theta, p: NetworkParams, q: PerturbParams) -> FloatArray:
    return jacobian_unperturbed(theta, p) + q.delta * jacobian_perturbation(theta, q)


def parameter_derivative(theta, q: PerturbParams, name: Literal["delta", "r"]) -> FloatArray:
    """∂F/∂λ for the continuation parameters."""
    if name == "delta":
        return eval_perturbation(theta, q)
    if name == "r":
        _, beta = q.lags
        return q.delta * np.sin(2.0 * (_all_differences(theta) + beta)).sum(axis=-1)
    raise ContractViolation(f"unknown continuation parameter {name!r}")


def tangent_matrix(m: int, n: int) -> NDArray[np.int64]:
    """R: column sigma is the indicator of population sigma."""
    return np.kron(np.eye(m, dtype=np.int64), np.ones((n, 1), dtype=np.int64))


def normal_matrix(m: int, n: int) -> NDArray[np.int64]:
    """N: per population, columns e_{sigma,j} - e_{sigma,0} for j = 1..n-1."""
    split = np.vstack([-np.ones((1, n - 1), dtype=np.int64), np.eye(n - 1, dtype=np.int64)])
    return np.kron(np.eye(m, dtype=np.int64), split)


def _frozen(array) -> FloatArray:
    array = np.array(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SymmetryFrame:
    pattern: PatternSpec
    R: NDArray[np.int64]
    N: NDArray[np.int64]
    Rplus: FloatArray
    Nplus: FloatArray
    pi: FloatArray
    Omega: FloatArray
    L: FloatArray
    base_point: FloatArray = field(repr=False)

    @property
    def normal_eigenvalues(self) -> NDArray[np.complex128]:
        return np.linalg.eigvals(self.L)

    @property
    def is_hyperbolic(self) -> bool:
        return bool(np.min(np.abs(self.normal_eigenvalues.real)) >= HYPERBOLICITY_TOL)

    def as_dict(self) -> dict:
        eigs = np.sort(self.normal_eigenvalues.real)
        return {
            "pattern": self.pattern.word,
            "R": self.R.tolist(),
            "N": self.N.tolist(),
            "pi": self.pi.tolist(),
            "Omega": self.Omega.tolist(),
            "L": self.L.tolist(),
            "eigenvalues": eigs.tolist(),
            "hyperbolic": self.is_hyperbolic,
        }


def normal_block_from_eigenbasis(dh, N, Nplus) -> Optional[FloatArray]:
    """L = C diag(w) C⁻¹ from the eigenvectors of DH lying in im N; None when they do not form a basis."""
    values, vectors = np.linalg.eig(dh)
    leak = np.linalg.norm(vectors - N @ (Nplus @ vectors), axis=0)
    inside = leak < EIGENBASIS_TOL
    coords = Nplus @ vectors[:, inside]
    if coords.shape != (N.shape[1], N.shape[1]) or np.linalg.cond(coords) > EIGENBASIS_COND:
        return None
    L = coords @ np.diag(values[inside]) @ np.linalg.inv(coords)
    if np.abs(L.imag).max() > EIGENBASIS_TOL:
        return None
    return L.real


def build_frame(pattern: PatternSpec, p: NetworkParams) -> SymmetryFrame:
    """Tangent/normal splitting, drift Ω and Floquet matrix L at E(0)."""
    pattern.check(p)
    R = tangent_matrix(p.m, p.n)
    N = normal_matrix(p.m, p.n)
    Rplus = np.linalg.pinv(R)
    Nplus = np.linalg.pinv(N)
    pi = R @ Rplus

    theta0 = pattern.base_point
    velocity = eval_unperturbed(theta0, p)
    off_torus = np.linalg.norm(velocity - pi @ velocity)
    if off_torus > EQUILIBRIUM_TOL:
        raise NotRelativeEquilibrium(
            f"{pattern.word}: H(E(0)) leaves the group orbit by {off_torus:.3e}"
        )
    Omega = Rplus @ velocity

    dh = jacobian_unperturbed(theta0, p)
    L = normal_block_from_eigenbasis(dh, N, Nplus)
    if L is None:
        logger.debug("Frame %s: DH(E(0)) not diagonalisable on im N, solving DH N = N L in least squares", pattern.word)
        L, *_ = np.linalg.lstsq(N, dh @ N, rcond=None)
    defect = np.linalg.norm(dh @ N - N @ L)
    if defect > INVARIANCE_TOL:
        raise NotNormallyHyperbolic(
            f"{pattern.word}: normal directions are not invariant (defect {defect:.3e})"
        )
    eigenvalues = np.linalg.eigvals(L)
    if np.min(np.abs(eigenvalues.real)) < HYPERBOLICITY_TOL:
        raise NotNormallyHyperbolic(
            f"{pattern.word}: Floquet matrix has eigenvalues near the imaginary axis {eigenvalues}"
        )

    logger.info("Frame %s: Omega=%s, normal spectrum=%s", pattern.word, np.round(Omega, 12), np.round(eigenvalues.real, 12))
    return SymmetryFrame(
        pattern=pattern,
        R=_frozen(R),
        N=_frozen(N),
        Rplus=_frozen(Rplus),
        Nplus=_frozen(Nplus),
        pi=_frozen(pi),
        Omega=_frozen(Omega),
        L=_frozen(L),
        base_point=_frozen(theta0),
    )
