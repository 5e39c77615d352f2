"""Explicit first-order solutions for the SDD and SSD tori of the m=3, n=2 network.

Independent of the Fourier solver; used as an oracle and by the reduced
dynamics. Y coefficients are exposed in two normalisations: the one obtained
with the plain adjoint Nᵀ (``printed_*``) and the frame one with N⁺ = (NᵀN)⁻¹Nᵀ,
which is what e₁ = RX₁ + NY₁ needs.
"""
import numpy as np

from app.errors import ContractViolation
from app.fourier import FourierMap, torus_grid
from app.models import NetworkParams, PerturbParams
from app.network import PatternSpec

SUPPORTED = ("SDD", "SSD")


def _check(pattern: PatternSpec, p: NetworkParams) -> None:
    if pattern.word not in SUPPORTED or pattern.n != 2 or p.m != 3 or p.n != 2:
        raise ContractViolation(f"closed forms exist for {SUPPORTED} with m=3, n=2 only")
    if p.k_minus != p.k_plus:
        raise ContractViolation("closed forms assume K- = K+")


def _resolvent_pair(kappa: float, alpha: float) -> tuple[float, float]:
    denom = kappa**2 + 1.0
    cos_coeff = 2.0 * (np.cos(alpha) - kappa * np.sin(alpha)) / denom
    sin_coeff = 2.0 * (np.sin(alpha) + kappa * np.cos(alpha)) / denom
    return cos_coeff, sin_coeff


def sdd_constants(p: NetworkParams, q: PerturbParams) -> dict[str, float]:
    """a, b, c, d of the SDD embedding correction."""
    q = q.incoming()
    a, minus_b = _resolvent_pair(2 * p.r0 - p.k_plus, q.alpha)
    c, d = _resolvent_pair(2 * p.r0 + p.k_plus, q.alpha)
    return {"a": a, "b": -minus_b, "c": c, "d": d}


def ssd_constants(p: NetworkParams, q: PerturbParams) -> dict[str, float]:
    q = q.incoming()
    a, minus_b = _resolvent_pair(2 * p.r0, q.alpha)
    return {"a": a, "b": -minus_b}


def printed_y_coefficient(pattern: PatternSpec, p: NetworkParams, q: PerturbParams, ell: int) -> np.ndarray:
    """Y families in the Nᵀ normalisation, e.g. Y^{12}_ℓ for SDD.

    SDD returns (Y^{12}_ℓ, Y^{13}_ℓ) non-zero entries stacked as
    [population 2 entry of Y^{12}, population 3 entry of Y^{13}];
    SSD returns [population 3 entry of Y^{13} (= Y^{23})].
    """
    _check(pattern, p)
    h = q.harmonics().get(ell, 0.0)
    odd = ((-1) ** ell - 1) / -2  # 1 for odd ℓ, 0 for even
    if pattern.word == "SDD":
        kappas = (2 * p.r0 - p.k_plus, 2 * p.r0 + p.k_plus)
    else:
        kappas = (2 * p.r0,)
    return np.array([odd * -2 * (k - 1j * ell) / (k**2 + ell**2) * h for k in kappas])


def printed_normal_map(pattern: PatternSpec, p: NetworkParams, q: PerturbParams) -> FourierMap:
    """Y as a FourierMap T^3 -> C^3 in the Nᵀ normalisation."""
    _check(pattern, p)
    terms = {}
    partners = [(0, 1), (0, 2)] if pattern.word == "SDD" else [(0, 2), (1, 2)]
    for ell in q.harmonics():
        values = printed_y_coefficient(pattern, p, q, ell)
        for index, (tau, sigma) in enumerate(partners):
            mode = [0, 0, 0]
            mode[tau] += ell
            mode[sigma] -= ell
            coeff = np.zeros(3, dtype=complex)
            coeff[sigma] = values[index if pattern.word == "SDD" else 0]
            terms[tuple(mode)] = coeff
    return FourierMap.from_terms(terms, 3, 3).pruned()


def normal_map(pattern: PatternSpec, p: NetworkParams, q: PerturbParams) -> FourierMap:
    """Y₁ in the frame normalisation: (NᵀN)⁻¹ applied to the printed families."""
    return printed_normal_map(pattern, p, q).apply(0.5 * np.eye(3))


def sdd_reduced_field(phi, q: PerturbParams) -> np.ndarray:
    """f₁ for SDD."""
    phi = np.asarray(phi, dtype=float)
    q = q.incoming()
    p1, p2, p3 = phi[..., 0], phi[..., 1], phi[..., 2]
    r, beta = q.r, q.beta
    first = np.full_like(p1, 2.0 * q.coupling(0.0))
    second = 2.0 * r * (np.sin(2 * beta) + np.sin(2 * (p3 - p2 + beta)))
    third = 2.0 * r * (np.sin(2 * beta) + np.sin(2 * (p2 - p3 + beta)))
    return np.stack([first, second, third], axis=-1)


def ssd_reduced_field(phi, q: PerturbParams) -> np.ndarray:
    """f₁ for SSD: first and second harmonics of φ₂ - φ₁ both enter."""
    phi = np.asarray(phi, dtype=float)
    q = q.incoming()
    p1, p2 = phi[..., 0], phi[..., 1]
    base = 2.0 * q.coupling(0.0)
    first = base + 2.0 * q.coupling(p2 - p1)
    second = base + 2.0 * q.coupling(p1 - p2)
    third = np.full_like(p1, 2.0 * q.r * np.sin(2 * q.beta))
    return np.stack([first, second, third], axis=-1)


def sdd_psi_rate(psi, q: PerturbParams):
    """ψ̇ for ψ = φ₃ - φ₂ on the SDD torus, δ included."""
    q = q.incoming()
    return 2.0 * q.r * q.delta * (np.sin(2 * (q.beta - psi)) - np.sin(2 * (psi + q.beta)))


def sdd_psi_slope(psi, q: PerturbParams):
    q = q.incoming()
    return -8.0 * q.r * q.delta * np.cos(2 * q.beta) * np.cos(2 * psi)


def ssd_phi_rate(phi, q: PerturbParams):
    """φ̇ for φ = φ₂ - φ₁ on the SSD torus, δ included."""
    q = q.incoming()
    return -4.0 * q.delta * np.sin(phi) * (np.cos(q.alpha) + 2 * q.r * np.cos(phi) * np.cos(2 * q.beta))


def ssd_phi_slope(phi, q: PerturbParams):
    q = q.incoming()
    return -4.0 * q.delta * (
        np.cos(q.alpha) * np.cos(phi) + 2 * q.r * np.cos(2 * q.beta) * np.cos(2 * phi)
    )


def _pairs(tangential, normal) -> np.ndarray:
    # population sigma gets (X - Y, X + Y)
    columns = []
    for x, y in zip(tangential, normal):
        columns.extend([x - y, x + y])
    return np.stack(columns, axis=-1)


def sdd_embedding_correction(phi, p: NetworkParams, q: PerturbParams) -> np.ndarray:
    q = q.incoming()
    phi = np.asarray(phi, dtype=float)
    p1, p2, p3 = phi[..., 0], phi[..., 1], phi[..., 2]
    r, beta = q.r, q.beta
    k = sdd_constants(p, q)
    x1 = 0.5 * r * (np.cos(2 * (p2 - p1 + beta)) + np.cos(2 * (p3 - p1 + beta)))
    x2 = -0.5 * r * np.cos(2 * (p1 - p2 + beta))
    x3 = -0.5 * r * np.cos(2 * (p1 - p3 + beta))
    y2 = 0.5 * (k["a"] * np.cos(p1 - p2) + k["b"] * np.sin(p1 - p2))
    y3 = 0.5 * (k["c"] * np.cos(p1 - p3) - k["d"] * np.sin(p1 - p3))
    return _pairs((x1, x2, x3), (np.zeros_like(p1), y2, y3))


def ssd_embedding_correction(phi, p: NetworkParams, q: PerturbParams) -> np.ndarray:
    q = q.incoming()
    phi = np.asarray(phi, dtype=float)
    p1, p2, p3 = phi[..., 0], phi[..., 1], phi[..., 2]
    r, beta = q.r, q.beta
    k = ssd_constants(p, q)
    x1 = 0.5 * r * np.cos(2 * (p3 - p1 + beta))
    x2 = 0.5 * r * np.cos(2 * (p3 - p2 + beta))
    x3 = -0.5 * r * (np.cos(2 * (p1 - p3 + beta)) + np.cos(2 * (p2 - p3 + beta)))
    s = np.cos(p1 - p3) + np.cos(p2 - p3)
    z = np.sin(p1 - p3) + np.sin(p2 - p3)
    y3 = 0.5 * (k["a"] * s + k["b"] * z)
    return _pairs((x1, x2, x3), (np.zeros_like(p1), np.zeros_like(p1), y3))


def closed_form_f1(pattern: PatternSpec, phi, q: PerturbParams) -> np.ndarray:
    if pattern.word == "SDD":
        return sdd_reduced_field(phi, q)
    if pattern.word == "SSD":
        return ssd_reduced_field(phi, q)
    raise ContractViolation(f"no closed form for {pattern.word}")


def closed_form_e1(pattern: PatternSpec, phi, p: NetworkParams, q: PerturbParams) -> np.ndarray:
    _check(pattern, p)
    if pattern.word == "SDD":
        return sdd_embedding_correction(phi, p, q)
    return ssd_embedding_correction(phi, p, q)


def oracle_discrepancy(sol, p: NetworkParams, q: PerturbParams, points: int = 16) -> dict[str, float]:
    """Largest pointwise gap between a FirstOrderSolution and the closed forms on a grid."""
    grid = torus_grid(points, 3)
    f_gap = np.abs(sol.f1(grid) - closed_form_f1(sol.pattern, grid, q)).max()
    e_gap = np.abs(sol.e1(grid) - closed_form_e1(sol.pattern, grid, p, q)).max()
    y_gap = sol.Y1.max_difference(normal_map(sol.pattern, p, q))
    return {"f1": float(f_gap), "e1": float(e_gap), "Y1": float(y_gap), "max": float(max(f_gap, e_gap, y_gap))}
