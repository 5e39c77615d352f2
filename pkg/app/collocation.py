"""Orthogonal collocation of periodic boundary value problems u' = T G(u, λ) on [0, 1].

Each mesh interval carries a polynomial of degree ncol through ncol + 1
equispaced nodes (the end nodes are shared with the neighbours). The ODE is
enforced at the ncol Gauss–Legendre points of the interval, the orbit closes up
to whole windings, u(1) - u(0) = 2πk, and an integral phase condition
∫⟨u - u_old, u_old'⟩ = 0 removes the time-shift freedom.

Unknowns are packed as x = [nodes.ravel(), T, λ].
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import ClassVar, Optional, Protocol

import numpy as np
from numpy.polynomial import polynomial as P
from numpy.typing import NDArray

from app.errors import ContractViolation

TWO_PI = 2.0 * np.pi
REMESH_RATIO = 10.0


class VectorField(Protocol):
    dim: int
    free: str

    def __call__(self, u, lam: float): ...

    def jacobian(self, u, lam: float): ...

    def parameter_derivative(self, u, lam: float): ...


def _lagrange_basis(nodes: NDArray[np.float64], z) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Values and derivatives of the Lagrange polynomials of ``nodes`` at ``z``; shape (len(z), len(nodes))."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    values = np.empty((z.size, nodes.size))
    slopes = np.empty((z.size, nodes.size))
    for k, node in enumerate(nodes):
        coef = P.polyfromroots(np.delete(nodes, k))
        coef = coef / P.polyval(node, coef)
        values[:, k] = P.polyval(z, coef)
        slopes[:, k] = P.polyval(z, P.polyder(coef))
    return values, slopes


def _readonly(array) -> NDArray:
    array = np.array(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class CollocationTables:
    ncol: int
    nodes: NDArray[np.float64]
    gauss: NDArray[np.float64]
    weights: NDArray[np.float64]
    values: NDArray[np.float64]
    derivatives: NDArray[np.float64]

    def basis(self, z) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return _lagrange_basis(self.nodes, z)


@lru_cache(maxsize=None)
def collocation_tables(ncol: int) -> CollocationTables:
    """Gauss–Legendre points/weights on [0, 1] and the Lagrange tables ℓ_k(c_i), ℓ_k'(c_i)."""
    if ncol < 1:
        raise ContractViolation("ncol must be at least 1")
    x, w = np.polynomial.legendre.leggauss(ncol)
    gauss = 0.5 * (x + 1.0)
    nodes = np.linspace(0.0, 1.0, ncol + 1)
    values, derivatives = _lagrange_basis(nodes, gauss)
    return CollocationTables(
        ncol, _readonly(nodes), _readonly(gauss), _readonly(0.5 * w), _readonly(values), _readonly(derivatives)
    )


def uniform_mesh(ntst: int) -> NDArray[np.float64]:
    if ntst < 1:
        raise ContractViolation("ntst must be at least 1")
    return np.linspace(0.0, 1.0, ntst + 1)


def node_times(mesh, ncol: int) -> NDArray[np.float64]:
    mesh = np.asarray(mesh, dtype=float)
    local = np.arange(ncol) / ncol
    inner = mesh[:-1, None] + np.diff(mesh)[:, None] * local[None, :]
    return np.append(inner.ravel(), mesh[-1])


@dataclass(frozen=True)
class OrbitSegment:
    """Discretised periodic orbit: node values, period, windings and the active parameter."""

    mesh: NDArray[np.float64]
    ncol: int
    states: NDArray[np.float64]
    period: float
    windings: NDArray[np.int64]
    lam: float

    def __post_init__(self):
        mesh = np.asarray(self.mesh, dtype=float)
        if mesh.ndim != 1 or mesh.size < 2 or np.any(np.diff(mesh) <= 0):
            raise ContractViolation("mesh must be strictly increasing with at least one interval")
        if abs(mesh[0]) > 1e-14 or abs(mesh[-1] - 1.0) > 1e-14:
            raise ContractViolation("mesh must cover [0, 1]")
        states = np.asarray(self.states, dtype=float)
        ntst = mesh.size - 1
        if states.ndim != 2 or states.shape[0] != ntst * self.ncol + 1:
            raise ContractViolation(
                f"expected {ntst * self.ncol + 1} node rows for ntst={ntst}, ncol={self.ncol}, got {states.shape}"
            )
        windings = np.asarray(self.windings, dtype=np.int64)
        if windings.shape != (states.shape[1],):
            raise ContractViolation(f"windings {windings.shape} do not match dimension {states.shape[1]}")
        object.__setattr__(self, "mesh", _readonly(mesh))
        object.__setattr__(self, "states", _readonly(states))
        object.__setattr__(self, "windings", _readonly(windings))
        object.__setattr__(self, "period", float(self.period))
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def ntst(self) -> int:
        return self.mesh.size - 1

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def node_count(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> NDArray[np.float64]:
        return node_times(self.mesh, self.ncol)

    @property
    def steps(self) -> NDArray[np.float64]:
        return np.diff(self.mesh)

    @property
    def interval_index(self) -> NDArray[np.int64]:
        return np.arange(self.ntst)[:, None] * self.ncol + np.arange(self.ncol + 1)[None, :]

    def interval_states(self) -> NDArray[np.float64]:
        """Node values grouped per interval, shape (ntst, ncol + 1, dim)."""
        return self.states[self.interval_index]

    def unknowns(self) -> NDArray[np.float64]:
        return np.concatenate([self.states.ravel(), [self.period, self.lam]])

    def with_unknowns(self, x) -> "OrbitSegment":
        x = np.asarray(x, dtype=float)
        count = self.states.size
        if x.size != count + 2:
            raise ContractViolation(f"expected {count + 2} unknowns, got {x.size}")
        return OrbitSegment(self.mesh, self.ncol, x[:count].reshape(self.states.shape), x[count], self.windings, x[count + 1])

    def boundary_defect(self) -> float:
        return float(np.abs(self.states[-1] - self.states[0] - TWO_PI * self.windings).max())

    def compatible(self, other: "OrbitSegment") -> bool:
        return (
            self.ncol == other.ncol
            and self.states.shape == other.states.shape
            and np.allclose(self.mesh, other.mesh, rtol=0.0, atol=1e-14)
        )


def orbit_from_function(curve, period: float, windings, lam: float, ntst: int, ncol: int, mesh=None) -> OrbitSegment:
    """Sample ``curve(t)`` (vectorised over t in [0, 1]) at the collocation nodes."""
    mesh = uniform_mesh(ntst) if mesh is None else np.asarray(mesh, dtype=float)
    states = np.asarray(curve(node_times(mesh, ncol)), dtype=float)
    return OrbitSegment(mesh, ncol, states, period, windings, lam)


def _at_gauss(orbit: OrbitSegment) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    tables = collocation_tables(orbit.ncol)
    blocks = orbit.interval_states()
    values = np.einsum("ik,jkd->jid", tables.values, blocks)
    slopes = np.einsum("ik,jkd->jid", tables.derivatives, blocks)
    return values, slopes


def _check_reference(orbit: OrbitSegment, reference: OrbitSegment) -> None:
    if not orbit.compatible(reference):
        raise ContractViolation("phase reference must share mesh, ncol and dimension with the orbit")


def phase_condition(orbit: OrbitSegment, reference: OrbitSegment) -> float:
    """∫₀¹⟨u - u_old, u_old'⟩ dt by Gauss quadrature (the interval lengths cancel)."""
    _check_reference(orbit, reference)
    tables = collocation_tables(orbit.ncol)
    gap = np.einsum("ik,jkd->jid", tables.values, orbit.interval_states() - reference.interval_states())
    _, ref_slopes = _at_gauss(reference)
    return float(np.einsum("i,jid,jid->", tables.weights, gap, ref_slopes))


def _phase_gradient(reference: OrbitSegment) -> NDArray[np.float64]:
    tables = collocation_tables(reference.ncol)
    _, ref_slopes = _at_gauss(reference)
    per_interval = np.einsum("i,ik,jid->jkd", tables.weights, tables.values, ref_slopes)
    gradient = np.zeros_like(reference.states)
    np.add.at(gradient, reference.interval_index, per_interval)
    return gradient.ravel()


def bvp_residual(orbit: OrbitSegment, field: VectorField, reference: OrbitSegment) -> NDArray[np.float64]:
    """Collocation equations, winding boundary conditions and the phase condition, stacked."""
    if field.dim != orbit.dim:
        raise ContractViolation(f"vector field has dimension {field.dim}, orbit {orbit.dim}")
    values, slopes = _at_gauss(orbit)
    scale = orbit.steps[:, None, None] * orbit.period
    collocation = slopes - scale * field(values, orbit.lam)
    boundary = orbit.states[-1] - orbit.states[0] - TWO_PI * orbit.windings
    return np.concatenate([collocation.ravel(), boundary, [phase_condition(orbit, reference)]])


def collocation_blocks(orbit: OrbitSegment, field: VectorField) -> NDArray[np.float64]:
    """Per-interval linearised collocation blocks, shape (ntst, ncol*dim, (ncol+1)*dim)."""
    tables = collocation_tables(orbit.ncol)
    values, _ = _at_gauss(orbit)
    dg = field.jacobian(values, orbit.lam)
    d = orbit.dim
    eye = np.eye(d)
    scale = (orbit.steps * orbit.period)[:, None, None, None, None]
    blocks = (
        tables.derivatives[None, :, :, None, None] * eye
        - scale * tables.values[None, :, :, None, None] * dg[:, :, None, :, :]
    )
    # (j, i, k, a, b) -> (j, i*d + a, k*d + b)
    return blocks.transpose(0, 1, 3, 2, 4).reshape(orbit.ntst, orbit.ncol * d, (orbit.ncol + 1) * d)


def bvp_jacobian(orbit: OrbitSegment, field: VectorField, reference: OrbitSegment) -> NDArray[np.float64]:
    """Dense Jacobian of :func:`bvp_residual` with respect to [nodes, T, λ]."""
    _check_reference(orbit, reference)
    d, ncol, ntst = orbit.dim, orbit.ncol, orbit.ntst
    count = orbit.states.size
    rows = ntst * ncol * d
    jac = np.zeros((count + 1, count + 2))

    blocks = collocation_blocks(orbit, field)
    for j in range(ntst):
        start = j * ncol * d
        jac[start:start + ncol * d, start:start + (ncol + 1) * d] = blocks[j]

    values, _ = _at_gauss(orbit)
    jac[:rows, count] = -(orbit.steps[:, None, None] * field(values, orbit.lam)).ravel()
    jac[:, count + 1] = parameter_column(orbit, field)

    jac[rows:rows + d, :d] = -np.eye(d)
    jac[rows:rows + d, count - d:count] = np.eye(d)
    jac[-1, :count] = _phase_gradient(reference)
    return jac


def parameter_column(orbit: OrbitSegment, field: VectorField) -> NDArray[np.float64]:
    """Derivative of the residual with respect to λ (only the collocation rows depend on it)."""
    values, _ = _at_gauss(orbit)
    column = np.zeros(orbit.states.size + 1)
    rows = orbit.ntst * orbit.ncol * orbit.dim
    column[:rows] = -(orbit.steps[:, None, None] * orbit.period * field.parameter_derivative(values, orbit.lam)).ravel()
    return column


def interval_defects(orbit: OrbitSegment, field: VectorField) -> NDArray[np.float64]:
    """|u' - T G(u)| at interval midpoints, where collocation does not enforce it."""
    tables = collocation_tables(orbit.ncol)
    values, slopes = tables.basis([0.5])
    blocks = orbit.interval_states()
    u_mid = np.einsum("k,jkd->jd", values[0], blocks)
    du_mid = np.einsum("k,jkd->jd", slopes[0], blocks) / orbit.steps[:, None]
    return np.linalg.norm(du_mid - orbit.period * field(u_mid, orbit.lam), axis=-1)


def needs_remesh(orbit: OrbitSegment, field: VectorField) -> bool:
    defects = interval_defects(orbit, field)
    median = float(np.median(defects))
    return median > 0 and float(defects.max()) > REMESH_RATIO * median


def interpolate(orbit: OrbitSegment, t) -> NDArray[np.float64]:
    """Evaluate the piecewise collocation polynomial at times t in [0, 1]."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    interval = np.clip(np.searchsorted(orbit.mesh, t, side="right") - 1, 0, orbit.ntst - 1)
    local = (t - orbit.mesh[interval]) / orbit.steps[interval]
    values, _ = collocation_tables(orbit.ncol).basis(local)
    return np.einsum("mk,mkd->md", values, orbit.interval_states()[interval])


def remesh(orbit: OrbitSegment, mesh) -> OrbitSegment:
    return orbit_from_function(lambda t: interpolate(orbit, t), orbit.period, orbit.windings, orbit.lam, orbit.ntst, orbit.ncol, mesh=mesh)


def refined(orbit: OrbitSegment, factor: int = 2) -> OrbitSegment:
    """Split every interval into ``factor`` equal pieces."""
    pieces = orbit.mesh[:-1, None] + orbit.steps[:, None] * (np.arange(factor) / factor)[None, :]
    return remesh(orbit, np.append(pieces.ravel(), 1.0))


def equidistributed(orbit: OrbitSegment) -> OrbitSegment:
    """Mesh with equal arclength of u per interval, same ntst."""
    fine = np.linspace(0.0, 1.0, 8 * orbit.ntst * orbit.ncol + 1)
    samples = interpolate(orbit, fine)
    arclength = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(samples, axis=0), axis=1))])
    if arclength[-1] <= 0:
        return orbit
    mesh = np.interp(np.linspace(0.0, arclength[-1], orbit.ntst + 1), arclength, fine)
    mesh[0], mesh[-1] = 0.0, 1.0
    return remesh(orbit, mesh)


def monodromy(orbit: OrbitSegment, field: VectorField) -> tuple[NDArray[np.float64], float]:
    """Monodromy matrix by condensing each interval to its transfer map.

    Returns (M / s, log s): the product is rescaled after every factor to keep
    wide multiplier spreads representable.
    """
    d = orbit.dim
    product = np.eye(d)
    log_scale = 0.0
    for block in collocation_blocks(orbit, field):
        left, interior = block[:, :d], block[:, d:]
        transfer = -np.linalg.solve(interior, left)[-d:]
        product = transfer @ product
        norm = np.linalg.norm(product)
        product /= norm
        log_scale += np.log(norm)
    return product, float(log_scale)


@dataclass(frozen=True)
class FloquetSpectrum:
    multipliers: NDArray[np.complex128]
    trivial_index: int
    trivial_error: float

    @property
    def nontrivial(self) -> NDArray[np.complex128]:
        return np.delete(self.multipliers, self.trivial_index)

    @property
    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.nontrivial) < 1.0))


def floquet_spectrum(orbit: OrbitSegment, field: VectorField) -> FloquetSpectrum:
    scaled, log_scale = monodromy(orbit, field)
    multipliers = np.linalg.eigvals(scaled) * np.exp(log_scale)
    multipliers = multipliers[np.argsort(-np.abs(multipliers), kind="stable")]
    trivial = int(np.argmin(np.abs(multipliers - 1.0)))
    return FloquetSpectrum(multipliers, trivial, float(abs(multipliers[trivial] - 1.0)))


def trace_integral(orbit: OrbitSegment, field: VectorField) -> float:
    """T ∫₀¹ tr DG(u(t)) dt; exp of it is the product of the multipliers."""
    tables = collocation_tables(orbit.ncol)
    values, _ = _at_gauss(orbit)
    traces = np.trace(field.jacobian(values, orbit.lam), axis1=-2, axis2=-1)
    return float(orbit.period * np.einsum("j,i,ji->", orbit.steps, tables.weights, traces))


def quadrature_mean(orbit: OrbitSegment, samples_at_gauss) -> NDArray[np.float64]:
    """∫₀¹ of a quantity given at the Gauss points, shape (ntst, ncol, ...)."""
    tables = collocation_tables(orbit.ncol)
    return np.einsum("j,i,ji...->...", orbit.steps, tables.weights, np.asarray(samples_at_gauss))


def gauss_values(orbit: OrbitSegment) -> NDArray[np.float64]:
    return _at_gauss(orbit)[0]


@dataclass(frozen=True)
class ForcedLinearField:
    """u₁' = ω, u₂' = -a u₂ + λ cos u₁ in unscaled time.

    The periodic orbit winds once in u₁ with period 2π/ω and u₂ has a closed
    form, which makes it a convergence-order reference for the discretisation.
    """

    omega: float = 1.0
    decay: float = 1.0
    dim: ClassVar[int] = 2
    free: ClassVar[str] = "lambda"

    def __call__(self, u, lam: float):
        u = np.asarray(u, dtype=float)
        return np.stack([np.full(u.shape[:-1], self.omega), -self.decay * u[..., 1] + lam * np.cos(u[..., 0])], axis=-1)

    def jacobian(self, u, lam: float):
        u = np.asarray(u, dtype=float)
        jac = np.zeros(u.shape[:-1] + (2, 2))
        jac[..., 1, 0] = -lam * np.sin(u[..., 0])
        jac[..., 1, 1] = -self.decay
        return jac

    def parameter_derivative(self, u, lam: float):
        u = np.asarray(u, dtype=float)
        return np.stack([np.zeros(u.shape[:-1]), np.cos(u[..., 0])], axis=-1)

    @property
    def period(self) -> float:
        return TWO_PI / self.omega

    def exact(self, t, lam: float) -> NDArray[np.float64]:
        angle = TWO_PI * np.asarray(t, dtype=float)
        a, w = self.decay, self.omega
        return np.stack([angle, lam * (a * np.cos(angle) + w * np.sin(angle)) / (a**2 + w**2)], axis=-1)

    def exact_orbit(self, lam: float, ntst: int, ncol: int, mesh: Optional[NDArray[np.float64]] = None) -> OrbitSegment:
        return orbit_from_function(lambda t: self.exact(t, lam), self.period, [1, 0], lam, ntst, ncol, mesh)
