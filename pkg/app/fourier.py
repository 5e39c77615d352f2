"""Sparse multi-index Fourier series for maps T^m -> C^k."""
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from app.errors import ContractViolation

PRUNE_TOL = 1e-14

Mode = tuple[int, ...]


def _as_mode(mode: Iterable[int]) -> Mode:
    return tuple(int(x) for x in mode)


@dataclass(frozen=True)
class FourierMap:
    """Σ_ℓ c_ℓ exp(i⟨ℓ, φ⟩) with modes ℓ stored row-wise and c_ℓ in C^k."""

    modes: NDArray[np.int64]
    coeffs: NDArray[np.complex128]
    dim_domain: int
    dim_range: int

    def __post_init__(self):
        modes = np.asarray(self.modes, dtype=np.int64).reshape(-1, self.dim_domain)
        coeffs = np.asarray(self.coeffs, dtype=np.complex128).reshape(-1, self.dim_range)
        if modes.shape[0] != coeffs.shape[0]:
            raise ContractViolation("FourierMap needs one coefficient vector per mode")
        modes.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_terms(cls, terms: Mapping[Mode, Sequence[complex]], dim_domain: int, dim_range: int) -> "FourierMap":
        ordered = sorted((_as_mode(mode), np.asarray(c, dtype=complex)) for mode, c in terms.items())
        if not ordered:
            return cls.zero(dim_domain, dim_range)
        modes = np.array([mode for mode, _ in ordered], dtype=np.int64)
        coeffs = np.array([c for _, c in ordered], dtype=np.complex128)
        return cls(modes, coeffs, dim_domain, dim_range)

    @classmethod
    def zero(cls, dim_domain: int, dim_range: int) -> "FourierMap":
        return cls(np.zeros((0, dim_domain), dtype=np.int64), np.zeros((0, dim_range)), dim_domain, dim_range)

    def __len__(self) -> int:
        return self.modes.shape[0]

    def terms(self) -> dict[Mode, NDArray[np.complex128]]:
        return {_as_mode(mode): c for mode, c in zip(self.modes, self.coeffs)}

    def coefficient(self, mode: Iterable[int]) -> NDArray[np.complex128]:
        return self.terms().get(_as_mode(mode), np.zeros(self.dim_range, dtype=complex))

    @property
    def max_order(self) -> int:
        return int(np.abs(self.modes).max()) if len(self) else 0

    def evaluate_complex(self, phi) -> NDArray[np.complex128]:
        phi = np.asarray(phi, dtype=float)
        if phi.shape[-1] != self.dim_domain:
            raise ContractViolation(f"expected {self.dim_domain} torus angles, got {phi.shape[-1]}")
        waves = np.exp(1j * (phi @ self.modes.T))
        return waves @ self.coeffs

    def __call__(self, phi) -> NDArray[np.float64]:
        return self.evaluate_complex(phi).real

    def jacobian(self, phi) -> NDArray[np.float64]:
        """Derivative matrix of shape (..., k, m), from iℓ multiplication."""
        phi = np.asarray(phi, dtype=float)
        waves = np.exp(1j * (phi @ self.modes.T))
        return np.einsum("...q,qa,qb->...ab", waves, self.coeffs, 1j * self.modes).real

    def directional(self, omega) -> "FourierMap":
        """∂_Ω: multiply each mode by i⟨Ω, ℓ⟩."""
        factor = 1j * (self.modes @ np.asarray(omega, dtype=float))
        return self._with(self.coeffs * factor[:, None])

    def apply(self, matrix) -> "FourierMap":
        matrix = np.asarray(matrix)
        if matrix.shape[1] != self.dim_range:
            raise ContractViolation(f"matrix {matrix.shape} does not act on C^{self.dim_range}")
        return FourierMap(self.modes, self.coeffs @ matrix.T, self.dim_domain, matrix.shape[0])

    def select(self, mask) -> "FourierMap":
        mask = np.asarray(mask, dtype=bool)
        return FourierMap(self.modes[mask], self.coeffs[mask], self.dim_domain, self.dim_range)

    def pruned(self, tol: float = PRUNE_TOL) -> "FourierMap":
        keep = np.abs(self.coeffs).max(axis=1, initial=0.0) > tol if len(self) else np.zeros(0, dtype=bool)
        return self.select(keep)

    def _with(self, coeffs) -> "FourierMap":
        return FourierMap(self.modes, coeffs, self.dim_domain, self.dim_range)

    def __add__(self, other: "FourierMap") -> "FourierMap":
        if (other.dim_domain, other.dim_range) != (self.dim_domain, self.dim_range):
            raise ContractViolation("cannot add Fourier maps of different shapes")
        terms = self.terms()
        for mode, c in other.terms().items():
            terms[mode] = terms.get(mode, 0.0) + c
        return FourierMap.from_terms(terms, self.dim_domain, self.dim_range)

    def __neg__(self) -> "FourierMap":
        return self._with(-self.coeffs)

    def __sub__(self, other: "FourierMap") -> "FourierMap":
        return self + (-other)

    def max_difference(self, other: "FourierMap") -> float:
        diff = (self - other).coeffs
        return float(np.abs(diff).max()) if diff.size else 0.0

    def reality_defect(self) -> float:
        """max |c(-ℓ) - conj(c(ℓ))| over the stored modes."""
        terms = self.terms()
        worst = 0.0
        for mode, c in terms.items():
            mirror = terms.get(tuple(-x for x in mode), np.zeros(self.dim_range, dtype=complex))
            worst = max(worst, float(np.abs(mirror - np.conj(c)).max(initial=0.0)))
        return worst

    def to_json_entries(self, tol: float = PRUNE_TOL) -> list[dict]:
        kept = self.pruned(tol)
        return [
            {"l": [int(x) for x in mode], "re": c.real.tolist(), "im": c.imag.tolist()}
            for mode, c in zip(kept.modes, kept.coeffs)
        ]

    @classmethod
    def from_json_entries(cls, entries: list[dict], dim_domain: int, dim_range: int) -> "FourierMap":
        terms = {}
        for entry in entries:
            if len(entry["l"]) != dim_domain or len(entry["re"]) != dim_range:
                raise ContractViolation(f"malformed Fourier entry {entry}")
            terms[_as_mode(entry["l"])] = np.asarray(entry["re"]) + 1j * np.asarray(entry["im"])
        return cls.from_terms(terms, dim_domain, dim_range)


def torus_grid(points_per_axis: int, dim: int) -> NDArray[np.float64]:
    """Uniform grid on T^dim with shape (points**dim, dim), C order."""
    axis = 2.0 * np.pi * np.arange(points_per_axis) / points_per_axis
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def sample_to_fourier(samples, points_per_axis: int, dim_domain: int, lmax: int) -> tuple[FourierMap, float]:
    """Plain DFT of grid samples (shape (points**m, k)).

    Returns the modes with |ℓ|_∞ <= lmax and the largest coefficient outside
    that box (the truncated tail).
    """
    samples = np.asarray(samples)
    dim_range = samples.shape[-1]
    cube = samples.reshape((points_per_axis,) * dim_domain + (dim_range,))
    spectrum = np.fft.fftn(cube, axes=tuple(range(dim_domain))) / points_per_axis**dim_domain

    freqs = np.fft.fftfreq(points_per_axis, d=1.0 / points_per_axis).astype(np.int64)
    index = np.stack(np.meshgrid(*([freqs] * dim_domain), indexing="ij"), axis=-1).reshape(-1, dim_domain)
    flat = spectrum.reshape(-1, dim_range)
    inside = np.abs(index).max(axis=1) <= lmax
    tail = float(np.abs(flat[~inside]).max(initial=0.0))
    fmap = FourierMap(index[inside], flat[inside], dim_domain, dim_range)
    return fmap, tail
