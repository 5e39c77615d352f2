import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class NetworkParams(BaseModel):
    """Constants of the unperturbed network of m populations of n oscillators."""

    model_config = ConfigDict(frozen=True)

    m: int = Field(default=3, ge=2)
    n: int = Field(default=2, ge=2)
    omega: float = -1.0
    alpha2: float = math.pi / 2
    alpha4: float = math.pi
    k_minus: float = Field(default=0.4, gt=0.0)
    k_plus: float = Field(default=0.4, gt=0.0)
    r0: float = 0.1

    @property
    def size(self) -> int:
        return self.m * self.n


class PerturbParams(BaseModel):
    """Biharmonic all-to-all perturbation h(φ) = sin(φ+α) + r sin(2(φ+β)) with strength δ.

    ``orientation`` fixes the argument of h in Z_{σ,k}: ``incoming`` sums
    h(θ_{l,m} - θ_{σ,k}), ``outgoing`` sums h(θ_{σ,k} - θ_{l,m}). An outgoing
    coupling with lags (α, β) is the incoming one with (π - α, π/2 - β).
    """

    model_config = ConfigDict(frozen=True)

    alpha: float = math.pi / 2
    beta: float = math.pi / 2
    r: float = 0.2
    delta: float = Field(default=0.01, ge=0.0)
    orientation: Literal["incoming", "outgoing"] = "incoming"

    def with_values(self, **updates) -> "PerturbParams":
        return PerturbParams(**{**self.model_dump(), **updates})

    @property
    def lags(self) -> tuple[float, float]:
        """(α, β) of the equivalent incoming coupling."""
        if self.orientation == "outgoing":
            return math.pi - self.alpha, math.pi / 2 - self.beta
        return self.alpha, self.beta

    def incoming(self) -> "PerturbParams":
        if self.orientation == "incoming":
            return self
        alpha, beta = self.lags
        return self.with_values(alpha=alpha, beta=beta, orientation="incoming")

    def coupling(self, x):
        alpha, beta = self.lags
        return np.sin(x + alpha) + self.r * np.sin(2.0 * (x + beta))

    def coupling_derivative(self, x):
        alpha, beta = self.lags
        return np.cos(x + alpha) + 2.0 * self.r * np.cos(2.0 * (x + beta))

    def harmonics(self) -> dict[int, complex]:
        alpha, beta = self.lags
        h1 = np.exp(1j * alpha) / 2j
        h2 = self.r * np.exp(2j * beta) / 2j
        return {1: complex(h1), -1: complex(np.conj(h1)), 2: complex(h2), -2: complex(np.conj(h2))}


class ContinuationSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    ds: float = Field(default=0.01, gt=0.0)
    dsmin: float = Field(default=1e-5, gt=0.0)
    dsmax: float = Field(default=0.05, gt=0.0)
    ntst: int = Field(default=50, ge=2)
    ncol: int = Field(default=4, ge=1, le=7)
    newton_tol: float = Field(default=1e-10, gt=0.0)
    max_iter: int = Field(default=12, ge=1)
    localization_tol: float = Field(default=1e-5, gt=0.0)
    t_max: float = Field(default=200.0, gt=0.0)
    lambda_min: float = 0.0
    lambda_max: float = 0.5
    max_steps: int = Field(default=2000, ge=1)
    eps_switch: float = Field(default=1e-3, gt=0.0)
    trivial_tol: float = Field(default=1e-3, gt=0.0)

    @model_validator(mode="after")
    def check_ranges(self) -> "ContinuationSettings":
        if not self.lambda_min < self.lambda_max:
            raise ValueError("lambda range must be nonempty (lambda_min < lambda_max)")
        if not self.dsmin <= self.ds <= self.dsmax:
            raise ValueError("step sizes must satisfy dsmin <= ds <= dsmax")
        return self


class RunConfig(BaseModel):
    command: str = "frame"
    network: NetworkParams = NetworkParams()
    perturb: PerturbParams = PerturbParams()
    pattern: str = "SDD"
    settings: ContinuationSettings = ContinuationSettings()
    free: Literal["delta", "r"] = "delta"
    angles: list[float] = [math.pi / 2]
    lmax: int = Field(default=4, ge=1)
    resonance_tol: float = Field(default=1e-9, gt=0.0)
    output_dir: str = "output"
    workers: int = Field(default=1, ge=1)

    @field_validator("pattern")
    @classmethod
    def check_letters(cls, value: str) -> str:
        word = value.strip().upper()
        if not word or set(word) - {"S", "D"}:
            raise ValueError(f"pattern must be a word over {{S, D}}, got {value!r}")
        return word

    @model_validator(mode="after")
    def check_pattern_length(self) -> "RunConfig":
        if len(self.pattern) != self.network.m:
            raise ValueError(f"pattern {self.pattern} needs {self.network.m} letters")
        return self


class FrameRequest(BaseModel):
    pattern: str = "SDD"
    network: NetworkParams = NetworkParams()


class FrameResponse(BaseModel):
    pattern: str
    R: list[list[float]]
    N: list[list[float]]
    pi: list[list[float]]
    Omega: list[float]
    L: list[list[float]]
    eigenvalues: list[float]
    hyperbolic: bool


class NormalFormRequest(BaseModel):
    pattern: str = "SDD"
    network: NetworkParams = NetworkParams()
    perturb: PerturbParams = PerturbParams()
    lmax: int = Field(default=4, ge=1)


class NormalFormResponse(BaseModel):
    pattern: str
    f1: list[dict]
    e1: list[dict]
    discrepancy: Optional[dict[str, float]] = None
    warnings: list[str] = []


class FixedPointRequest(BaseModel):
    pattern: str = "SDD"
    perturb: PerturbParams = PerturbParams()


class FixedPointResponse(BaseModel):
    pattern: str
    points: list[dict]
    degenerate: bool
