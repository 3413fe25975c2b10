"""Problem parameters and the (psi, alpha, lambda) <-> (v, mu) conversions.

The normalized model is ``-Lap v = mu [v - 1]_+^p`` in a bounded domain with
``v = 0`` on the boundary.  The physical unknowns are recovered from ``mu`` and
the mass integral ``int [v - 1]_+^p`` through ``mu = lambda |alpha|^(p-1)`` and
``|alpha|^p int [v - 1]_+^p = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "ProblemConfig",
    "PlasmaState",
    "make_config",
    "recover_plasma_state",
    "quantization_ratio",
    "unit_ball_volume",
    "sphere_area",
]


def unit_ball_volume(N: int) -> float:
    """Volume of the unit ball in R^N."""
    return math.pi ** (N / 2) / math.gamma(N / 2 + 1)


def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere S^(N-1)."""
    return N * unit_ball_volume(N)


@dataclass(frozen=True)
class ProblemConfig:
    N: int
    p: float
    p_N: float = field(init=False)
    omega_N: float = field(init=False)
    C_N: float = field(init=False)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise ValueError(f"dimension N must be an integer >= 3, got {self.N}")
        p_N = self.N / (self.N - 2)
        if not (1.0 < self.p < p_N):
            raise ValueError(
                f"exponent p={self.p} outside the admissible window (1, {p_N:g}) "
                f"for N={self.N}"
            )
        omega = unit_ball_volume(self.N)
        object.__setattr__(self, "p_N", p_N)
        object.__setattr__(self, "omega_N", omega)
        object.__setattr__(self, "C_N", 1.0 / (self.N * (self.N - 2) * omega))

    @property
    def sphere_area(self) -> float:
        return sphere_area(self.N)

    def to_json(self) -> dict:
        return {"N": int(self.N), "p": float(self.p)}

    @classmethod
    def from_json(cls, obj: dict) -> "ProblemConfig":
        return cls(int(obj["N"]), float(obj["p"]))


def make_config(N: int, p: float) -> ProblemConfig:
    """Validated configuration; raises ``ValueError`` outside ``1 < p < N/(N-2)``."""
    return ProblemConfig(N, p)


@dataclass(frozen=True)
class PlasmaState:
    """Physical parameters recovered from a normalized solution.

    Only ``|alpha|`` enters any formula; ``alpha`` is stored non-positive.
    """

    alpha: float
    lam: float
    mu: float
    mass_integral: float

    def check(self, config: ProblemConfig, rtol: float = 1e-12) -> None:
        a = abs(self.alpha)
        mu = self.lam * a ** (config.p - 1)
        if not math.isclose(mu, self.mu, rel_tol=rtol):
            raise AssertionError(f"mu mismatch: {mu} vs {self.mu}")
        c = a ** config.p * self.mass_integral
        if not math.isclose(c, 1.0, rel_tol=rtol):
            raise AssertionError(f"integral constraint violated: {c}")


def recover_plasma_state(mu: float, mass_integral: float, config: ProblemConfig) -> PlasmaState:
    if not (mu > 0):
        raise ValueError(f"mu must be positive, got {mu}")
    if not (mass_integral > 0):
        raise ValueError(f"mass integral must be positive, got {mass_integral}")
    a = mass_integral ** (-1.0 / config.p)
    lam = mu * a ** (1.0 - config.p)
    return PlasmaState(alpha=-a, lam=lam, mu=float(mu), mass_integral=float(mass_integral))


def quantization_ratio(state: PlasmaState, config: ProblemConfig) -> float:
    """``(lambda / |alpha|^(1 - p/p_N))^(N/2)``, equal to ``mu^(N/2) int [v-1]_+^p``."""
    a = abs(state.alpha)
    return (state.lam / a ** (1.0 - config.p / config.p_N)) ** (config.N / 2)
