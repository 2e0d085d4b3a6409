"""Inverted potentials for the cartpole benchmark.

Three variants share one interface: a quadratic hilltop V(x) = -k x^2 / 2,
a cosine bump V(x) = k1 (cos(pi x / k2) - 1), and an inverted quartic
V(x) = -k x^4.  All have V(0) = 0 and a local maximum at the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

QUADRATIC = "quadratic"
COSINE = "cosine"
QUARTIC = "quartic"

VARIANTS = (QUADRATIC, COSINE, QUARTIC)

# Default strength constants.  The cosine second constant is the curvature
# match k1 * pi^2 / k2^2 = k_quadratic, which puts the inflection point
# k2 / 2 ~ 7.25 just inside the default threshold.
DEFAULT_QUADRATIC_K = math.pi
DEFAULT_QUARTIC_K = math.pi / 100.0
DEFAULT_COSINE_K1 = 67.0
DEFAULT_COSINE_K2 = math.sqrt(67.0 * math.pi)


@dataclass(frozen=True)
class Potential:
    """One inverted potential with its strength constants.

    ``c2`` is only meaningful for the cosine variant (the half-period
    scale); it is zero otherwise.
    """

    kind: str
    c1: float
    c2: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in VARIANTS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.c1 <= 0:
            raise ValueError("potential strength must be positive")
        if self.kind == COSINE and self.c2 <= 0:
            raise ValueError("cosine potential needs a positive length scale")

    @staticmethod
    def quadratic(k: float = DEFAULT_QUADRATIC_K) -> "Potential":
        return Potential(QUADRATIC, k)

    @staticmethod
    def cosine(k1: float, k2: float) -> "Potential":
        """Cosine bump; both constants are mandatory."""
        return Potential(COSINE, k1, k2)

    @staticmethod
    def quartic(k: float = DEFAULT_QUARTIC_K) -> "Potential":
        return Potential(QUARTIC, k)

    def energy(self, x):
        """V(x); works on scalars and arrays."""
        if self.kind == QUADRATIC:
            return -0.5 * self.c1 * x**2
        if self.kind == COSINE:
            return self.c1 * (np.cos(math.pi * x / self.c2) - 1.0)
        return -self.c1 * x**4

    def gradient(self, x):
        """V'(x)."""
        if self.kind == QUADRATIC:
            return -self.c1 * x
        if self.kind == COSINE:
            return -self.c1 * math.pi / self.c2 * np.sin(math.pi * x / self.c2)
        return -4.0 * self.c1 * x**3

    def curvature(self, x):
        """V''(x)."""
        if self.kind == QUADRATIC:
            return -self.c1 * np.ones_like(np.asarray(x, dtype=float))
        if self.kind == COSINE:
            return -self.c1 * (math.pi / self.c2) ** 2 * np.cos(math.pi * x / self.c2)
        return -12.0 * self.c1 * x**2

    @property
    def kind_code(self) -> int:
        """Integer tag used by the compiled kernels."""
        return VARIANTS.index(self.kind)


def default_potential(kind: str) -> Potential:
    """Potential with its conventional constants; cosine uses the
    curvature-matched defaults (the core constructor keeps them mandatory)."""
    if kind == QUADRATIC:
        return Potential.quadratic()
    if kind == COSINE:
        return Potential.cosine(DEFAULT_COSINE_K1, DEFAULT_COSINE_K2)
    if kind == QUARTIC:
        return Potential.quartic()
    raise ValueError(f"unknown potential kind {kind!r}")
