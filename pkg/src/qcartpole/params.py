"""Simulation parameters in natural units (hbar = 1)."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class SimParams:
    """Environment parametrization; defaults are the benchmark values.

    ``sigma_p_init`` is the standard deviation of the uniform initial
    momentum draw (support half-width sigma_p_init * sqrt(3)).
    """

    dt: float = 0.01 / math.pi
    mass: float = 1.0 / math.pi
    coupling: float = 0.05          # measurement coupling lambda
    sigma_system: float = 1.0       # initial wavepacket position width
    sigma_ancilla: float = 0.7      # ancilla pointer width
    sigma_p_init: float = 0.1
    x_threshold: float = 8.0
    f_max: float = 8.0 * math.pi

    def __post_init__(self) -> None:
        for name in ("dt", "mass", "coupling", "sigma_system", "sigma_ancilla",
                     "sigma_p_init", "x_threshold", "f_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def with_(self, **kwargs) -> "SimParams":
        return replace(self, **kwargs)
