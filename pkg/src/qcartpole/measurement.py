"""Weak measurements of position and momentum.

One measurement couples the system to a Gaussian ancilla pointer and
projectively reads the pointer.  The outcome density is

    P(q) = integral |psi(a)|^2 N(q; lambda*a, sigma_ancilla^2) da

which is sampled exactly in two stages: draw an eigenvalue ``a`` from
|psi|^2 in the observable's eigenbasis, then q = lambda*a + N(0, sigma^2).
The conditioned state is the pointwise Gaussian reweighting
exp(-(q - lambda*a)^2 / (4 sigma^2)) in that eigenbasis, renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BackactionError
from .quantum import Grid, Wavefunction

POSITION = "position"
MOMENTUM = "momentum"


@dataclass(frozen=True)
class MeasurementConfig:
    coupling: float               # lambda
    ancilla_width: float          # sigma_ancilla
    observable: str = POSITION

    def __post_init__(self) -> None:
        if self.coupling <= 0 or self.ancilla_width <= 0:
            raise ValueError("coupling and ancilla width must be positive")
        if self.observable not in (POSITION, MOMENTUM):
            raise ValueError(f"unknown observable {self.observable!r}")


@dataclass(frozen=True)
class MeasurementOutcome:
    q_raw: float
    q_scaled: float


def _eigen_weights(wf: Wavefunction, observable: str):
    """(eigenvalues, |amplitude|^2 weights, spectral amplitudes or None)."""
    if observable == POSITION:
        return wf.grid.x, np.abs(wf.psi) ** 2, None
    phi = np.fft.fft(wf.psi)
    return wf.grid.p, np.abs(phi) ** 2, phi


def sample_eigenvalue(values: np.ndarray, weights: np.ndarray,
                      rng: np.random.Generator) -> float:
    cum = np.cumsum(weights)
    u = rng.random() * cum[-1]
    return float(values[min(np.searchsorted(cum, u), len(values) - 1)])


def sample_outcome(wf: Wavefunction, cfg: MeasurementConfig,
                   rng: np.random.Generator) -> MeasurementOutcome:
    """Draw one pointer value distributed exactly as P(q)."""
    values, weights, _ = _eigen_weights(wf, cfg.observable)
    alpha = sample_eigenvalue(values, weights, rng)
    q = cfg.coupling * alpha + cfg.ancilla_width * rng.standard_normal()
    return MeasurementOutcome(q_raw=q, q_scaled=q / cfg.coupling)


def backaction_kernel(values: np.ndarray, q_raw: float,
                      cfg: MeasurementConfig) -> np.ndarray:
    d = q_raw - cfg.coupling * values
    return np.exp(-(d * d) / (4.0 * cfg.ancilla_width**2))


def apply_backaction(wf: Wavefunction, q_raw: float,
                     cfg: MeasurementConfig) -> Wavefunction:
    """Condition the state on outcome ``q_raw`` and renormalize."""
    if cfg.observable == POSITION:
        psi = wf.psi * backaction_kernel(wf.grid.x, q_raw, cfg)
    else:
        phi = np.fft.fft(wf.psi)
        phi *= backaction_kernel(wf.grid.p, q_raw, cfg)
        psi = np.fft.ifft(phi)
    out = Wavefunction(wf.grid, psi)
    nrm = out.norm()
    if nrm < 1e-12:
        raise BackactionError(
            f"outcome q={q_raw:.6g} annihilated the state (norm {nrm:.3g})")
    out.psi /= nrm
    return out


def measure(wf: Wavefunction, cfg: MeasurementConfig,
            rng: np.random.Generator) -> tuple[float, Wavefunction]:
    """Sample an outcome, apply its back-action; returns the scaled estimate."""
    outcome = sample_outcome(wf, cfg, rng)
    return outcome.q_scaled, apply_backaction(wf, outcome.q_raw, cfg)


def outcome_density(wf: Wavefunction, cfg: MeasurementConfig,
                    q: np.ndarray) -> np.ndarray:
    """P(q) by direct summation over the eigenvalue lattice (oracle route)."""
    values, weights, _ = _eigen_weights(wf, cfg.observable)
    weights = weights / weights.sum()
    sig2 = cfg.ancilla_width**2
    diff = q[:, None] - cfg.coupling * values[None, :]
    gauss = np.exp(-(diff**2) / (2.0 * sig2)) / np.sqrt(2.0 * np.pi * sig2)
    return gauss @ weights
