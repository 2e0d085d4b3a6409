"""Linear quadratic regulator with energy-based state weights.

The control cost is zero, so the Riccati recursion divides by B'PB; the
position weight is clamped from below to keep that denominator and the
recursion well-posed where the nonlinear weights vanish (quartic flat top)
or go negative (the printed cosine form is non-positive everywhere).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GainFault
from .potentials import Potential, QUADRATIC, COSINE, QUARTIC
from .surrogate import LinearModel

EPS_W = 1e-6
RICCATI_TOL = 1e-10
RICCATI_MAX_ITER = 100_000


@dataclass(frozen=True)
class LqrWeights:
    w1: np.ndarray           # 2x2 state cost
    w2: float = 0.0          # scalar control cost


@dataclass(frozen=True)
class LqrGain:
    k: np.ndarray            # 1x2 feedback row
    p: np.ndarray            # Riccati solution
    iterations: int


def weights_for(potential: Potential, x_hat: float, mass: float, *,
                eps_w: float = EPS_W, use_state_norm: bool = False,
                w2: float = 0.0) -> LqrWeights:
    """Per-step state cost diag(position weight, 1/(2m)).

    ``x_hat`` is the position of the current estimate; ``use_state_norm``
    switches the nonlinear weights to the full state norm instead.
    """
    s = abs(x_hat)
    if potential.kind == QUADRATIC:
        pos = 0.5 * potential.c1
    elif potential.kind == COSINE:
        if s < 1e-8:
            pos = -0.5 * potential.c1 * (np.pi / potential.c2) ** 2
        else:
            pos = float(potential.energy(s)) / s**2
    else:
        pos = potential.c1 * s**2
    pos = max(pos, eps_w)
    return LqrWeights(w1=np.diag([pos, 0.5 / mass]), w2=w2)


def riccati_iterate(a: np.ndarray, b: np.ndarray, w1: np.ndarray, w2: float,
                    p0: np.ndarray | None = None, tol: float = RICCATI_TOL,
                    max_iter: int = RICCATI_MAX_ITER
                    ) -> tuple[np.ndarray, np.ndarray, int, bool]:
    """Value iteration on the discrete Riccati map; returns (P, K, n, ok)."""
    p = w1.copy() if p0 is None else p0.copy()
    bt = b.reshape(1, 2)
    for it in range(1, max_iter + 1):
        pa = p @ a
        pb = p @ b
        denom = w2 + float(b @ pb)
        if denom <= 0 or not np.isfinite(denom):
            return p, np.zeros(2), it, False
        k = (bt @ pa).ravel() / denom
        p_next = w1 + a.T @ pa - np.outer(a.T @ pb, k)
        p_next = 0.5 * (p_next + p_next.T)
        delta = np.max(np.abs(p_next - p))
        p = p_next
        if delta < tol:
            return p, k, it, True
    return p, k, max_iter, False


def solve_gain(model: LinearModel, weights: LqrWeights, *,
               p_init: np.ndarray | None = None,
               tol: float = RICCATI_TOL,
               max_iter: int = RICCATI_MAX_ITER) -> LqrGain:
    """Infinite-horizon gain via Riccati value iteration."""
    p, k, n, ok = riccati_iterate(model.a, model.b, weights.w1, weights.w2,
                                  p0=p_init, tol=tol, max_iter=max_iter)
    if not ok:
        raise GainFault(f"Riccati recursion did not converge in {n} iterations")
    return LqrGain(k=k, p=p, iterations=n)


def closed_loop_radius(model: LinearModel, gain: LqrGain) -> float:
    return float(np.max(np.abs(
        np.linalg.eigvals(model.a - np.outer(model.b, gain.k)))))


def control(gain: LqrGain, s_hat: np.ndarray, f_max: float) -> float:
    """u = clamp(-K s_hat)."""
    u = -float(gain.k @ s_hat)
    return float(np.clip(u, -f_max, f_max))


def finite_horizon_gain(a: np.ndarray, b: np.ndarray, w1: np.ndarray,
                        w2: float, horizon: int) -> np.ndarray:
    """First-step gain of the horizon-T dynamic program (oracle route)."""
    p = w1.copy()
    k = np.zeros(2)
    bt = b.reshape(1, 2)
    for _ in range(horizon):
        denom = w2 + float(b @ p @ b)
        k = (bt @ (p @ a)).ravel() / denom
        p = w1 + a.T @ p @ a - np.outer(a.T @ p @ b, k)
        p = 0.5 * (p + p.T)
    return k
