"""Kalman filtering: plain, correlated-noise (decorrelation transform),
and extended variants, plus the exact compounding of the linear model over
an inner measurement block.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, EstimatorFault
from .params import SimParams
from .potentials import Potential
from .surrogate import LinearModel, NoiseModel


@dataclass
class EstimatorState:
    s_hat: np.ndarray        # a-posteriori mean, shape (2,)
    cov: np.ndarray          # a-posteriori covariance, shape (2, 2)


def default_prior(params: SimParams) -> EstimatorState:
    # diag(sigma_system^2, <p^2>_init): the known initialization spread
    return EstimatorState(np.zeros(2),
                          np.diag([params.sigma_system**2, 0.1]))


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def _solve_innovation(s_cov: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    det = s_cov[0, 0] * s_cov[1, 1] - s_cov[0, 1] * s_cov[1, 0]
    if not np.isfinite(det) or abs(det) < 1e-300:
        raise EstimatorFault("singular innovation covariance")
    return np.linalg.solve(s_cov, rhs)


def kf_step(est: EstimatorState, y: np.ndarray, u: float, model: LinearModel,
            noise: NoiseModel) -> tuple[EstimatorState, np.ndarray, np.ndarray]:
    """Predict/update; returns (state, innovation, prediction error).

    The prediction error e = y - C A s_hat_prev is the quantity the
    learned-estimator reward is built from, deliberately without the B u
    term or the nonlinear map.
    """
    a, b, c = model.a, model.b, model.c
    e_pred = y - c @ (a @ est.s_hat)
    s_pred = a @ est.s_hat + b * u
    p_pred = a @ est.cov @ a.T + noise.r_sys
    z = y - c @ s_pred
    s_cov = c @ p_pred @ c.T + noise.q_meas
    gain = _solve_innovation(s_cov, (p_pred @ c.T).T).T
    s_new = s_pred + gain @ z
    p_new = _symmetrize((np.eye(2) - gain @ c) @ p_pred)
    return EstimatorState(s_new, p_new), z, e_pred


@dataclass
class DecorrelatedModel:
    """Transformed system with cross-covariance removed.

    T = S R^-1 (R the measurement covariance); A* = A - T C;
    Q* = Q_process - S R^-1 S^T.  The transformed prediction consumes the
    previous measurement as a known input: s_pred = A* s + B u + T y_prev.
    """

    t_mat: np.ndarray
    a_star: np.ndarray
    q_star: np.ndarray
    model: LinearModel
    noise: NoiseModel


def decorrelate(model: LinearModel, noise: NoiseModel) -> DecorrelatedModel:
    r_meas = noise.q_meas
    det = r_meas[0, 0] * r_meas[1, 1] - r_meas[0, 1] * r_meas[1, 0]
    if not np.isfinite(det) or abs(det) < 1e-300:
        raise ConfigurationError("measurement covariance is singular")
    t_mat = np.linalg.solve(r_meas.T, noise.s_cross.T).T   # S R^-1
    a_star = model.a - t_mat @ model.c
    q_star = _symmetrize(noise.r_sys - t_mat @ noise.s_cross.T)
    return DecorrelatedModel(t_mat=t_mat, a_star=a_star, q_star=q_star,
                             model=model, noise=noise)


def kf_decorr_step(est: EstimatorState, y: np.ndarray, u: float,
                   y_prev: np.ndarray | None, dm: DecorrelatedModel
                   ) -> tuple[EstimatorState, np.ndarray, np.ndarray]:
    """Correlated-noise Kalman step.

    With no previous measurement (episode start) the transition noise is
    not yet correlated with anything and the plain prediction is used.
    """
    model, noise = dm.model, dm.noise
    a, b, c = model.a, model.b, model.c
    e_pred = y - c @ (a @ est.s_hat)
    if y_prev is None:
        s_pred = a @ est.s_hat + b * u
        p_pred = a @ est.cov @ a.T + noise.r_sys
    else:
        s_pred = dm.a_star @ est.s_hat + b * u + dm.t_mat @ y_prev
        p_pred = dm.a_star @ est.cov @ dm.a_star.T + dm.q_star
    z = y - c @ s_pred
    s_cov = c @ p_pred @ c.T + noise.q_meas
    gain = _solve_innovation(s_cov, (p_pred @ c.T).T).T
    s_new = s_pred + gain @ z
    p_new = _symmetrize((np.eye(2) - gain @ c) @ p_pred)
    return EstimatorState(s_new, p_new), z, e_pred


def ekf_step(est: EstimatorState, y: np.ndarray, u: float,
             model: LinearModel, noise: NoiseModel, n_inner: int = 1,
             use_dynamics_for_error: bool = False
             ) -> tuple[EstimatorState, np.ndarray, np.ndarray]:
    """Extended Kalman step, relinearizing along the predicted path.

    The prediction iterates the nonlinear map over the ``n_inner`` steps of
    one measurement block (force held constant), accumulating process noise
    through the local Jacobians; h is the identity.
    """
    c = model.c
    if use_dynamics_for_error:
        e_ref = model.f(est.s_hat, u)
        for _ in range(n_inner - 1):
            e_ref = model.f(e_ref, u)
        e_pred = y - c @ e_ref
    else:
        e_pred = y - c @ (model.a @ est.s_hat)
    s_pred = est.s_hat.copy()
    p_pred = est.cov.copy()
    for _ in range(n_inner):
        a_t = model.jacobian(s_pred)
        p_pred = a_t @ p_pred @ a_t.T + noise.r_sys
        s_pred = model.f(s_pred, u)
    z = y - c @ s_pred
    s_cov = c @ p_pred @ c.T + noise.q_meas / n_inner
    gain = _solve_innovation(s_cov, (p_pred @ c.T).T).T
    s_new = s_pred + gain @ z
    p_new = _symmetrize((np.eye(2) - gain @ c) @ p_pred)
    return EstimatorState(s_new, p_new), z, e_pred


def compound_block(model: LinearModel, noise: NoiseModel, n_meas: int,
                   scale_meas_by_n: bool = True
                   ) -> tuple[LinearModel, NoiseModel]:
    """Exactly compound the linear model over one block of ``n_meas`` inner
    steps with a held force, and give the averaged measurement its reduced
    covariance.

    A_eff = A^n;  B_eff = sum_j A^j B;  R_eff = sum_j A^j R A^jT;
    S_eff = n^-1 sum_j A^(n-1-j) S;  Q_eff = Q / n (if enabled).
    """
    if n_meas < 1:
        raise ConfigurationError("n_meas must be >= 1")
    if n_meas == 1:
        return model, noise
    a = model.a
    powers = [np.eye(2)]
    for _ in range(n_meas):
        powers.append(a @ powers[-1])
    a_eff, b_eff = compound_linear(a, model.b, n_meas)
    r_eff = sum(powers[j] @ noise.r_sys @ powers[j].T for j in range(n_meas))
    s_eff = sum(powers[n_meas - 1 - j] @ noise.s_cross
                for j in range(n_meas)) / n_meas
    q_eff = noise.q_meas / n_meas if scale_meas_by_n else noise.q_meas
    model_eff = replace(model, a=a_eff, b=b_eff)
    noise_eff = NoiseModel(q_meas=q_eff, r_sys=_symmetrize(np.asarray(r_eff)),
                           s_cross=np.asarray(s_eff),
                           meta=dict(noise.meta, compounded=n_meas))
    return model_eff, noise_eff


def compound_linear(a: np.ndarray, b: np.ndarray, n_meas: int
                    ) -> tuple[np.ndarray, np.ndarray]:
    """(A^n, sum_j A^j B): one held-force measurement block as a single
    transition."""
    a_eff = np.eye(2)
    b_eff = np.zeros(2)
    for _ in range(n_meas):
        b_eff = a @ b_eff + b
        a_eff = a @ a_eff
    return a_eff, b_eff
