"""Noisy classical mimic of the quantum cartpole.

The surrogate is the linear(ized) stochastic system

    s_{t+1} = f(s_t, u_t) + w_t ,    y_t = C s_t + v_t ,

with jointly Gaussian (w_t, v_t).  The pair produced by the measurement at
slot t consists of the outcome noise v_t on y_t and the back-action w_t
that enters the *next* transition, so the stepper carries the process-noise
sample forward by one slot and the first transition of an episode is
noiseless (no measurement has happened yet).  That is exactly the structure
of the quantum system and the one the correlated-noise filter assumes.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, ConfigurationError
from .params import SimParams
from .potentials import Potential
from . import quantum
from .measurement import MeasurementConfig, MeasurementOutcome, POSITION, MOMENTUM
from . import measurement as wm

PSD_TOL = 1e-9


@dataclass
class ClassicalState:
    x: float
    p: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.p])


@dataclass
class NoiseModel:
    """Covariance triplet in scaled (state-unit) convention.

    ``q_meas`` is the measurement covariance (of v), ``r_sys`` the process
    covariance (of w), ``s_cross`` = cov(w, v).
    """

    q_meas: np.ndarray
    r_sys: np.ndarray
    s_cross: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.q_meas = np.asarray(self.q_meas, dtype=float).reshape(2, 2)
        self.r_sys = np.asarray(self.r_sys, dtype=float).reshape(2, 2)
        self.s_cross = np.asarray(self.s_cross, dtype=float).reshape(2, 2)
        for name in ("q_meas", "r_sys"):
            m = getattr(self, name)
            if not np.allclose(m, m.T, atol=1e-10):
                raise ConfigurationError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(m).min() < -PSD_TOL:
                raise ConfigurationError(f"{name} must be positive semidefinite")
        if np.linalg.eigvalsh(self.joint_cov()).min() < -PSD_TOL:
            raise ConfigurationError(
                "joint (process, measurement) covariance is not realizable")

    def joint_cov(self) -> np.ndarray:
        """4x4 covariance of (w, v)."""
        top = np.hstack([self.r_sys, self.s_cross])
        bot = np.hstack([self.s_cross.T, self.q_meas])
        return np.vstack([top, bot])

    def joint_cholesky(self) -> np.ndarray:
        j = self.joint_cov()
        jitter = max(np.trace(j), 1.0) * 1e-12
        return np.linalg.cholesky(j + jitter * np.eye(4))

    @staticmethod
    def parametric(sigma_meas: float, sigma_dyn: float = 0.05,
                   coupling: float = 0.05) -> "NoiseModel":
        """Uncorrelated model for the measurement-noise sweeps.

        ``sigma_meas`` is quoted in raw outcome units, the same convention
        as the ancilla width, so its state-unit covariance carries the
        1/coupling^2 factor (the controller-facing estimates are outcome /
        coupling).  The process disturbance is a random force: momentum
        only, per inner step, in state units.
        """
        scaled = sigma_meas / coupling
        return NoiseModel(q_meas=scaled**2 * np.eye(2),
                          r_sys=np.diag([0.0, sigma_dyn**2]),
                          s_cross=np.zeros((2, 2)),
                          meta={"kind": "parametric",
                                "sigma_meas": sigma_meas,
                                "sigma_dyn": sigma_dyn,
                                "coupling": coupling})


@dataclass
class LinearModel:
    """Discretized dynamics: Jacobian A at the origin, impulse input B,
    identity observation, plus the nonlinear step/observation maps."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    potential: Potential
    params: SimParams

    def f(self, s: np.ndarray, u: float) -> np.ndarray:
        x, p = s
        dt, m = self.params.dt, self.params.mass
        return np.array([x + p / m * dt,
                         p - self.potential.gradient(x) * dt + u])

    def h(self, s: np.ndarray) -> np.ndarray:
        return self.c @ s

    def jacobian(self, s: np.ndarray) -> np.ndarray:
        dt, m = self.params.dt, self.params.mass
        return np.array([[1.0, dt / m],
                         [-float(self.potential.curvature(s[0])) * dt, 1.0]])


def build_model(potential: Potential, params: SimParams) -> LinearModel:
    """Euler discretization of the classical dynamics and its Jacobian."""
    dt, m = params.dt, params.mass
    a = np.array([[1.0, dt / m],
                  [-float(potential.curvature(0.0)) * dt, 1.0]])
    b = np.array([0.0, 1.0])
    return LinearModel(a=a, b=b, c=np.eye(2), potential=potential,
                       params=params)


class SurrogateStepper:
    """Stateful stepper carrying the pending process-noise sample."""

    def __init__(self, model: LinearModel, noise: NoiseModel,
                 rng: np.random.Generator | np.random.RandomState):
        self.model = model
        self.noise = noise
        self.rng = rng
        self.chol = noise.joint_cholesky()
        self.pending_w = np.zeros(2)

    def reset(self) -> None:
        self.pending_w = np.zeros(2)

    def step(self, s: np.ndarray, u: float) -> tuple[np.ndarray, np.ndarray]:
        """Advance one slot; returns (s', y) with y observing s'."""
        s_next = self.model.f(s, u) + self.pending_w
        wv = self.chol @ self.rng.standard_normal(4)
        self.pending_w = wv[:2]
        y = self.model.h(s_next) + wv[2:]
        return s_next, y


def step(state: ClassicalState, u: float, model: LinearModel,
         noise: NoiseModel, rng,
         stepper: SurrogateStepper | None = None
         ) -> tuple[ClassicalState, np.ndarray]:
    """One-shot convenience wrapper around :class:`SurrogateStepper`."""
    if stepper is None:
        stepper = SurrogateStepper(model, noise, rng)
    s_next, y = stepper.step(state.as_array(), u)
    return ClassicalState(float(s_next[0]), float(s_next[1])), y


def sample_noise_pairs(noise: NoiseModel, n: int,
                       rng: np.random.Generator) -> np.ndarray:
    """n joint draws of (w, v), shape (n, 4)."""
    return rng.standard_normal((n, 4)) @ noise.joint_cholesky().T


# ---------------------------------------------------------------------------
# calibration against the quantum simulator
# ---------------------------------------------------------------------------

def calibrate_noise(potential: Potential, params: SimParams, n_steps: int,
                    rng: np.random.Generator, *,
                    grid: quantum.Grid | None = None,
                    force_scale: float = 1.0,
                    burn_in: int = 300,
                    max_episode_steps: int = 20_000) -> NoiseModel:
    """Extract the surrogate noise by driving the quantum loop with random
    forces and collecting per-step prediction and outcome residuals.

    v_t  = (x outcome - <x> at its measurement, p outcome - <p> at its
           measurement); w_t = next pre-measurement truth minus the
    deterministic one-step prediction from this one.  cov(w_t, v_t) pairs
    the slot-t outcome with the back-action it injects into the next
    transition.  Samples from the first ``burn_in`` steps of every episode
    are discarded; episodes restart on the 50% threshold condition.
    """
    if n_steps < 10_000:
        raise ConfigurationError("calibration needs at least 1e4 steps")
    grid = grid or quantum.Grid()
    if grid.half_width <= params.x_threshold:
        raise ConfigurationError("threshold must lie strictly inside the grid")
    model = build_model(potential, params)
    cfg_x = MeasurementConfig(params.coupling, params.sigma_ancilla, POSITION)
    cfg_p = MeasurementConfig(params.coupling, params.sigma_ancilla, MOMENTUM)
    half_v, kinetic = quantum._propagator_factors(grid, potential, params.dt,
                                                  params.mass)
    # random forces over the full control range; the applied per-step
    # momentum impulse is force * dt
    imp_hi = force_scale * params.f_max * params.dt

    ws, vs = [], []
    total = 0
    n_episodes = 0
    while total < n_steps:
        n_episodes += 1
        wf = quantum.init_wavepacket(grid, params, rng)
        psi = wf.psi
        prev_pre = None
        prev_v = None
        step_idx = 0
        while total < n_steps and step_idx < max_episode_steps:
            u = float(rng.uniform(-imp_hi, imp_hi))
            psi = psi * np.exp(1j * u * grid.x)        # kick: <p> += u
            psi = quantum.evolve_psi(psi, half_v, kinetic)
            x_pre, _ = quantum.x_moments(grid, psi)
            p_pre, _ = quantum.p_moments(grid, psi)
            # position measurement
            alpha = wm.sample_eigenvalue(grid.x, np.abs(psi) ** 2, rng)
            qx = params.coupling * alpha + params.sigma_ancilla * rng.standard_normal()
            psi = psi * wm.backaction_kernel(grid.x, qx, cfg_x)
            psi /= math.sqrt(np.sum(np.abs(psi) ** 2) * grid.dx)
            # momentum measurement (pre-truth taken after the x back-action)
            phi = np.fft.fft(psi)
            wgt = np.abs(phi) ** 2
            p_mid = float(np.dot(wgt, grid.p) / wgt.sum())
            beta = wm.sample_eigenvalue(grid.p, wgt, rng)
            qp = params.coupling * beta + params.sigma_ancilla * rng.standard_normal()
            phi *= wm.backaction_kernel(grid.p, qp, cfg_p)
            psi = np.fft.ifft(phi)
            psi /= math.sqrt(np.sum(np.abs(psi) ** 2) * grid.dx)

            v_cur = np.array([qx / params.coupling - x_pre,
                              qp / params.coupling - p_mid])
            if prev_pre is not None and step_idx >= burn_in:
                w = np.array([x_pre, p_pre]) - model.f(prev_pre, u)
                ws.append(w)
                vs.append(prev_v)
                total += 1
            prev_pre = np.array([x_pre, p_pre])
            prev_v = v_cur
            step_idx += 1
            if quantum.prob_outside_arr(grid, psi, params.x_threshold) >= 0.5:
                break

    if total < 1_000:
        raise CalibrationError(
            f"only {total} retained samples (need >= 1000); episodes too "
            "short for the transient guard")
    w_arr = np.asarray(ws)
    v_arr = np.asarray(vs)
    joint = np.cov(np.hstack([w_arr, v_arr]).T)
    noise = NoiseModel(q_meas=joint[2:, 2:], r_sys=joint[:2, :2],
                       s_cross=joint[:2, 2:],
                       meta={"kind": "calibrated",
                             "potential": potential.kind,
                             "n_samples": int(total),
                             "n_episodes": int(n_episodes),
                             "force_scale": force_scale,
                             "burn_in": burn_in})
    return noise


# ---------------------------------------------------------------------------
# versioned plain-text serialization
# ---------------------------------------------------------------------------

FORMAT_TAG = "qcartpole-noise/1"
_MAT_FIELDS = ("q_meas", "r_sys", "s_cross")


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def noise_to_text(noise: NoiseModel, model: LinearModel | None = None) -> str:
    lines = [f"format = {FORMAT_TAG}"]
    for key in sorted(noise.meta):
        lines.append(f"meta.{key} = {noise.meta[key]}")
    for name in _MAT_FIELDS:
        m = getattr(noise, name)
        for i in range(2):
            for j in range(2):
                lines.append(f"{name}.{i}{j} = {_fmt(m[i, j])}")
    if model is not None:
        for name, m in (("a", model.a), ("c", model.c)):
            for i in range(2):
                for j in range(2):
                    lines.append(f"model.{name}.{i}{j} = {_fmt(m[i, j])}")
        for i in range(2):
            lines.append(f"model.b.{i} = {_fmt(model.b[i])}")
    return "\n".join(lines) + "\n"


def noise_from_text(text: str) -> NoiseModel:
    fields: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"bad line in noise file: {line!r}")
        key, _, val = line.partition("=")
        fields[key.strip()] = val.strip()
    if fields.get("format") != FORMAT_TAG:
        raise ConfigurationError(
            f"unsupported noise format {fields.get('format')!r}")
    mats = {}
    for name in _MAT_FIELDS:
        m = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                key = f"{name}.{i}{j}"
                if key not in fields:
                    raise ConfigurationError(f"missing {key} in noise file")
                m[i, j] = float(fields[key])
        mats[name] = m
    meta = {k[5:]: v for k, v in fields.items() if k.startswith("meta.")}
    return NoiseModel(meta=meta, **mats)


def save_noise(path, noise: NoiseModel, model: LinearModel | None = None) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(noise_to_text(noise, model))


def load_noise(path) -> NoiseModel:
    with open(path, encoding="ascii") as fh:
        return noise_from_text(fh.read())


def noise_digest(noise: NoiseModel) -> str:
    body = "|".join(_fmt(v) for name in _MAT_FIELDS
                    for v in getattr(noise, name).ravel())
    return hashlib.sha256(body.encode()).hexdigest()[:16]
