"""The control loop: force, evolve, measure (times N_meas), estimate, act.

One outer iteration holds the force constant over ``n_meas`` inner steps,
averages the scaled measurement outcomes into (x_est, p_est), feeds them
to the estimator (if any) and asks the controller for the next force.  The
first outer iteration applies no force since nothing has been measured
yet.  Termination is checked every inner step; the termination time counts
inner steps.

Classical episodes with built-in controllers run through the compiled
kernel; the stepwise :class:`EpisodeRunner` below is the generic path used
for the quantum system, traced runs, and external-agent sessions.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import estimators as est
from . import kernels
from . import lqr as lqr_mod
from . import measurement as wm
from . import quantum
from .errors import BackactionError, ConfigurationError
from .params import SimParams
from .potentials import Potential, QUADRATIC
from .surrogate import LinearModel, NoiseModel, build_model

SYSTEM_QUANTUM = "quantum"
SYSTEM_CLASSICAL = "classical"

CONTROLLERS = ("lqr", "random", "zero", "external")
ESTIMATORS = ("none", "kf", "kf-decorr", "ekf", "external")

TERMINATED_THRESHOLD = "threshold"
TERMINATED_MAX_STEPS = "max_steps"

_CTRL_CODE = {"zero": kernels.CTRL_ZERO, "random": kernels.CTRL_RANDOM,
              "lqr": kernels.CTRL_LQR}
_EST_CODE = {"none": kernels.EST_RAW, "kf": kernels.EST_KF,
             "kf-decorr": kernels.EST_KF_DECORR, "ekf": kernels.EST_EKF}


@dataclass(frozen=True)
class ControllerBinding:
    """Which controller/estimator drive the loop and at what cadence."""

    controller: str = "lqr"
    estimator: str = "kf"
    n_meas: int = 1
    max_steps: int = 10_000
    random_scale: float = 1.0        # random controller force range / f_max
    scale_meas_by_n: bool = True     # averaged-measurement covariance / n
    obs_source: str = "raw"          # external agents: raw | estimate | both
    use_dynamics_for_error: bool = False

    def __post_init__(self) -> None:
        if self.controller not in CONTROLLERS:
            raise ConfigurationError(f"unknown controller {self.controller!r}")
        if self.estimator not in ESTIMATORS:
            raise ConfigurationError(f"unknown estimator {self.estimator!r}")
        if self.n_meas < 1 or self.max_steps < 1:
            raise ConfigurationError("n_meas and max_steps must be >= 1")
        if self.obs_source not in ("raw", "estimate", "both"):
            raise ConfigurationError(f"bad obs_source {self.obs_source!r}")


@dataclass
class EpisodeTrace:
    x_mean: np.ndarray       # per inner step (truth)
    p_mean: np.ndarray
    meas_x: np.ndarray       # per inner step (scaled outcomes)
    meas_p: np.ndarray
    force: np.ndarray        # per completed outer block
    y: np.ndarray            # (n_outer, 2) averaged measurements
    s_hat: np.ndarray        # (n_outer, 2) posterior estimates
    n_meas: int


@dataclass
class EpisodeResult:
    t_termination: int
    terminated_by: str
    seed: int
    n_outer: int
    trace: EpisodeTrace | None = None


@dataclass
class BatchSummary:
    episodes: int
    mean: float
    median: float
    stderr: float
    censored_fraction: float
    aborts: int
    t_terminations: np.ndarray

    def row(self) -> dict:
        return {"episodes": self.episodes, "mean_t": self.mean,
                "median_t": self.median, "stderr_t": self.stderr,
                "censored_fraction": self.censored_fraction,
                "aborts": self.aborts}


def _as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


# ---------------------------------------------------------------------------
# systems
# ---------------------------------------------------------------------------

class _QuantumEngine:
    """Raw-array quantum loop internals for one episode."""

    def __init__(self, grid: quantum.Grid, potential: Potential,
                 params: SimParams, rng: np.random.Generator):
        if grid.half_width <= params.x_threshold:
            raise ConfigurationError("threshold must lie inside the grid")
        self.grid = grid
        self.params = params
        self.rng = rng
        self.half_v, self.kinetic = quantum._propagator_factors(
            grid, potential, params.dt, params.mass)
        self.coupling = params.coupling
        self.sigma_a = params.sigma_ancilla
        self._kick_u = None
        self._kick_phase = None
        self.psi = None

    def reset(self) -> None:
        wf = quantum.init_wavepacket(self.grid, self.params, self.rng)
        self.psi = wf.psi

    def kick_evolve(self, u: float) -> None:
        """Apply the control impulse (<p> += u) then one Strang step."""
        if u != 0.0:
            if u != self._kick_u:
                self._kick_u = u
                self._kick_phase = np.exp(1j * u * self.grid.x)
            self.psi = self.psi * self._kick_phase
        self.psi = quantum.evolve_psi(self.psi, self.half_v, self.kinetic)

    def _renorm(self, psi: np.ndarray) -> np.ndarray:
        nrm2 = float(np.sum(np.abs(psi) ** 2)) * self.grid.dx
        if nrm2 < 1e-24:
            raise BackactionError("measurement annihilated the state")
        return psi / math.sqrt(nrm2)

    def measure_x(self) -> float:
        g = self.grid
        weights = np.abs(self.psi) ** 2
        alpha = wm.sample_eigenvalue(g.x, weights, self.rng)
        q = self.coupling * alpha + self.sigma_a * self.rng.standard_normal()
        d = q - self.coupling * g.x
        self.psi = self._renorm(self.psi * np.exp(-(d * d) / (4 * self.sigma_a**2)))
        return q / self.coupling

    def measure_p(self) -> float:
        g = self.grid
        phi = np.fft.fft(self.psi)
        weights = np.abs(phi) ** 2
        beta = wm.sample_eigenvalue(g.p, weights, self.rng)
        q = self.coupling * beta + self.sigma_a * self.rng.standard_normal()
        d = q - self.coupling * g.p
        phi *= np.exp(-(d * d) / (4 * self.sigma_a**2))
        self.psi = self._renorm(np.fft.ifft(phi))
        return q / self.coupling

    def truth(self) -> tuple[float, float]:
        xm, _ = quantum.x_moments(self.grid, self.psi)
        pm, _ = quantum.p_moments(self.grid, self.psi)
        return xm, pm

    def failed(self) -> bool:
        return quantum.prob_outside_arr(
            self.grid, self.psi, self.params.x_threshold) >= 0.5


class _ClassicalEngine:
    """Object-level surrogate mirror of the compiled kernel (used by
    external-agent sessions and as a cross-check)."""

    def __init__(self, model: LinearModel, noise: NoiseModel,
                 params: SimParams, rng):
        self.model = model
        self.noise = noise
        self.params = params
        self.rng = rng
        self.chol = noise.joint_cholesky()
        self.s = np.zeros(2)
        self.pending_w = np.zeros(2)
        self._y = np.zeros(2)

    def reset(self) -> None:
        half = self.params.sigma_p_init * math.sqrt(3.0)
        self.s = np.array([0.0, float(self.rng.uniform(-half, half))])
        self.pending_w[:] = 0.0

    def kick_evolve(self, u: float) -> None:
        self.s = self.model.f(self.s, u) + self.pending_w
        wv = self.chol @ self.rng.standard_normal(4)
        self.pending_w = wv[:2]
        self._y = self.model.h(self.s) + wv[2:]

    def measure_x(self) -> float:
        return float(self._y[0])

    def measure_p(self) -> float:
        return float(self._y[1])

    def truth(self) -> tuple[float, float]:
        return float(self.s[0]), float(self.s[1])

    def failed(self) -> bool:
        return abs(self.s[0]) > self.params.x_threshold


# ---------------------------------------------------------------------------
# estimator / controller bindings for the generic loop
# ---------------------------------------------------------------------------

class _EstimatorBinding:
    def __init__(self, kind: str, model: LinearModel, noise: NoiseModel | None,
                 params: SimParams, binding: ControllerBinding):
        self.kind = kind
        self.n_meas = binding.n_meas
        self.use_f_error = binding.use_dynamics_for_error
        self.state = est.default_prior(params)
        self.last_innovation = np.zeros(2)
        self.last_error = np.zeros(2)
        self.y_prev: np.ndarray | None = None
        if kind == "none":
            self.model_eff = model
            return
        if noise is None:
            raise ConfigurationError("estimator needs a noise model")
        self.model_raw = model
        self.noise_raw = noise
        self.model_eff, self.noise_eff = est.compound_block(
            model, noise, binding.n_meas, binding.scale_meas_by_n)
        if kind == "kf-decorr":
            self.dm = est.decorrelate(self.model_eff, self.noise_eff)

    def update(self, y: np.ndarray, u: float) -> np.ndarray:
        if self.kind == "none":
            self.last_error = y - self.model_eff.c @ (self.model_eff.a @ y)
            return y
        if self.kind == "kf":
            self.state, z, e = est.kf_step(self.state, y, u, self.model_eff,
                                           self.noise_eff)
        elif self.kind == "kf-decorr":
            self.state, z, e = est.kf_decorr_step(self.state, y, u,
                                                  self.y_prev, self.dm)
        elif self.kind == "ekf":
            self.state, z, e = est.ekf_step(self.state, y, u, self.model_raw,
                                            self.noise_raw, self.n_meas,
                                            self.use_f_error)
        else:
            raise ConfigurationError(f"estimator {self.kind!r} is not internal")
        self.y_prev = y
        self.last_innovation = z
        self.last_error = e
        return self.state.s_hat


class _LqrController:
    """Gain synthesis at the decision cadence.

    The force is held over the n_meas inner steps of a block, so the gain
    is solved on the block-compounded transition (A^n, sum A^j B); with a
    per-step model the near-deadbeat zero-control-cost gain applied n times
    overcorrects and destabilizes every n >= 3.
    """

    def __init__(self, model: LinearModel, potential: Potential,
                 params: SimParams, n_meas: int = 1):
        self.model = model
        self.potential = potential
        self.params = params
        self.n_meas = n_meas
        self.relinearize = potential.kind != QUADRATIC
        a_eff, b_eff = est.compound_linear(model.a, model.b, n_meas)
        self.block_model = replace(model, a=a_eff, b=b_eff)
        w = lqr_mod.weights_for(potential, 0.0, params.mass)
        gain = lqr_mod.solve_gain(self.block_model, w)  # GainFault at setup
        self.gain = gain
        self._p_warm = gain.p

    def force(self, s_hat: np.ndarray) -> float:
        """Force in [-f_max, f_max]; the gain acts on impulses, so the
        commanded impulse is converted back to a force for the clamp."""
        if self.relinearize:
            w = lqr_mod.weights_for(self.potential, float(s_hat[0]),
                                    self.params.mass)
            a_eff, b_eff = est.compound_linear(self.model.jacobian(s_hat),
                                               self.model.b, self.n_meas)
            p, k, _, ok = lqr_mod.riccati_iterate(
                a_eff, b_eff, w.w1, w.w2, p0=self._p_warm)
            if ok:
                self._p_warm = p
                self.gain = lqr_mod.LqrGain(k=k, p=p, iterations=0)
            # otherwise keep the previous block's gain
        force_gain = lqr_mod.LqrGain(k=self.gain.k / self.params.dt,
                                     p=self.gain.p,
                                     iterations=self.gain.iterations)
        return lqr_mod.control(force_gain, s_hat, self.params.f_max)


# ---------------------------------------------------------------------------
# the stepwise loop
# ---------------------------------------------------------------------------

@dataclass
class StepResult:
    obs: dict
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class EpisodeRunner:
    """Stepwise episode: reset() then repeated external actions.

    ``mode="controller"`` expects a force per step; ``mode="estimator"``
    expects a state-estimate increment and drives the force internally
    (random by default).  All internal bindings of :func:`run_episode` are
    built on this same loop.
    """

    def __init__(self, system: str, potential: Potential, params: SimParams,
                 binding: ControllerBinding, noise: NoiseModel | None = None,
                 *, grid: quantum.Grid | None = None, seed=0,
                 mode: str = "controller", env_controller: str = "random",
                 trace: bool = False, record_truth: bool = False):
        if system not in (SYSTEM_QUANTUM, SYSTEM_CLASSICAL):
            raise ConfigurationError(f"unknown system {system!r}")
        if system == SYSTEM_CLASSICAL and noise is None:
            raise ConfigurationError("classical system requires a noise model")
        self.system = system
        self.potential = potential
        self.params = params
        self.binding = binding
        self.noise = noise
        self.mode = mode
        self.env_controller = env_controller
        self.trace_enabled = trace
        self.record_truth = record_truth or trace
        self.model = build_model(potential, params)
        self.seed_seq = _as_seed_sequence(seed)
        self.rng = np.random.Generator(np.random.PCG64(self.seed_seq))
        if system == SYSTEM_QUANTUM:
            self.engine = _QuantumEngine(grid or quantum.Grid(), potential,
                                         params, self.rng)
        else:
            self.engine = _ClassicalEngine(self.model, noise, params, self.rng)
        self.estimator: _EstimatorBinding | None = None
        self.t = 0
        self.n_outer = 0
        self.done = False

    # -- protocol-facing API ------------------------------------------------

    def reset(self) -> dict:
        self.engine.reset()
        if self.mode == "estimator":
            est_kind = "none"
        else:
            est_kind = self.binding.estimator
            if est_kind == "external":
                est_kind = "none"
        self.estimator = _EstimatorBinding(est_kind, self.model, self.noise,
                                           self.params, self.binding)
        if self.mode == "estimator":
            # the agent owns the estimate; the compounded transition matrix
            # defines the prediction-error reward
            self.a_reward = np.linalg.matrix_power(self.model.a,
                                                   self.binding.n_meas)
            self.s_agent = np.zeros(2)
        self.t = 0
        self.n_outer = 0
        self.done = False
        self.terminated_by: str | None = None
        self._tr_x, self._tr_p = [], []
        self._tr_mx, self._tr_mp = [], []
        self._tr_u, self._tr_y, self._tr_shat = [], [], []
        self.last_u = 0.0
        obs, _, _ = self._run_block(0.0)
        if self.mode == "estimator":
            obs["s_prev"] = np.zeros(2)
        return obs

    def step(self, action) -> StepResult:
        if self.done:
            raise ConfigurationError("episode is over; reset first")
        if self.mode == "controller":
            force = float(np.clip(action, -self.params.f_max,
                                  self.params.f_max))
            clamped = abs(float(action)) > self.params.f_max
            obs, done, reason = self._run_block(force * self.params.dt)
            reward = -1.0 if (done and reason == TERMINATED_THRESHOLD) else 0.0
            return StepResult(obs, reward, done,
                              {"clamped": clamped, "terminated_by": reason})
        # estimator mode: action is the increment of the agent's estimate
        delta = np.asarray(action, dtype=float).reshape(2)
        self.s_agent = self.s_agent + delta
        if self.env_controller == "random":
            u = float(self.rng.uniform(-self.params.f_max,
                                       self.params.f_max)) * self.params.dt
        else:
            u = 0.0
        s_prev = self.s_agent.copy()
        obs, done, reason = self._run_block(u)
        e = self._y_last - self.a_reward @ s_prev
        reward = -float(e @ e)
        obs["s_prev"] = s_prev
        return StepResult(obs, reward, done, {"terminated_by": reason,
                                              "prediction_error": e})

    # -- internals -----------------------------------------------------------

    def _run_block(self, u: float):
        """Advance n_meas inner steps under the held impulse ``u`` (force
        times dt); returns (obs, done, reason or None)."""
        n = self.binding.n_meas
        acc = np.zeros(2)
        done = False
        reason = None
        steps_done = 0
        for _ in range(n):
            self.engine.kick_evolve(u)
            if self.record_truth:
                xm, pm = self.engine.truth()
                self._tr_x.append(xm)
                self._tr_p.append(pm)
            mx = self.engine.measure_x()
            mp = self.engine.measure_p()
            acc += (mx, mp)
            if self.trace_enabled:
                self._tr_mx.append(mx)
                self._tr_mp.append(mp)
            self.t += 1
            steps_done += 1
            if self.engine.failed():
                done, reason = True, TERMINATED_THRESHOLD
                break
            if self.t >= self.binding.max_steps:
                done, reason = True, TERMINATED_MAX_STEPS
                break
        self.last_u = u
        if done:
            self.done = True
            self.terminated_by = reason
            self._y_last = acc / steps_done
            return {"t": self.t}, done, reason
        y = acc / n
        self._y_last = y
        s_hat = self.estimator.update(y, u) if self.estimator else y
        if self.trace_enabled:
            self._tr_u.append(u / self.params.dt)
            self._tr_y.append(y.copy())
            self._tr_shat.append(np.asarray(s_hat, dtype=float).copy())
        self.n_outer += 1
        obs = {"t": self.t, "y": y, "s_hat": np.asarray(s_hat, dtype=float),
               "u": u / self.params.dt}
        return obs, done, reason

    def build_trace(self) -> EpisodeTrace | None:
        if not self.trace_enabled:
            return None
        return EpisodeTrace(
            x_mean=np.array(self._tr_x), p_mean=np.array(self._tr_p),
            meas_x=np.array(self._tr_mx), meas_p=np.array(self._tr_mp),
            force=np.array(self._tr_u),
            y=np.array(self._tr_y).reshape(-1, 2),
            s_hat=np.array(self._tr_shat).reshape(-1, 2),
            n_meas=self.binding.n_meas)


def _internal_controller(binding: ControllerBinding, model: LinearModel,
                         potential: Potential, params: SimParams,
                         rng: np.random.Generator) -> Callable[[dict], float]:
    if binding.controller == "zero":
        return lambda obs: 0.0
    if binding.controller == "random":
        hi = binding.random_scale * params.f_max
        return lambda obs: float(rng.uniform(-hi, hi))
    if binding.controller == "lqr":
        ctl = _LqrController(model, potential, params, binding.n_meas)
        src = "s_hat" if binding.estimator != "none" else "y"
        return lambda obs: ctl.force(obs[src])
    raise ConfigurationError("external controllers run through the protocol")


# ---------------------------------------------------------------------------
# whole-episode entry points
# ---------------------------------------------------------------------------

def run_episode(system: str, potential: Potential, params: SimParams,
                binding: ControllerBinding, noise: NoiseModel | None = None,
                *, seed=0, grid: quantum.Grid | None = None,
                trace: bool = False, force_python: bool = False
                ) -> EpisodeResult:
    """Run one episode to termination and return its result."""
    if binding.controller == "external" or binding.estimator == "external":
        raise ConfigurationError("external agents attach via the protocol")
    if system == SYSTEM_CLASSICAL and not force_python:
        return _run_classical_kernel(potential, params, binding, noise,
                                     seed=seed, trace=trace)
    ss = _as_seed_sequence(seed)
    runner = EpisodeRunner(system, potential, params, binding, noise,
                           grid=grid, seed=ss, trace=trace)
    rng_ctl = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=ss.entropy,
                               spawn_key=ss.spawn_key + (0xC0,))))
    controller = _internal_controller(binding, runner.model, potential,
                                      params, rng_ctl)
    obs = runner.reset()
    while not runner.done:
        obs = runner.step(controller(obs)).obs
    return EpisodeResult(t_termination=runner.t,
                         terminated_by=runner.terminated_by,
                         seed=_seed_to_int(ss), n_outer=runner.n_outer,
                         trace=runner.build_trace())


def _seed_to_int(ss: np.random.SeedSequence) -> int:
    state = ss.generate_state(1, np.uint32)
    return int(state[0])


def _kernel_inputs(potential: Potential, params: SimParams,
                   binding: ControllerBinding, noise: NoiseModel):
    model = build_model(potential, params)
    model_eff, noise_eff = est.compound_block(model, noise, binding.n_meas,
                                              binding.scale_meas_by_n)
    zeros = np.zeros((2, 2))
    if binding.estimator == "kf-decorr":
        dm = est.decorrelate(model_eff, noise_eff)
        a_star, t_mat, q_star = dm.a_star, dm.t_mat, dm.q_star
    else:
        a_star = t_mat = q_star = zeros
    k0 = k1 = 0.0
    relin = False
    if binding.controller == "lqr":
        ctl = _LqrController(model, potential, params, binding.n_meas)
        k0, k1 = float(ctl.gain.k[0]), float(ctl.gain.k[1])
        relin = ctl.relinearize
    prior = est.default_prior(params)
    return dict(
        pot_kind=potential.kind_code, c1=potential.c1, c2=potential.c2,
        dt=params.dt, mass=params.mass, x_th=params.x_threshold,
        f_max=params.f_max,
        p0_half=params.sigma_p_init * math.sqrt(3.0),
        n_meas=binding.n_meas, max_steps=binding.max_steps,
        chol=noise.joint_cholesky(),
        controller_kind=_CTRL_CODE[binding.controller],
        random_scale=binding.random_scale,
        estimator_kind=_EST_CODE[binding.estimator],
        a_eff=model_eff.a, b_eff=model_eff.b,
        r_eff=noise_eff.r_sys, q_eff=noise_eff.q_meas, s_eff=noise_eff.s_cross,
        a_star=a_star, t_mat=t_mat, q_star=q_star,
        r_in=noise.r_sys, relinearize=relin,
        k0_fixed=k0, k1_fixed=k1, w2=0.0, eps_w=lqr_mod.EPS_W,
        prior_var_x=float(prior.cov[0, 0]), prior_var_p=float(prior.cov[1, 1]),
    )


def _run_classical_kernel(potential: Potential, params: SimParams,
                          binding: ControllerBinding, noise: NoiseModel | None,
                          *, seed, trace: bool) -> EpisodeResult:
    if noise is None:
        raise ConfigurationError("classical system requires a noise model")
    ss = _as_seed_sequence(seed)
    kseed = _seed_to_int(ss)
    kw = _kernel_inputs(potential, params, binding, noise)
    m = binding.max_steps if trace else 1
    n_out_max = binding.max_steps // binding.n_meas + 1 if trace else 1
    bufs = dict(
        tr_x=np.zeros(m), tr_p=np.zeros(m), tr_mx=np.zeros(m),
        tr_mp=np.zeros(m), tr_u=np.zeros(n_out_max), tr_yx=np.zeros(n_out_max),
        tr_yp=np.zeros(n_out_max), tr_sx=np.zeros(n_out_max),
        tr_sp=np.zeros(n_out_max))
    t_term, reason_code, n_outer = kernels.classical_episode(
        kseed, **kw, trace=trace, **bufs)
    reason = TERMINATED_THRESHOLD if reason_code == kernels.REASON_THRESHOLD \
        else TERMINATED_MAX_STEPS
    tr = None
    if trace:
        tr = EpisodeTrace(
            x_mean=bufs["tr_x"][:t_term].copy(),
            p_mean=bufs["tr_p"][:t_term].copy(),
            meas_x=bufs["tr_mx"][:t_term].copy(),
            meas_p=bufs["tr_mp"][:t_term].copy(),
            force=bufs["tr_u"][:n_outer].copy(),
            y=np.stack([bufs["tr_yx"][:n_outer],
                        bufs["tr_yp"][:n_outer]], axis=1),
            s_hat=np.stack([bufs["tr_sx"][:n_outer],
                            bufs["tr_sp"][:n_outer]], axis=1),
            n_meas=binding.n_meas)
    return EpisodeResult(t_termination=int(t_term), terminated_by=reason,
                         seed=kseed, n_outer=int(n_outer), trace=tr)


def default_workers() -> int:
    env = os.environ.get("QCARTPOLE_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def run_batch(system: str, potential: Potential, params: SimParams,
              binding: ControllerBinding, noise: NoiseModel | None = None,
              *, episodes: int, master_seed: int = 0,
              workers: int | None = None, grid: quantum.Grid | None = None
              ) -> BatchSummary:
    """Run ``episodes`` independent episodes with per-episode derived seeds.

    The seed derivation is independent of the worker split, so any
    parallelism level reproduces the same multiset of termination times.
    """
    if episodes < 1:
        raise ConfigurationError("episodes must be >= 1")
    workers = workers or default_workers()
    children = np.random.SeedSequence(master_seed).spawn(episodes)

    if system == SYSTEM_CLASSICAL:
        if noise is None:
            raise ConfigurationError("classical system requires a noise model")
        kw = _kernel_inputs(potential, params, binding, noise)
        one_buf = np.zeros(1)

        def one(idx: int) -> float:
            t_term, _, _ = kernels.classical_episode(
                _seed_to_int(children[idx]), **kw, trace=False,
                tr_x=one_buf, tr_p=one_buf, tr_mx=one_buf, tr_mp=one_buf,
                tr_u=one_buf, tr_yx=one_buf, tr_yp=one_buf, tr_sx=one_buf,
                tr_sp=one_buf)
            return float(t_term)
    else:
        def one(idx: int) -> float:
            try:
                res = run_episode(system, potential, params, binding, noise,
                                  seed=children[idx], grid=grid)
                return float(res.t_termination)
            except BackactionError:
                return math.nan

    if workers == 1:
        ts = np.array([one(i) for i in range(episodes)])
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            ts = np.array(list(ex.map(one, range(episodes))))
    aborts = int(np.count_nonzero(np.isnan(ts)))
    good = ts[~np.isnan(ts)]
    if good.size == 0:
        return BatchSummary(episodes, math.nan, math.nan, math.nan, 0.0,
                            aborts, good)
    return BatchSummary(
        episodes=episodes,
        mean=float(good.mean()),
        median=float(np.median(good)),
        stderr=float(good.std(ddof=1) / math.sqrt(good.size)) if good.size > 1
        else 0.0,
        censored_fraction=float(np.mean(good >= binding.max_steps)),
        aborts=aborts,
        t_terminations=good)


# ---------------------------------------------------------------------------
# histograms
# ---------------------------------------------------------------------------

@dataclass
class HistogramPair:
    x_centers: np.ndarray
    x_mass: np.ndarray
    p_centers: np.ndarray
    p_mass: np.ndarray
    samples_x: np.ndarray
    samples_p: np.ndarray
    episodes: int


def collect_histograms(system: str, potential: Potential, params: SimParams,
                       binding: ControllerBinding,
                       noise: NoiseModel | None = None, *,
                       total_steps: int, burn_in: int = 300,
                       master_seed: int = 0, bin_width: float = 0.1,
                       p_range: float = 4.0,
                       grid: quantum.Grid | None = None) -> HistogramPair:
    """Accumulate position/momentum expectation values over many episodes
    until ``total_steps`` post-burn-in samples are retained."""
    xs: list[np.ndarray] = []
    ps: list[np.ndarray] = []
    retained = 0
    episodes = 0
    while retained < total_steps:
        child = np.random.SeedSequence(entropy=master_seed,
                                       spawn_key=(episodes,))
        res = run_episode(system, potential, params, binding, noise,
                          seed=child, grid=grid, trace=True)
        episodes += 1
        tr = res.trace
        if tr is None or res.t_termination <= burn_in:
            continue
        xs.append(tr.x_mean[burn_in:])
        ps.append(tr.p_mean[burn_in:])
        retained += res.t_termination - burn_in
    sx = np.concatenate(xs)[:total_steps]
    sp = np.concatenate(ps)[:total_steps]
    x_lim = params.x_threshold
    x_edges = np.arange(-x_lim, x_lim + bin_width / 2, bin_width)
    p_edges = np.arange(-p_range, p_range + bin_width / 2, bin_width)
    x_mass, _ = np.histogram(np.clip(sx, -x_lim + 1e-9, x_lim - 1e-9), x_edges)
    p_mass, _ = np.histogram(np.clip(sp, -p_range + 1e-9, p_range - 1e-9),
                             p_edges)
    return HistogramPair(
        x_centers=0.5 * (x_edges[:-1] + x_edges[1:]),
        x_mass=x_mass / x_mass.sum(),
        p_centers=0.5 * (p_edges[:-1] + p_edges[1:]),
        p_mass=p_mass / p_mass.sum(),
        samples_x=sx, samples_p=sp, episodes=episodes)
