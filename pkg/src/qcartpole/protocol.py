"""Line-delimited JSON protocol for external learning agents.

One JSON object per line.  The server greets with ``hello``; the client
drives episodes with ``reset`` and ``act``; the server answers every act
with one ``reward`` line followed by either an ``obs`` or a ``done`` line.
Malformed input gets an ``error`` line and closes the session.

Controller mode: observations are the averaged scaled measurements
(optionally the estimator state, see ``obs_source``); the action is one
force, clamped server-side; reward is 0 per decision and -1 when the
threshold condition ends the episode.

Estimator mode: observations are (previous estimate, averaged
measurements, applied force); the action is the estimate increment; reward
is minus the squared one-step prediction error; the environment applies
its own force (random by default).

Example transcript (one message per line)::

    S: {"kind": "hello", "version": "1", "mode": "controller", ...}
    C: {"kind": "reset"}
    S: {"kind": "obs", "t": 1, "values": [0.31, -4.2]}
    C: {"kind": "act", "value": [3.0]}
    S: {"kind": "reward", "value": 0.0, "clamped": false}
    S: {"kind": "obs", "t": 2, "values": [-1.7, 6.0]}
    ...
    C: {"kind": "act", "value": [-1.0]}
    S: {"kind": "reward", "value": -1.0, "clamped": false}
    S: {"kind": "done", "t_termination": 512, "terminated_by": "threshold"}
"""

from __future__ import annotations

import json
import math
import socket
import sys
import threading
from dataclasses import dataclass, field

import numpy as np

from .episode import (ControllerBinding, EpisodeRunner, SYSTEM_CLASSICAL,
                      SYSTEM_QUANTUM)
from .errors import ConfigurationError
from .params import SimParams
from .potentials import Potential
from .quantum import Grid
from .surrogate import NoiseModel

PROTOCOL_VERSION = "1"

MODE_CONTROLLER = "controller"
MODE_ESTIMATOR = "estimator"


@dataclass
class EnvSpec:
    """Everything needed to build episodes for one session."""

    system: str
    potential: Potential
    params: SimParams
    binding: ControllerBinding
    noise: NoiseModel | None = None
    grid: Grid | None = None
    mode: str = MODE_CONTROLLER
    env_controller: str = "random"      # estimator-mode internal force
    master_seed: int = 0
    extra: dict = field(default_factory=dict)

    def describe(self) -> dict:
        return {
            "system": self.system,
            "potential": self.potential.kind,
            "n_meas": self.binding.n_meas,
            "max_steps": self.binding.max_steps,
            "obs_source": self.binding.obs_source,
            "f_max": self.params.f_max,
            "mode": self.mode,
        }


def _obs_values(spec: EnvSpec, obs: dict) -> list[float]:
    if spec.mode == MODE_ESTIMATOR:
        s_prev = obs.get("s_prev", np.zeros(2))
        return [float(s_prev[0]), float(s_prev[1]),
                float(obs["y"][0]), float(obs["y"][1]), float(obs["u"])]
    src = spec.binding.obs_source
    vals: list[float] = []
    if src in ("raw", "both"):
        vals += [float(obs["y"][0]), float(obs["y"][1])]
    if src in ("estimate", "both"):
        vals += [float(obs["s_hat"][0]), float(obs["s_hat"][1])]
    return vals


class Session:
    """One agent session: an episode factory plus the message handlers."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.runner: EpisodeRunner | None = None
        self.episode_index = 0

    def hello(self) -> dict:
        return {"kind": "hello", "version": PROTOCOL_VERSION,
                "mode": self.spec.mode, "config": self.spec.describe()}

    def _new_runner(self, seed=None) -> EpisodeRunner:
        if seed is None:
            seed_seq = np.random.SeedSequence(
                entropy=self.spec.master_seed,
                spawn_key=(self.episode_index,))
        else:
            seed_seq = np.random.SeedSequence(int(seed))
        self.episode_index += 1
        return EpisodeRunner(
            self.spec.system, self.spec.potential, self.spec.params,
            self.spec.binding, self.spec.noise, grid=self.spec.grid,
            seed=seed_seq, mode=self.spec.mode,
            env_controller=self.spec.env_controller)

    def handle(self, msg: dict) -> list[dict]:
        kind = msg.get("kind")
        if kind == "reset":
            self.runner = self._new_runner(msg.get("seed"))
            obs = self.runner.reset()
            if self.runner.done:
                return [{"kind": "done", "t_termination": self.runner.t,
                         "terminated_by": self.runner.terminated_by}]
            return [{"kind": "obs", "t": obs["t"],
                     "values": _obs_values(self.spec, obs)}]
        if kind == "act":
            if self.runner is None or self.runner.done:
                raise ConfigurationError("act before reset")
            value = msg.get("value")
            if not isinstance(value, (list, tuple)) or not value or \
                    not all(isinstance(v, (int, float)) and math.isfinite(v)
                            for v in value):
                raise ConfigurationError("act value must be finite numbers")
            if self.spec.mode == MODE_CONTROLLER:
                if len(value) != 1:
                    raise ConfigurationError("controller act takes one force")
                action = float(value[0])
            else:
                if len(value) != 2:
                    raise ConfigurationError(
                        "estimator act takes two increments")
                action = [float(value[0]), float(value[1])]
            sr = self.runner.step(action)
            out = [{"kind": "reward", "value": sr.reward,
                    "clamped": bool(sr.info.get("clamped", False))}]
            if sr.done:
                out.append({"kind": "done", "t_termination": self.runner.t,
                            "terminated_by": sr.info["terminated_by"]})
            else:
                out.append({"kind": "obs", "t": sr.obs["t"],
                            "values": _obs_values(self.spec, sr.obs)})
            return out
        raise ConfigurationError(f"unexpected message kind {kind!r}")


def serve_lines(spec: EnvSpec, lines, write) -> None:
    """Run one session over an iterable of text lines.

    ``write`` receives one dict per outgoing message.  Returns cleanly on
    end-of-stream; any malformed or out-of-order input produces an
    ``error`` message and ends the session.
    """
    session = Session(spec)
    write(session.hello())
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ConfigurationError("message must be a JSON object")
            replies = session.handle(msg)
        except (json.JSONDecodeError, ConfigurationError, ValueError,
                TypeError, KeyError) as exc:
            write({"kind": "error", "message": str(exc)})
            return
        for reply in replies:
            write(reply)


def serve_stdio(spec: EnvSpec, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout

    def write(msg: dict) -> None:
        stdout.write(json.dumps(msg) + "\n")
        stdout.flush()

    serve_lines(spec, stdin, write)


def serve_socket(spec: EnvSpec, host: str = "127.0.0.1", port: int = 0,
                 max_sessions: int | None = None,
                 ready_callback=None) -> None:
    """Accept connections sequentially-forked; one session per connection.

    Each connection gets an independent seed stream derived from the
    session index.  ``max_sessions`` bounds the accept loop (for tests).
    """
    srv = socket.create_server((host, port))
    if ready_callback is not None:
        ready_callback(srv.getsockname())
    served = 0
    threads: list[threading.Thread] = []
    try:
        while max_sessions is None or served < max_sessions:
            conn, _ = srv.accept()
            sub = EnvSpec(**{**spec.__dict__,
                             "master_seed": spec.master_seed + served})
            t = threading.Thread(target=_serve_connection, args=(sub, conn),
                                 daemon=True)
            t.start()
            threads.append(t)
            served += 1
    finally:
        for t in threads:
            t.join(timeout=30)
        srv.close()


def _serve_connection(spec: EnvSpec, conn: socket.socket) -> None:
    with conn:
        rfile = conn.makefile("r", encoding="utf-8")
        wfile = conn.makefile("w", encoding="utf-8")

        def write(msg: dict) -> None:
            wfile.write(json.dumps(msg) + "\n")
            wfile.flush()

        try:
            serve_lines(spec, rfile, write)
        except (BrokenPipeError, ConnectionResetError):
            pass
