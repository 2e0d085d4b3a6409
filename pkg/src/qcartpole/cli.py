"""Benchmark command line: sweeps, ratio tables, calibration, histograms,
and the agent protocol server.

Artifacts are plain delimited text plus a JSON manifest embedding the
configuration, its hash and the master seed; re-running a manifest
reproduces the artifact byte for byte.  Exit codes: 0 success, 2
configuration error, 3 runtime fault.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .episode import (BatchSummary, ControllerBinding, SYSTEM_CLASSICAL,
                      SYSTEM_QUANTUM, collect_histograms, default_workers,
                      run_batch)
from .errors import ConfigurationError, QCartpoleError
from .params import SimParams
from .potentials import (DEFAULT_COSINE_K1, DEFAULT_COSINE_K2, Potential,
                         default_potential)
from .protocol import EnvSpec, MODE_CONTROLLER, MODE_ESTIMATOR, serve_socket, serve_stdio
from .surrogate import NoiseModel, build_model, calibrate_noise, load_noise, save_noise

MANIFEST_FORMAT = "qcartpole-manifest/1"

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "system": {"enum": [SYSTEM_QUANTUM, SYSTEM_CLASSICAL]},
        "potential": {"enum": ["quadratic", "cosine", "quartic"]},
        "k": {"type": "number", "exclusiveMinimum": 0},
        "k1": {"type": "number", "exclusiveMinimum": 0},
        "k2": {"type": "number", "exclusiveMinimum": 0},
        "controller": {"enum": ["lqr", "random", "zero"]},
        "estimator": {"enum": ["none", "kf", "kf-decorr", "ekf"]},
        "n_meas": {"type": "array", "items": {"type": "integer", "minimum": 1},
                   "minItems": 1},
        "sigma_ancilla": {"type": "array",
                          "items": {"type": "number", "exclusiveMinimum": 0}},
        "sigma_meas": {"type": "array",
                       "items": {"type": "number", "exclusiveMinimum": 0}},
        "sigma_dyn": {"type": "number", "minimum": 0},
        "episodes": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "max_steps": {"type": "integer", "minimum": 1},
        "random_scale": {"type": "number", "exclusiveMinimum": 0},
        "noise": {"type": ["string", "array"]},
    },
    "required": ["system", "potential", "controller", "estimator", "n_meas",
                 "episodes", "seed"],
    "additionalProperties": False,
}


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _write_manifest(out: Path, command: str, config: dict) -> None:
    manifest = {"format": MANIFEST_FORMAT, "command": command,
                "config": config, "config_hash": _config_hash(config),
                "master_seed": config.get("seed", 0),
                "version": __version__}
    manifest_path = out.parent / (out.name + ".manifest.json")
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_table(out: Path, header: list[str], rows: list[list],
                 config: dict) -> None:
    lines = [f"# config_hash={_config_hash(config)} master_seed={config.get('seed', 0)}",
             ",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    out.write_text("\n".join(lines) + "\n")


def _potential_from(config: dict) -> Potential:
    kind = config["potential"]
    if kind == "cosine":
        return Potential.cosine(config.get("k1", DEFAULT_COSINE_K1),
                                config.get("k2", DEFAULT_COSINE_K2))
    if "k" in config:
        return (Potential.quadratic(config["k"]) if kind == "quadratic"
                else Potential.quartic(config["k"]))
    return default_potential(kind)


def _load_config_file(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if isinstance(data, dict) and data.get("format") == MANIFEST_FORMAT:
        data = data["config"]
    return data


def _validate_config(config: dict) -> dict:
    import jsonschema

    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigurationError(f"invalid config: {exc.message}") from exc
    if config["system"] == SYSTEM_QUANTUM and config["estimator"] != "none" \
            and "noise" not in config:
        raise ConfigurationError(
            "quantum runs with an estimator need a calibrated --noise file")
    return config


def _noise_for_cell(config: dict, params: SimParams, sa_index: int,
                    sigma_meas: float | None) -> NoiseModel:
    spec = config.get("noise")
    if spec is not None:
        paths = [spec] if isinstance(spec, str) else list(spec)
        path = paths[sa_index] if len(paths) > 1 else paths[0]
        return load_noise(path)
    if config["system"] == SYSTEM_CLASSICAL:
        return NoiseModel.parametric(sigma_meas if sigma_meas is not None
                                     else params.sigma_ancilla / params.coupling,
                                     config.get("sigma_dyn", 0.3))
    raise ConfigurationError("quantum estimator cells need a noise file")


def _sweep_cells(config: dict):
    """Cartesian cells in config order (row order is part of the config)."""
    n_list = config["n_meas"]
    sa_list = config.get("sigma_ancilla") or [None]
    sm_list = config.get("sigma_meas") or [None]
    for sa_i, sa in enumerate(sa_list):
        for sm in sm_list:
            for n in n_list:
                yield sa_i, sa, sm, n


def _run_sweep(config: dict) -> tuple[list[str], list[list]]:
    system = config["system"]
    potential = _potential_from(config)
    binding_kw = dict(controller=config["controller"],
                      estimator=config["estimator"],
                      max_steps=config.get("max_steps", 10_000),
                      random_scale=config.get("random_scale", 1.0))
    header = ["system", "potential", "controller", "estimator", "n_meas",
              "sigma_ancilla", "sigma_meas", "episodes", "mean_t", "median_t",
              "stderr_t", "censored_fraction", "aborts"]
    rows = []
    cell = 0
    for sa_i, sa, sm, n in _sweep_cells(config):
        params = SimParams() if sa is None else SimParams(sigma_ancilla=sa)
        binding = ControllerBinding(n_meas=n, **binding_kw)
        noise = None
        if system == SYSTEM_CLASSICAL or binding.estimator != "none":
            noise = _noise_for_cell(config, params, sa_i, sm)
        seed = int(np.random.SeedSequence(
            entropy=config["seed"], spawn_key=(cell,)).generate_state(1)[0])
        summary = run_batch(system, potential, params, binding, noise,
                            episodes=config["episodes"], master_seed=seed,
                            workers=default_workers())
        rows.append([system, potential.kind, binding.controller,
                     binding.estimator, n,
                     sa if sa is not None else "",
                     sm if sm is not None else "",
                     config["episodes"], summary.mean, summary.median,
                     summary.stderr, summary.censored_fraction,
                     summary.aborts])
        cell += 1
    return header, rows


def _config_from_args(args) -> dict:
    if args.config:
        return _validate_config(_load_config_file(args.config))
    config = {
        "system": args.system,
        "potential": args.potential,
        "controller": args.controller,
        "estimator": args.estimator,
        "n_meas": args.nmeas,
        "episodes": args.episodes,
        "seed": args.seed,
    }
    if args.sigma_ancilla:
        config["sigma_ancilla"] = args.sigma_ancilla
    if args.sigma_meas:
        config["sigma_meas"] = args.sigma_meas
    if args.sigma_dyn is not None:
        config["sigma_dyn"] = args.sigma_dyn
    if args.noise:
        config["noise"] = args.noise if len(args.noise) > 1 else args.noise[0]
    if args.max_steps:
        config["max_steps"] = args.max_steps
    if args.k is not None:
        config["k"] = args.k
    if args.k1 is not None:
        config["k1"] = args.k1
    if args.k2 is not None:
        config["k2"] = args.k2
    return _validate_config(config)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    header, rows = _run_sweep(config)
    out = Path(args.out)
    _write_table(out, header, rows, config)
    _write_manifest(out, "sweep", config)
    return 0


def cmd_ratio(args) -> int:
    config = _validate_config(_load_config_file(args.config))
    baseline = _validate_config(_load_config_file(args.baseline))
    if config["n_meas"] != baseline["n_meas"] or \
            config.get("sigma_ancilla") != baseline.get("sigma_ancilla") or \
            config.get("sigma_meas") != baseline.get("sigma_meas"):
        raise ConfigurationError("ratio configs must share sweep axes")
    header, rows = _run_sweep(config)
    _, base_rows = _run_sweep(baseline)
    out_header = header[:8] + ["ratio", "ratio_stderr", "status"]
    out_rows = []
    for row, brow in zip(rows, base_rows):
        mean, stderr = row[8], row[10]
        bmean, bstderr = brow[8], brow[10]
        cells = row[:8]
        if not np.isfinite(bmean) or bmean == 0:
            out_rows.append(cells + ["", "", "unavailable"])
            continue
        ratio = mean / bmean
        rel = np.sqrt((stderr / mean) ** 2 + (bstderr / bmean) ** 2) \
            if mean else 0.0
        out_rows.append(cells + [ratio, abs(ratio) * rel, "ok"])
    out = Path(args.out)
    merged = {"config": config, "baseline": baseline, "seed": config["seed"]}
    _write_table(out, out_header, out_rows, merged)
    _write_manifest(out, "ratio", merged)
    return 0


def cmd_calibrate(args) -> int:
    potential = _potential_from({"potential": args.potential,
                                 **({"k": args.k} if args.k else {}),
                                 **({"k1": args.k1} if args.k1 else {}),
                                 **({"k2": args.k2} if args.k2 else {})})
    params = SimParams() if args.sigma_ancilla is None else \
        SimParams(sigma_ancilla=args.sigma_ancilla)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    noise = calibrate_noise(potential, params, args.steps, rng,
                            force_scale=args.force_scale,
                            burn_in=args.burn_in)
    noise.meta["seed"] = args.seed
    save_noise(args.out, noise, build_model(potential, params))
    config = {"potential": args.potential, "steps": args.steps,
              "seed": args.seed, "force_scale": args.force_scale,
              "burn_in": args.burn_in}
    _write_manifest(Path(args.out), "calibrate", config)
    print(f"calibrated {potential.kind}: {noise.meta['n_samples']} samples "
          f"over {noise.meta['n_episodes']} episodes -> {args.out}")
    return 0


def cmd_histogram(args) -> int:
    config = {
        "system": args.system, "potential": args.potential,
        "controller": args.controller, "estimator": args.estimator,
        "n_meas": [args.nmeas_single], "episodes": 1, "seed": args.seed,
    }
    if args.noise:
        config["noise"] = args.noise[0] if len(args.noise) == 1 else args.noise
    if args.sigma_meas:
        config["sigma_meas"] = args.sigma_meas
    if args.sigma_dyn is not None:
        config["sigma_dyn"] = args.sigma_dyn
    _validate_config(config)
    potential = _potential_from(config)
    params = SimParams()
    binding = ControllerBinding(controller=args.controller,
                                estimator=args.estimator,
                                n_meas=args.nmeas_single,
                                max_steps=args.max_steps or 10_000)
    noise = None
    if args.system == SYSTEM_CLASSICAL or args.estimator != "none":
        noise = _noise_for_cell(config, params, 0,
                                args.sigma_meas[0] if args.sigma_meas else None)
    hp = collect_histograms(args.system, potential, params, binding, noise,
                            total_steps=args.steps, burn_in=args.burn_in,
                            master_seed=args.seed)
    out = Path(args.out)
    for tag, centers, mass in (("x", hp.x_centers, hp.x_mass),
                               ("p", hp.p_centers, hp.p_mass)):
        path = out.parent / (out.name + f".{tag}.csv")
        rows = [[float(c), float(m)] for c, m in zip(centers, mass)]
        _write_table(path, ["bin_center", "mass"], rows, config)
    _write_manifest(out, "histogram", config)
    return 0


def cmd_serve(args) -> int:
    config = {
        "system": args.system, "potential": args.potential,
        "controller": "zero", "estimator": args.estimator,
        "n_meas": [args.nmeas_single], "episodes": 1, "seed": args.seed,
    }
    if args.noise:
        config["noise"] = args.noise[0]
    if args.sigma_meas:
        config["sigma_meas"] = args.sigma_meas
    if args.sigma_dyn is not None:
        config["sigma_dyn"] = args.sigma_dyn
    potential = _potential_from(config)
    params = SimParams()
    binding = ControllerBinding(
        controller="zero", estimator=args.estimator,
        n_meas=args.nmeas_single, max_steps=args.max_steps or 10_000,
        obs_source=args.obs_source)
    noise = None
    if args.system == SYSTEM_CLASSICAL or args.estimator != "none":
        noise = _noise_for_cell(config, params, 0,
                                args.sigma_meas[0] if args.sigma_meas else None)
    spec = EnvSpec(system=args.system, potential=potential, params=params,
                   binding=binding, noise=noise, mode=args.mode,
                   env_controller=args.env_controller,
                   master_seed=args.seed)
    if args.transport == "stdio":
        serve_stdio(spec)
    else:
        def ready(addr):
            print(f"listening on {addr[0]}:{addr[1]}", flush=True)

        serve_socket(spec, port=args.port, max_sessions=args.max_sessions,
                     ready_callback=ready)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common_axes(p: argparse.ArgumentParser) -> None:
    p.add_argument("--system", choices=[SYSTEM_QUANTUM, SYSTEM_CLASSICAL],
                   default=SYSTEM_QUANTUM)
    p.add_argument("--potential", choices=["quadratic", "cosine", "quartic"],
                   default="quadratic")
    p.add_argument("--controller", choices=["lqr", "random", "zero"],
                   default="lqr")
    p.add_argument("--estimator",
                   choices=["none", "kf", "kf-decorr", "ekf"], default="kf")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", action="append",
                   help="noise model file; repeat to match --sigma-ancilla")
    p.add_argument("--sigma-meas", type=float, action="append", dest="sigma_meas")
    p.add_argument("--sigma-dyn", type=float, dest="sigma_dyn")
    p.add_argument("--max-steps", type=int, dest="max_steps")
    p.add_argument("--k", type=float)
    p.add_argument("--k1", type=float)
    p.add_argument("--k2", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qcartpole",
        description="Quantum cartpole benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="termination-time sweep over axes")
    _add_common_axes(p)
    p.add_argument("--nmeas", type=lambda s: [int(v) for v in s.split(",")],
                   default=[1])
    p.add_argument("--sigma-ancilla", dest="sigma_ancilla",
                   type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--config", help="JSON config or manifest file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ratio", help="per-cell ratio of two sweep configs")
    p.add_argument("--config", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ratio)

    p = sub.add_parser("calibrate", help="extract surrogate noise covariances")
    p.add_argument("--potential",
                   choices=["quadratic", "cosine", "quartic"], required=True)
    p.add_argument("--steps", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force-scale", type=float, default=0.05,
                   dest="force_scale")
    p.add_argument("--burn-in", type=int, default=300, dest="burn_in")
    p.add_argument("--sigma-ancilla", type=float, dest="sigma_ancilla")
    p.add_argument("--k", type=float)
    p.add_argument("--k1", type=float)
    p.add_argument("--k2", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("histogram", help="stationary state histograms")
    _add_common_axes(p)
    p.add_argument("--nmeas", type=int, default=1, dest="nmeas_single")
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--burn-in", type=int, default=300, dest="burn_in")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("serve", help="agent protocol server")
    _add_common_axes(p)
    p.add_argument("--mode", choices=[MODE_CONTROLLER, MODE_ESTIMATOR],
                   default=MODE_CONTROLLER)
    p.add_argument("--transport", choices=["stdio", "socket"],
                   default="stdio")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--nmeas", type=int, default=1, dest="nmeas_single")
    p.add_argument("--obs-source", choices=["raw", "estimate", "both"],
                   default="raw", dest="obs_source")
    p.add_argument("--env-controller", choices=["random", "zero"],
                   default="random", dest="env_controller")
    p.add_argument("--max-sessions", type=int, dest="max_sessions")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except QCartpoleError as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
