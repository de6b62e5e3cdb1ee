"""Command line entry points.

    rodflow simulate             --config run.json --out results/
    rodflow verify-conservation  --config run.toml --out results/
    rodflow nonuniform           --config experiment.json --out results/

Exit codes: 0 success, 1 configuration error, 2 integration stopped early,
3 a verification criterion failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys

import numpy as np

from . import __version__
from .conservation import conservation_residual, convergence_orders, export_conservation
from .errors import (
    ConfigError,
    DegenerateDirectionError,
    OutsideDomainError,
    ParameterError,
    ResolutionError,
    RodflowError,
)
from .eulerian import SolverConfig, export_trajectory, integrate_eulerian
from .lagrangian import eulerian_velocity, export_flow, integrate_spray
from .nonuniform import ExperimentConfig, export_experiment, run_experiment
from .spectral import TWO_PI, GridFunction, bump

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("rodflow")

EXIT_OK, EXIT_CONFIG, EXIT_INTEGRATION, EXIT_VERIFY = 0, 1, 2, 3
ROUNDOFF_RESIDUAL = 1e-10

SOLVER_KEYS = {
    "gamma", "s", "N", "domain_length", "dt", "cfl_factor", "T",
    "blowup_floor", "norm_cap", "dealias", "snapshot_stride", "resolution_tol",
}
RUN_KEYS = {"formulation", "initial_data", "seed", "tolerance", "order_check"}
EXPERIMENT_KEYS = {"v0", "g", "x0", "R", "n_values", "crosscheck", "crosscheck_dt"}
ALLOWED_KEYS = SOLVER_KEYS | RUN_KEYS | EXPERIMENT_KEYS

_PI_RE = re.compile(r"^\s*([0-9]*\.?[0-9]*)\s*\*?\s*pi\s*$")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if str(path).endswith(".toml"):
        try:
            data = tomllib.loads(raw.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    else:
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    unknown = sorted(set(data) - ALLOWED_KEYS)
    if unknown:
        where = ", ".join(f"{key!r} (line {_key_line(raw, key)})" for key in unknown)
        raise ConfigError(f"{path}: unknown key(s) {where}")
    return data


def _key_line(raw: bytes, key: str):
    pattern = re.compile(rf'^\s*"?{re.escape(key)}"?\s*[:=]')
    for lineno, line in enumerate(raw.decode(errors="replace").splitlines(), 1):
        if pattern.search(line) or f'"{key}"' in line:
            return lineno
    return "?"


def _length(value):
    if isinstance(value, str):
        match = _PI_RE.match(value)
        if not match:
            raise ConfigError(f"domain_length: cannot parse {value!r}")
        factor = float(match.group(1)) if match.group(1) else 1.0
        return factor * math.pi
    return float(value)


def solver_config(data: dict, snapshot_stride=None, dealias=False) -> SolverConfig:
    if "gamma" not in data:
        raise ConfigError("missing required key 'gamma'")
    kwargs = {k: data[k] for k in SOLVER_KEYS if k in data}
    kwargs["domain_length"] = _length(data.get("domain_length", TWO_PI))
    if snapshot_stride is not None:
        kwargs["snapshot_stride"] = snapshot_stride
    if dealias:
        kwargs["dealias"] = True
    try:
        return SolverConfig(**kwargs)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"solver configuration: {exc}") from exc


def initial_data(spec, N, L, seed=0, s=2.0) -> GridFunction:
    """Build a grid function from an ``initial_data`` style specification."""
    if spec is None or spec == "zero":
        spec = {"type": "zero"}
    if isinstance(spec, str):
        spec = {"type": spec}
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"initial data must be a table with a 'type', got {spec!r}")
    kind = spec["type"]
    x = np.arange(N) * (L / N)
    allowed = {
        "zero": set(),
        "constant": {"value"},
        "sine": {"amplitude", "mode", "phase"},
        "cosine": {"amplitude", "mode", "phase"},
        "fourier": {"coefficients"},
        "bump": {"center", "halfwidth", "norm"},
        "random": {"modes", "amplitude", "decay"},
    }
    if kind not in allowed:
        raise ConfigError(f"unknown initial data type {kind!r}")
    extra = set(spec) - allowed[kind] - {"type"}
    if extra:
        raise ConfigError(f"initial data {kind!r}: unknown key(s) {sorted(extra)}")
    k0 = TWO_PI / L
    try:
        if kind == "zero":
            values = np.zeros(N)
        elif kind == "constant":
            values = np.full(N, float(spec["value"]))
        elif kind in ("sine", "cosine"):
            trig = np.sin if kind == "sine" else np.cos
            values = float(spec.get("amplitude", 1.0)) * trig(
                k0 * int(spec.get("mode", 1)) * x + float(spec.get("phase", 0.0))
            )
        elif kind == "fourier":
            values = np.zeros(N)
            for k, a, b in spec["coefficients"]:
                values += a * np.cos(k0 * k * x) + b * np.sin(k0 * k * x)
        elif kind == "bump":
            return bump(float(spec["center"]), float(spec["halfwidth"]), s,
                        float(spec["norm"]), N, L)
        else:
            rng = np.random.default_rng(seed)
            modes = int(spec.get("modes", 8))
            decay = float(spec.get("decay", 2.0))
            k = np.arange(1, modes + 1)
            a = rng.standard_normal(modes) / k**decay
            b = rng.standard_normal(modes) / k**decay
            values = (np.cos(np.outer(x, k0 * k)) @ a + np.sin(np.outer(x, k0 * k)) @ b)
            values *= float(spec.get("amplitude", 0.1)) / max(np.abs(values).max(), 1e-300)
    except KeyError as exc:
        raise ConfigError(f"initial data {kind!r}: missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"initial data {kind!r}: {exc}") from exc
    return GridFunction(values, L)


def _clean(obj):
    """Replace non-finite floats by None so JSON output stays valid."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


class _Run:
    """Collects written files and writes the manifest last."""

    def __init__(self, out_dir, config, command):
        self.out_dir = out_dir
        self.config = config
        self.command = command
        self.outputs = []
        os.makedirs(out_dir, exist_ok=True)

    def add(self, paths):
        self.outputs.extend(os.path.relpath(p, self.out_dir) for p in paths)

    def write_json(self, name, payload):
        path = os.path.join(self.out_dir, name)
        with open(path, "w") as fh:
            json.dump(_clean(payload), fh, indent=2, allow_nan=False)
        self.add([path])
        return path

    def finish(self, exit_code, notes=None):
        manifest = {
            "command": self.command,
            "artifact_version": __version__,
            "config_echo": _clean(self.config),
            "seed": self.config.get("seed", 0),
            "outputs": self.outputs,
            "partial": exit_code == EXIT_INTEGRATION,
            "exit_code": exit_code,
            "notes": notes or [],
        }
        with open(os.path.join(self.out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, allow_nan=False)
        return exit_code


def _resolved(data, cfg):
    echo = dict(data)
    echo.update(cfg.to_dict())
    return echo


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(config_path, out_dir, snapshot_stride=None, dealias=False, threads=None) -> int:
    data = load_config(config_path)
    cfg = solver_config(data, snapshot_stride, dealias)
    formulation = data.get("formulation", "eulerian")
    if formulation not in ("eulerian", "lagrangian", "both"):
        raise ConfigError(f"formulation must be eulerian, lagrangian or both, got {formulation!r}")
    v0 = initial_data(data.get("initial_data"), cfg.N, cfg.domain_length, data.get("seed", 0), cfg.s)
    run = _Run(out_dir, _resolved(data, cfg), "simulate")
    notes, early = [], False

    eul = lag = None
    if formulation in ("eulerian", "both"):
        eul = integrate_eulerian(v0, cfg)
        run.add(export_trajectory(eul, os.path.join(out_dir, "eulerian")))
        if eul.terminated_early:
            early = True
            notes.append(f"eulerian: {eul.reason}")
    if formulation in ("lagrangian", "both"):
        lag = integrate_spray(v0, cfg.T, cfg)
        run.add(export_flow(lag, os.path.join(out_dir, "lagrangian")))
        run.write_json(
            os.path.join("lagrangian", "lagrangian_manifest.json"),
            {
                "config": cfg.to_dict(),
                "dt": lag.dt,
                "times": lag.times.tolist(),
                "min_phi_x": lag.min_phi_x.tolist(),
                "max_phi_x": lag.max_phi_x.tolist(),
                "terminated_early": lag.terminated_early,
                "reason": lag.reason,
            },
        )
        if lag.terminated_early:
            early = True
            notes.append(f"lagrangian: {lag.reason}")
    if eul is not None and lag is not None:
        path = os.path.join(out_dir, "crosscheck.csv")
        with open(path, "w", newline="") as fh:
            fh.write("t,sup_diff\n")
            for t, state in zip(lag.times, lag.states):
                idx = np.flatnonzero(np.isclose(eul.times, t, rtol=0, atol=1e-12))
                if idx.size:
                    diff = (eulerian_velocity(state) - eul.states[idx[0]]).sup()
                    fh.write(f"{t:.15g},{diff:.15g}\n")
        run.add([path])
    return run.finish(EXIT_INTEGRATION if early else EXIT_OK, notes)


def cmd_verify_conservation(config_path, out_dir, snapshot_stride=None, dealias=False,
                            threads=None) -> int:
    data = load_config(config_path)
    cfg = solver_config(data, snapshot_stride, dealias)
    tolerance = float(data.get("tolerance", 1e-6))
    v0 = initial_data(data.get("initial_data"), cfg.N, cfg.domain_length, data.get("seed", 0), cfg.s)
    run = _Run(out_dir, _resolved(data, cfg), "verify-conservation")
    flow = integrate_spray(v0, cfg.T, cfg)
    report = conservation_residual(flow, v0, cfg.gamma, cfg.s)
    order, notes = None, []
    if data.get("order_check", True) and not flow.terminated_early:
        n_steps, dt = cfg.steps_for(cfg.T, v0)
        fine_cfg = cfg.replace(dt=dt / 2)
        fine = integrate_spray(v0, cfg.T, fine_cfg, snapshot_stride=10**9)
        if not fine.terminated_early:
            fine_res = conservation_residual([fine.final], v0, cfg.gamma, cfg.s).residual_sup[0]
            coarse_res = report.residual_sup[-1]
            if min(fine_res, coarse_res) > ROUNDOFF_RESIDUAL:
                order = float(convergence_orders([coarse_res, fine_res])[0])
            else:
                notes.append("residual at round-off level; convergence order not measurable")
    run.add(export_conservation(report, out_dir, order=order))
    if flow.terminated_early:
        notes.append(flow.reason)
        return run.finish(EXIT_INTEGRATION, notes)
    notes.append(f"max sup residual {report.max_residual_sup:.3e} vs tolerance {tolerance:g}")
    ok = report.max_residual_sup <= tolerance
    return run.finish(EXIT_OK if ok else EXIT_VERIFY, notes)


def cmd_nonuniform(config_path, out_dir, snapshot_stride=None, dealias=False, threads=None) -> int:
    data = load_config(config_path)
    cfg = solver_config(data, snapshot_stride, dealias)
    for key in ("g", "x0", "R"):
        if key not in data:
            raise ConfigError(f"missing required key {key!r}")
    seed = data.get("seed", 0)
    try:
        ec = ExperimentConfig(
            cfg=cfg,
            v0=initial_data(data.get("v0"), cfg.N, cfg.domain_length, seed, cfg.s),
            g=initial_data(data["g"], cfg.N, cfg.domain_length, seed, cfg.s),
            x0=float(data["x0"]),
            R=float(data["R"]),
            n_values=tuple(data.get("n_values", (4, 8, 16, 32))),
            crosscheck=bool(data.get("crosscheck", True)),
            crosscheck_dt=data.get("crosscheck_dt"),
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    run = _Run(out_dir, _resolved(data, cfg), "nonuniform")
    try:
        result = run_experiment(ec, threads=threads or 1)
    except ResolutionError as exc:
        raise ConfigError(f"{exc} (minimal N = {exc.minimal_N})") from exc
    except OutsideDomainError as exc:
        print(f"rodflow: {exc}", file=sys.stderr)
        return run.finish(EXIT_INTEGRATION, [str(exc)])
    result.summary = _clean(result.summary)
    run.add(export_experiment(result, out_dir))
    verdicts = result.summary.get("verdicts", {})
    if result.summary.get("failed_n"):
        return run.finish(EXIT_INTEGRATION, [f"failed n: {result.summary['failed_n']}"])
    if not verdicts.get("witness", False):
        return run.finish(EXIT_VERIFY, ["non-uniformity witness failed"])
    if not all(verdicts.values()):
        failed = [k for k, v in verdicts.items() if not v]
        return run.finish(EXIT_VERIFY, [f"invariants failed: {failed}"])
    return run.finish(EXIT_OK)


COMMANDS = {
    "simulate": cmd_simulate,
    "verify-conservation": cmd_verify_conservation,
    "nonuniform": cmd_nonuniform,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rodflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rodflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON or TOML configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $RODFLOW_THREADS or 1)")
        p.add_argument("--snapshot-stride", type=int, default=None)
        p.add_argument("--dealias", action="store_true", help="apply the 2/3 rule to products")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads
    if threads is None:
        env = os.environ.get("RODFLOW_THREADS")
        threads = int(env) if env and env.isdigit() else 1
    try:
        return COMMANDS[args.command](
            args.config, args.out,
            snapshot_stride=args.snapshot_stride, dealias=args.dealias, threads=threads,
        )
    except ConfigError as exc:
        print(f"rodflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RodflowError as exc:
        print(f"rodflow: {exc}", file=sys.stderr)
        config_like = (ValueError, DegenerateDirectionError)
        return EXIT_CONFIG if isinstance(exc, config_like) else EXIT_INTEGRATION


if __name__ == "__main__":
    sys.exit(main())
