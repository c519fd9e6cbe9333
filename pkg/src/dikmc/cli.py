"""Command-line front end: ``dikmc simulate | verify <suite> | sweep``.

Exit codes: 0 success, 1 a verification failed, 2 configuration error,
3 a run was truncated by its event budget.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional

import jsonschema

from . import harness
from .asymptotics import Profile, cosine_profile
from .engine import EVENT_DRIVEN, THINNING, InitialCondition, Params
from .errors import ProfileError, RegimeError, TruncationError
from .observables import rescale_trajectory, run_cycles_detailed, write_cycles_csv, write_magnetization_csv

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_TRUNCATED = 0, 1, 2, 3

_PROFILE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["cosine", "csv"]},
        "x0": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "M": {"type": "integer", "minimum": 8},
        "path": {"type": "string"},
    },
    "required": ["kind"],
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "N": {"type": "integer", "minimum": 3},
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "c": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "init": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["constant", "gamma_auto", "profile"]},
                "lambda0": {"type": "number"},
                "noise_eps": {"type": "number", "minimum": 0},
                "profile": _PROFILE_SCHEMA,
            },
            "required": ["kind"],
        },
        "replicas": {"type": "integer", "minimum": 1},
        "cycles": {"type": "integer", "minimum": 1},
        "engine": {"enum": [EVENT_DRIVEN, THINNING]},
        "budget": {"type": "integer", "minimum": 1},
        "grid": {"type": "array", "items": {"type": "integer", "minimum": 3}},
    },
}

# defaults of each verification suite (overridden key by key by the config file)
SUITE_DEFAULTS = {
    "t1-exact": {"N": 64, "alpha": 1.0, "beta": 5.0, "init": {"kind": "constant", "lambda0": -30.0},
                 "replicas": 10000},
    "oracle": {"N": 8, "alpha": 1.0, "beta": 1.2, "init": {"kind": "constant", "lambda0": -3.0},
               "replicas": 5000},
    "gumbel": {"N": 4096, "alpha": 1.0, "c": 0.5, "init": {"kind": "gamma_auto"}, "replicas": 2000},
    "cover": {"N": 4096, "alpha": 1.0, "c": 0.5, "init": {"kind": "gamma_auto"}, "replicas": 2000},
    "cycles": {"N": 1024, "alpha": 1.0, "c": 0.5, "init": {"kind": "gamma_auto"}, "replicas": 500,
               "cycles": 6},
    "sawtooth": {"N": 4096, "alpha": 1.0, "c": 0.5, "init": {"kind": "gamma_auto"}, "replicas": 200,
                 "cycles": 2, "grid": [256, 1024, 4096]},
    "profile": {"N": 4096, "alpha": 1.0, "c": 0.5,
                "init": {"kind": "profile", "profile": {"kind": "cosine", "x0": 0.25}},
                "replicas": 1000},
}
SWEEP_DEFAULTS = {"N": 1024, "alpha": 1.0, "c": 0.5, "init": {"kind": "gamma_auto"}, "replicas": 200,
                  "cycles": 2, "grid": [256, 1024, 4096]}


class ConfigError(ValueError):
    """Anything wrong with the configuration or command line (exit code 2)."""


def load_config(path: Optional[str], defaults: Optional[dict] = None, seed: Optional[int] = None) -> dict:
    """Read, merge over ``defaults`` and validate a JSON config."""
    cfg = json.loads(json.dumps(defaults or {}))
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        if "beta" in user or "c" in user:
            cfg.pop("beta", None)
            cfg.pop("c", None)
        if "init" in user:
            cfg.pop("init", None)
        cfg.update(user)
    if seed is not None:
        cfg["seed"] = seed
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    if "beta" in cfg and "c" in cfg:
        raise ConfigError("give either beta or c, not both")
    return cfg


def build_params(cfg: dict) -> Params:
    if "N" not in cfg:
        raise ConfigError("config needs N")
    alpha = float(cfg.get("alpha", 1.0))
    seed = int(cfg.get("seed", 0))
    if "beta" in cfg:
        return Params(cfg["N"], alpha, float(cfg["beta"]), seed)
    if "c" in cfg:
        return Params.from_c(cfg["N"], float(cfg["c"]), alpha, seed)
    raise ConfigError("config needs beta or c")


def build_init(cfg: dict) -> InitialCondition:
    spec = cfg.get("init", {"kind": "gamma_auto"})
    profile = None
    if spec["kind"] == "profile":
        pspec = spec.get("profile", {"kind": "cosine"})
        if pspec["kind"] == "cosine":
            profile = cosine_profile(pspec.get("x0", 0.25), pspec.get("M", 4096))
        else:
            if "path" not in pspec:
                raise ConfigError("csv profile needs a path")
            profile = Profile.read_csv(pspec["path"])
    return InitialCondition(spec["kind"], spec.get("lambda0"), spec.get("noise_eps", 0.0), profile)


def build_experiment(cfg: dict) -> harness.ExperimentConfig:
    """Turn a validated config into an experiment; invalid values become :class:`ConfigError`."""
    try:
        return harness.ExperimentConfig(
            params=build_params(cfg), init=build_init(cfg), replicas=cfg.get("replicas", 1),
            cycles=cfg.get("cycles", 1), engine_kind=cfg.get("engine", EVENT_DRIVEN),
            budget=cfg.get("budget"),
        )
    except ConfigError:
        raise
    except (ValueError, OSError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _warn(params: Params) -> None:
    for w in harness.regime_warnings(params):
        print(f"warning: {w}", file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config, {"alpha": 1.0, "init": {"kind": "gamma_auto"}, "cycles": 1},
                      args.seed)
    exp = build_experiment(cfg)
    _warn(exp.params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    try:
        run = run_cycles_detailed(exp.params, exp.init, exp.cycles, exp.event_budget,
                                  keep_log=True, engine=exp.engine_kind)
        log, records = run.log, run.records
    except TruncationError as exc:
        print(f"truncated: {exc}", file=sys.stderr)
        log, records = exc.log, getattr(exc, "records", [])
        status = EXIT_TRUNCATED
    log.to_csv(out / "events.csv", with_offsets=True)
    write_magnetization_csv(log, out / "magnetization.csv")
    try:
        rescale_trajectory(log, exp.params).to_csv(out / "rescaled.csv")
    except RegimeError as exc:
        print(f"warning: rescaled.csv not written: {exc}", file=sys.stderr)
    write_cycles_csv(records, out / "cycles.csv")
    return status


def _run_suite(suite: str, exp: harness.ExperimentConfig, cfg: dict, threads) -> harness.Report:
    if suite == "t1-exact":
        return harness.verify_t1_exact(exp, threads)
    if suite == "oracle":
        return harness.verify_oracle(exp, threads)
    if suite == "gumbel":
        return harness.verify_gumbel(exp, threads)
    if suite == "cover":
        return harness.verify_cover(exp, threads)
    if suite == "cycles":
        return harness.verify_cycles(exp, threads)
    if suite == "sawtooth":
        return harness.verify_sawtooth(exp, cfg.get("grid", [exp.params.N]), threads)
    if suite == "profile":
        return harness.verify_profile(exp, threads)
    raise ConfigError(f"unknown suite {suite!r}")


def cmd_verify(args) -> int:
    cfg = load_config(args.config, SUITE_DEFAULTS[args.suite], args.seed)
    if args.suite == "oracle":
        cfg["engine"] = THINNING  # validates the thinning guard up front
    exp = build_experiment(cfg)
    if args.suite == "sawtooth" and not cfg.get("grid"):
        raise ConfigError("empty grid")
    _warn(exp.params)
    try:
        report = _run_suite(args.suite, exp, cfg, args.threads)
    except (ValueError, ProfileError) as exc:
        raise ConfigError(str(exc)) from exc
    for t in report.tests:
        print(t.line())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / f"report_{args.suite}.json")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, SWEEP_DEFAULTS, args.seed)
    grid = cfg.get("grid", [])
    if not grid:
        raise ConfigError("empty grid")
    exp = build_experiment(cfg)
    rows = harness.sweep(exp, grid, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(harness.SWEEP_HEADER)
        for row in rows:
            w.writerow([row["N"]] + [f"{row[k]:.17g}" for k in harness.SWEEP_HEADER[1:]])
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=_u64, help="override the configured seed")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${harness.THREADS_ENV} or CPU count)")
    common.add_argument("--out", default=".", help="output directory")

    parser = argparse.ArgumentParser(prog="dikmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="run one trajectory and write CSV files")
    sim.set_defaults(func=cmd_simulate)
    ver = sub.add_parser("verify", parents=[common], help="run a verification suite")
    ver.add_argument("suite", choices=sorted(SUITE_DEFAULTS))
    ver.set_defaults(func=cmd_verify)
    sw = sub.add_parser("sweep", parents=[common], help="summary statistics over a grid of N")
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TruncationError as exc:
        print(f"truncated: {exc}", file=sys.stderr)
        return EXIT_TRUNCATED


if __name__ == "__main__":
    sys.exit(main())
