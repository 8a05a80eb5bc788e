"""Command-line entry point: ``toomsim [options] COMMAND [options]``.

Settings are resolved in three layers, later ones winning: the built-in
defaults of the command, an optional ``--config`` file (JSON or YAML, keys
spelled like the long flags with ``-`` or ``_``), and explicit flags.  The
output directory defaults to ``./toomsim-out``; the ``TOOMSIM_OUTPUT_DIR``
environment variable replaces that default and ``--output-dir`` wins over
both.

Each run writes ``<command>_summary.json`` (resolved config, seed, wall
time, metrics and per-check verdicts) and one CSV per series.  The exit
code is 0 iff every check passed, 1 if a check failed, and 2 on a
configuration or runtime error, which is reported as a JSON object with
an ``error`` key on stdout.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from . import experiments as ex
from .dynamics import EventStream, JumpLogWriter, Params, run, sample_initial
from .observables import simulate_observables, write_observables_csv
from .tagged import simulate_tagged, write_position_csv

COMMANDS = ("simulate", "drift", "diffusion", "clt", "couple", "flux", "env-check", "reverse-check", "oracle-report")
OUTPUT_ENV = "TOOMSIM_OUTPUT_DIR"

# Per-command defaults; anything not listed falls back to ExperimentConfig's.
COMMAND_DEFAULTS = {
    "simulate": dict(L=1024, p=0.5, lambda_plus=0.5, horizon=100.0, sample_dt=1.0),
    "drift": dict(L=4096, p=0.5, lambda_plus=1.0, horizon=1e4, trials=32),
    "diffusion": dict(L=4096, p=0.3, lambda_plus=1.0, horizon=2.5e5, trials=8, window=1000.0, gk_window=250.0, sample_dt=0.25, lag_max=400),
    "clt": dict(L=4096, p=0.3, lambda_plus=1.0, horizon=2.5e5, trials=8, window=1000.0, sample_dt=0.25, lag_max=400),
    "couple": dict(L=4096, p=0.5, lambda_plus=0.5, horizon=200.0, trials=200),
    "flux": dict(L=1024, p=0.5, lambda_plus=0.5, trials=400),
    "env-check": dict(L=4096, p=0.5, lambda_plus=1.0, horizon=1e4, trials=32),
    "reverse-check": dict(n_max=10),
    "oracle-report": dict(p=0.5, lambda_plus=0.5, n_max=10),
}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message


@dataclass
class ExperimentConfig:
    command: str
    L: int = 4096
    p: float = 0.5
    lambda_plus: float = 1.0
    lambda_minus: Optional[float] = None
    seed: int = 0
    horizon: float = 1e4
    trials: int = 32
    jobs: int = 1
    window: float = 1000.0
    gk_window: Optional[float] = None
    sample_dt: float = 1.0
    lag_max: int = 400
    sign: int = 1
    abs_tol: float = 0.05
    radius: int = 10
    n_min: int = 2
    n_max: int = 10
    times: List[float] = field(default_factory=lambda: [50.0, 100.0, 200.0])
    gammas: List[float] = field(default_factory=lambda: [0.1, 0.25, 0.5])
    speeds: List[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.2, 0.5, 1.0])
    threshold_speed: float = 0.1
    radii: Optional[List[float]] = None
    jump_log: Optional[str] = None
    output_dir: str = "toomsim-out"

    def params(self) -> Params:
        try:
            return Params(self.L, self.p, self.lambda_plus, self.lambda_minus)
        except ValueError as exc:
            raise ConfigError(_field_of(str(exc)), str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


_PARAM_FIELDS = {"ring_size": "L", "p": "p", "lambda_plus": "lambda_plus", "lambda_minus": "lambda_minus", "lambda": "lambda_plus"}


def _field_of(message: str) -> str:
    head = message.split()[0].strip(":=") if message else ""
    return _PARAM_FIELDS.get(head, head or "params")


def _num_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors surface as :class:`ConfigError`."""

    def error(self, message):
        m = re.match(r"argument (?:--)?([\w-]+)", message)
        raise ConfigError(m.group(1).replace("-", "_") if m else "argv", message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="toomsim", description="Simulate and verify the one-dimensional Toom particle system.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON or YAML file of settings; flags override it")
    ap.add_argument("--L", dest="L", type=int, help="ring size")
    ap.add_argument("--p", type=float, help="density of + spins, in (0, 1)")
    ap.add_argument("--lambda-plus", dest="lambda_plus", type=float, help="rate of + clocks")
    ap.add_argument("--lambda-minus", dest="lambda_minus", type=float, help="rate of - clocks (default 1 - lambda-plus)")
    ap.add_argument("--seed", type=int, help="master seed")
    ap.add_argument("--horizon", type=float, help="time horizon per trial")
    ap.add_argument("--trials", type=int, help="number of independent trials")
    ap.add_argument("--jobs", type=int, help="worker processes for independent trials")
    ap.add_argument("--window", type=float, help="window length for CLT increments")
    ap.add_argument("--gk-window", dest="gk_window", type=float, help="window of the direct estimate compared with Green-Kubo")
    ap.add_argument("--sample-dt", dest="sample_dt", type=float, help="sampling step of time series")
    ap.add_argument("--lag-max", dest="lag_max", type=int, help="largest correlation lag in samples")
    ap.add_argument("--sign", type=int, choices=(1, -1), help="sign of the tagged particle")
    ap.add_argument("--abs-tol", dest="abs_tol", type=float, help="absolute floor of the drift tolerance")
    ap.add_argument("--radius", type=int, help="environment radius for env-check")
    ap.add_argument("--n-min", dest="n_min", type=int, help="smallest cycle for exact checks")
    ap.add_argument("--n-max", dest="n_max", type=int, help="largest cycle for exact checks")
    ap.add_argument("--times", type=_num_list, help="flux checkpoint times, comma separated")
    ap.add_argument("--gammas", type=_num_list, help="MGF arguments, comma separated")
    ap.add_argument("--speeds", type=_num_list, help="front speed grid c, comma separated")
    ap.add_argument("--threshold-speed", dest="threshold_speed", type=float, help="c in the runaway check")
    ap.add_argument("--radii", type=_num_list, help="R grid of the tail table, comma separated")
    ap.add_argument("--jump-log", dest="jump_log", help="simulate: also write executed jumps as JSON Lines")
    ap.add_argument("--output-dir", dest="output_dir", help=f"output directory (env {OUTPUT_ENV})")
    return ap


def _load_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def parse_config(argv: Optional[List[str]] = None) -> ExperimentConfig:
    """Resolve defaults, config file and flags into a validated config."""
    ns = build_parser().parse_args(argv)
    values = dict(COMMAND_DEFAULTS.get(ns.command, {}))
    env_dir = os.environ.get(OUTPUT_ENV)
    if env_dir:
        values["output_dir"] = env_dir
    if ns.config:
        file_values = _load_file(ns.config)
        file_values.pop("command", None)
        if env_dir:
            file_values.pop("output_dir", None)
        values.update(file_values)
    values.update({k: v for k, v in vars(ns).items() if v is not None and k not in ("command", "config")})
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(unknown[0], "unknown setting")
    try:
        cfg = ExperimentConfig(command=ns.command, **values)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from None
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    cfg.params()
    for name in ("trials", "jobs", "lag_max", "radius"):
        if int(getattr(cfg, name)) < 1:
            raise ConfigError(name, "must be a positive integer")
    for name in ("horizon", "window", "sample_dt"):
        if not float(getattr(cfg, name)) > 0:
            raise ConfigError(name, "must be positive")
    if cfg.gk_window is not None and not cfg.gk_window > 0:
        raise ConfigError("gk_window", "must be positive")
    if not 2 <= cfg.n_min <= cfg.n_max <= 12:
        raise ConfigError("n_max" if cfg.n_max > 12 or cfg.n_max < cfg.n_min else "n_min", "need 2 <= n-min <= n-max <= 12")


def _run_simulate(cfg: ExperimentConfig, params: Params, out: Path) -> ex.ExperimentResult:
    tagged = simulate_tagged(params, cfg.seed, cfg.horizon, cfg.sign, cfg.sample_dt, keep_config=True)
    n = int(np.floor(cfg.horizon / cfg.sample_dt + 1e-9))
    obs = simulate_observables(params, cfg.seed, (np.arange(n) + 1) * cfg.sample_dt)
    final_spin = int(tagged.config.spins[tagged.final_position % params.ring_size])
    checks = [ex.Check("tagged_spin_coherent", final_spin == cfg.sign, final_spin, cfg.sign)]
    metrics = {"finalPosition": tagged.final_position, "velocity": tagged.velocity, "taggedJumps": tagged.n_jumps, "fluxAtHorizon": int(obs.total[-1, 0]) if n else 0}
    with open(out / "simulate_positions.csv", "w", newline="") as fh:
        _csv_header(fh, cfg)
        write_position_csv(fh, tagged)
    with open(out / "simulate_observables.csv", "w", newline="") as fh:
        _csv_header(fh, cfg)
        write_observables_csv(fh, obs)
    if cfg.jump_log:
        config = sample_initial(params, np.random.default_rng(np.random.SeedSequence((cfg.seed, 6))))
        before = config.plus_count
        with open(out / cfg.jump_log, "w") as fh:
            summary = run(config, EventStream.for_params(cfg.seed, params), cfg.horizon, [JumpLogWriter(fh, "right")])
        checks.append(ex.Check("plus_count_conserved", config.plus_count == before, config.plus_count, before))
        metrics["loggedEvents"] = summary.n_events
        metrics["loggedJumps"] = summary.n_executed
    return ex.ExperimentResult("simulate", metrics, checks)


def execute(cfg: ExperimentConfig) -> int:
    """Run the configured command, write its artifacts and return the exit code."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.params() if cfg.command not in ("reverse-check",) else None
    start = time.perf_counter()
    kw = dict(master_seed=cfg.seed)
    c = cfg.command
    if c == "simulate":
        result = _run_simulate(cfg, params, out)
    elif c == "drift":
        result = ex.drift_experiment(params, cfg.trials, cfg.horizon, sign=cfg.sign, abs_tol=cfg.abs_tol, jobs=cfg.jobs, **kw)
    elif c in ("diffusion", "clt"):
        fn = ex.diffusion_experiment if c == "diffusion" else ex.clt_experiment
        extra = {"gk_window": cfg.gk_window} if c == "diffusion" else {}
        result = fn(params, trials=cfg.trials, horizon=cfg.horizon, window=cfg.window, sample_dt=cfg.sample_dt, lag_max=cfg.lag_max, jobs=cfg.jobs, **extra, **kw)
    elif c == "couple":
        result = ex.couple_experiment(params, cfg.trials, cfg.horizon, cfg.speeds, cfg.threshold_speed, cfg.radii, **kw)
    elif c == "flux":
        result = ex.flux_experiment(params, cfg.trials, cfg.times, cfg.gammas, jobs=cfg.jobs, **kw)
    elif c == "env-check":
        result = ex.env_check_experiment(params, cfg.trials, cfg.horizon, cfg.radius, jobs=cfg.jobs, **kw)
    elif c == "reverse-check":
        result = ex.reverse_check_experiment(n_max=cfg.n_max, n_min=cfg.n_min, seed=cfg.seed)
    else:
        result = ex.oracle_report_experiment(params, cfg.n_min, cfg.n_max)
    wall = time.perf_counter() - start
    for name, (header, rows) in result.series.items():
        with open(out / f"{c}_{name}.csv", "w", newline="") as fh:
            _csv_header(fh, cfg)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in rows])
    summary = {
        "command": c,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "wallTimeSeconds": wall,
        **result.to_dict(),
    }
    (out / f"{c}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    verdicts = {ch.name: ch.passed for ch in result.checks}
    print(json.dumps({"command": c, "passed": result.passed, "checks": verdicts, "summary": str(out / f"{c}_summary.json")}))
    return 0 if result.passed else 1


def _csv_header(fh, cfg: ExperimentConfig) -> None:
    fh.write(f"# toomsim {cfg.command} seed={cfg.seed} L={cfg.L} p={cfg.p!r} lambda_plus={cfg.lambda_plus!r} lambda_minus={cfg.lambda_minus!r}\n")


def _error(kind: str, message: str, field_name: Optional[str] = None) -> int:
    err = {"type": kind, "message": message}
    if field_name:
        err["field"] = field_name
    print(json.dumps({"error": err}))
    return 2


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        return _error("ConfigError", exc.message, exc.field)
    try:
        return execute(cfg)
    except ConfigError as exc:
        return _error("ConfigError", exc.message, exc.field)
    except Exception as exc:  # reported, not swallowed: exit code 2
        return _error(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
