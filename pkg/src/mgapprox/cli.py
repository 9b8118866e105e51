"""Batch front-end: ``mgapprox run <config>`` and ``mgapprox list-models``.

A run config is a TOML file::

    [model]
    id = "tg-2p-smooth"
    [model.params]
    sigma = 0.15

    [run]
    mode = "nonzero-sum-discounted"
    deltas = [0.2, 0.1, 0.05]
    beta = 0.9
    refine = 4
    seed = 0

    [quadrature]
    resolution = 8
    scheme = "midpoint"

    [solver]
    tol = 1e-8

    [truncation]        # optional, for games on unbounded state spaces
    indices = [1, 2, 3]
    probe = [-1.0, 1.0]
"""

from __future__ import annotations

import argparse
import csv
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .model import DomainError, ResourceError
from .quantize import (
    DEFAULT_CAP,
    build_action_net,
    build_finite_game,
    build_state_net,
    dumps,
)
from .solve import (
    backward_induction_nash,
    nash_value_iteration,
    shapley_iteration,
    team_value_iteration,
)
from .truncate import LadderConfig, build_truncated_game, build_truncation, leakage
from .verify import certify_epsilon, locate_states
from .zoo import REGISTRY, list_models, make_model

MODES = ("nonzero-sum-discounted", "nonzero-sum-finite-horizon", "zero-sum", "team")
TIMING_KEYS = ("seconds", "wall_clock")


class ConfigError(ValueError):
    def __init__(self, message: str, where: tuple | None = None):
        super().__init__(message)
        self.where = where


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    stage_tol: float = 1e-9
    max_iter: int = 2000
    damping: float = 0.5
    budget: int = 32
    cap: int = DEFAULT_CAP
    omega_samples: int = 256


@dataclass(frozen=True)
class TruncationConfig:
    indices: tuple = (1, 2, 3)
    center: float = 0.0
    radius0: float = 0.0
    slope: float = 1.0
    annulus_resolution: int = 16
    probe: tuple = (-1.0, 1.0)
    probe_points: int = 201


@dataclass(frozen=True)
class RunConfig:
    model_id: str
    mode: str
    deltas: tuple
    model_params: tuple = ()
    beta: float | None = None
    T: int | None = None
    refine: int = 4
    seed: int = 0
    action_deltas: tuple | None = None
    resolution: int = 8
    scheme: str = "midpoint"
    solver: SolverConfig = field(default_factory=SolverConfig)
    truncation: TruncationConfig | None = None

    @property
    def params(self) -> dict:
        return dict(self.model_params)

    def to_dict(self) -> dict:
        """Nested dict in the layout of the TOML file."""
        run = {"mode": self.mode, "deltas": list(self.deltas), "refine": self.refine,
               "seed": self.seed}
        if self.beta is not None:
            run["beta"] = self.beta
        if self.T is not None:
            run["T"] = self.T
        if self.action_deltas is not None:
            run["action_deltas"] = list(self.action_deltas)
        doc = {
            "model": {"id": self.model_id, "params": self.params},
            "run": run,
            "quadrature": {"resolution": self.resolution, "scheme": self.scheme},
            "solver": asdict(self.solver),
        }
        if self.truncation is not None:
            trunc = asdict(self.truncation)
            trunc["indices"] = list(trunc["indices"])
            trunc["probe"] = list(trunc["probe"])
            doc["truncation"] = trunc
        return doc


def _find_line(text: str, section: str, key: str | None = None) -> int | None:
    """Line number of ``key`` inside ``[section]``, or of the header itself."""
    current = None
    header_line = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\[\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if current == section:
                header_line = no
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return no
    return header_line


def _typed(value, kind, where):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    raise TypeError(kind)


def _section(doc: dict, name: str, allowed) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table", ("section", name))
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in [{name}]", (name, key))
    return sec


def _dataclass_section(doc, name, cls):
    types = {f.name: f.type for f in fields(cls)}
    sec = _section(doc, name, types)
    kwargs = {}
    for key, value in sec.items():
        kind = {"float": float, "int": int}.get(types[key])
        try:
            if kind is not None:
                kwargs[key] = _typed(value, kind, f"{name}.{key}")
            elif key in ("indices", "probe"):
                if not isinstance(value, list) or not value:
                    raise ConfigError(f"{name}.{key} must be a nonempty array")
                item = int if key == "indices" else float
                kwargs[key] = tuple(_typed(v, item, f"{name}.{key}") for v in value)
        except ConfigError as err:
            raise ConfigError(str(err), (name, key)) from None
    return cls(**kwargs)


def config_from_dict(doc: dict) -> RunConfig:
    """Validate a parsed TOML document.

    Errors carry ``(section, key)`` so the caller can anchor them to a line.
    """
    for name in doc:
        if name not in ("model", "run", "quadrature", "solver", "truncation"):
            raise ConfigError(f"unknown section [{name}]", ("section", name))
    model = _section(doc, "model", ("id", "params"))
    if "id" not in model:
        raise ConfigError("[model] needs an id", ("section", "model"))
    model_id = model["id"]
    if model_id not in REGISTRY:
        raise ConfigError(f"unknown model id '{model_id}'", ("model", "id"))
    params = model.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("model.params must be a table", ("model", "params"))

    run = _section(doc, "run", ("mode", "deltas", "beta", "T", "refine", "seed",
                                "action_deltas"))
    mode = run.get("mode")
    if mode not in MODES:
        raise ConfigError(f"run.mode must be one of {', '.join(MODES)}", ("run", "mode"))
    deltas = run.get("deltas")
    if not isinstance(deltas, list) or not deltas:
        raise ConfigError("run.deltas must be a nonempty array", ("run", "deltas"))
    try:
        deltas = tuple(_typed(d, float, "run.deltas") for d in deltas)
    except ConfigError as err:
        raise ConfigError(str(err), ("run", "deltas")) from None
    if any(d <= 0 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ConfigError("run.deltas must be positive and strictly decreasing",
                          ("run", "deltas"))
    action_deltas = run.get("action_deltas")
    if action_deltas is not None:
        if not isinstance(action_deltas, list) or len(action_deltas) != len(deltas):
            raise ConfigError("run.action_deltas must match run.deltas in length",
                              ("run", "action_deltas"))
        action_deltas = tuple(_typed(d, float, "run.action_deltas") for d in action_deltas)

    beta = T = None
    if mode == "nonzero-sum-finite-horizon":
        if "T" not in run or "beta" in run:
            raise ConfigError("finite-horizon mode needs run.T and no run.beta", ("run", "mode"))
        T = _typed(run["T"], int, "run.T")
        if T < 1:
            raise ConfigError("run.T must be >= 1", ("run", "T"))
    else:
        if "T" in run:
            raise ConfigError(f"mode {mode} is discounted; use run.beta", ("run", "T"))
        beta = _typed(run.get("beta", 0.9), float, "run.beta")
        if not 0.0 <= beta < 1.0:
            raise ConfigError("run.beta must lie in [0, 1)", ("run", "beta"))
    refine = _typed(run.get("refine", 4), int, "run.refine")
    if refine < 2:
        raise ConfigError("run.refine must be >= 2", ("run", "refine"))
    seed = _typed(run.get("seed", 0), int, "run.seed")

    quad = _section(doc, "quadrature", ("resolution", "scheme"))
    resolution = _typed(quad.get("resolution", 8), int, "quadrature.resolution")
    scheme = _typed(quad.get("scheme", "midpoint"), str, "quadrature.scheme")
    if resolution < 1:
        raise ConfigError("quadrature.resolution must be >= 1", ("quadrature", "resolution"))
    if scheme not in ("midpoint", "gauss-legendre"):
        raise ConfigError("quadrature.scheme must be midpoint or gauss-legendre", ("quadrature", "scheme"))

    solver = _dataclass_section(doc, "solver", SolverConfig)
    if solver.tol <= 0 or solver.stage_tol <= 0 or solver.budget < 1 or solver.cap < 1:
        raise ConfigError("solver tolerances, budget and cap must be positive",
                          ("section", "solver"))
    truncation = None
    if "truncation" in doc:
        truncation = _dataclass_section(doc, "truncation", TruncationConfig)
        idx = truncation.indices
        if any(n < 1 for n in idx) or any(b <= a for a, b in zip(idx, idx[1:])):
            raise ConfigError("truncation.indices must be >= 1 and strictly increasing",
                              ("truncation", "indices"))
        if truncation.slope <= 0:
            raise ConfigError("truncation.slope must be positive (radii must grow)",
                              ("truncation", "slope"))
        if len(truncation.probe) != 2 or truncation.probe[0] >= truncation.probe[1]:
            raise ConfigError("truncation.probe must be [lower, upper]", ("truncation", "probe"))
        inner = truncation.radius0 + truncation.slope * idx[0]
        if (truncation.probe[0] < truncation.center - inner
                or truncation.probe[1] > truncation.center + inner):
            raise ConfigError(f"truncation.probe must lie inside K_{idx[0]}",
                              ("truncation", "probe"))

    return RunConfig(model_id=model_id, mode=mode, deltas=deltas,
                     model_params=tuple(sorted(params.items())), beta=beta, T=T,
                     refine=refine, seed=seed, action_deltas=action_deltas,
                     resolution=resolution, scheme=scheme, solver=solver,
                     truncation=truncation)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse TOML text; every error message starts with ``source:line:``."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        m = re.search(r"line (\d+)", str(err))
        line = m.group(1) if m else "1"
        raise ConfigError(f"{source}:{line}: {err}") from None
    try:
        cfg = config_from_dict(doc)
        _build_model(cfg)
    except ConfigError as err:
        raise ConfigError(f"{source}:{_anchor(text, err.where)}: {err}") from None
    except DomainError as err:
        line = _find_line(text, "model.params") or _find_line(text, "model", "id") or 1
        raise ConfigError(f"{source}:{line}: {err}") from None
    return cfg


def _anchor(text: str, where) -> int:
    if where is None:
        return 1
    section, key = where
    if section == "section":
        return _find_line(text, key) or 1
    return _find_line(text, section, key) or _find_line(text, section) or 1


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"{path}:1: cannot read config: {err.strerror}") from None
    return parse_config(text, str(path))


def _build_model(cfg: RunConfig):
    params = cfg.params
    if cfg.T is not None:
        params["T"] = cfg.T
    else:
        params["beta"] = cfg.beta
    return make_model(cfg.model_id, **params)


def _solve(cfg: RunConfig, fgame):
    s = cfg.solver
    if cfg.mode == "nonzero-sum-discounted":
        return nash_value_iteration(fgame, tol=s.tol, max_iter=s.max_iter, damping=s.damping,
                                    seed=cfg.seed, stage_tol=s.stage_tol, budget=s.budget)
    if cfg.mode == "nonzero-sum-finite-horizon":
        return backward_induction_nash(fgame, tol=s.stage_tol, seed=cfg.seed, budget=s.budget)
    if cfg.mode == "zero-sum":
        return shapley_iteration(fgame, tol=s.tol)
    return team_value_iteration(fgame, tol=s.tol)


def _rung(cfg: RunConfig, game, delta: float, action_delta: float) -> tuple:
    start = time.perf_counter()
    snet = build_state_net(game.state_space, delta, cfg.resolution, cfg.scheme,
                           max_states=cfg.solver.cap)
    anet = build_action_net(game.action_spaces, action_delta)
    fgame = build_finite_game(game, snet, anet, cap=cfg.solver.cap)
    build_seconds = time.perf_counter() - start
    start = time.perf_counter()
    report = _solve(cfg, fgame)
    solve_seconds = time.perf_counter() - start
    cert = certify_epsilon(game, snet, anet, report.profile, refine=cfg.refine,
                           tol=cfg.solver.tol, report=report, cap=cfg.solver.cap,
                           omega_samples=cfg.solver.omega_samples, seed=cfg.seed)
    cert.seconds["build"] = build_seconds
    cert.seconds["solve"] = solve_seconds
    record = {
        "delta": delta,
        "action_delta": action_delta,
        "k_states": fgame.num_states,
        "num_joint": fgame.num_joint,
        "normalization_defect": fgame.provenance.get("normalization_defect"),
        "certificate": cert.to_dict(),
        "solve": report.to_dict(),
    }
    return record, cert, report, snet, fgame


def _probe_table(game, report, snet, probe: np.ndarray) -> np.ndarray:
    values = report.values if report.values.ndim == 2 else report.values[:, 0]
    idx = locate_states(game, snet, probe)
    return values[:, idx]


def run(cfg: RunConfig, out_dir) -> int:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wall = time.perf_counter()
    base = _build_model(cfg)
    action_deltas = cfg.action_deltas or cfg.deltas
    rungs, rows = [], []
    status = 0
    truncation_summary = None

    def add_row(record, cert):
        eps = np.asarray(cert.eps, dtype=float)
        rows.append([record["delta"], cfg.refine, record["k_states"], *eps.tolist(),
                     cert.operator_residual, cert.omega_hat, sum(cert.seconds.values())])

    try:
        if cfg.truncation is None:
            for delta, adelta in zip(cfg.deltas, action_deltas):
                record, cert, *_ = _rung(cfg, base, delta, adelta)
                rungs.append(record)
                add_row(record, cert)
        else:
            tc = cfg.truncation
            ladder = LadderConfig(tc.center, tc.radius0, tc.slope, tc.annulus_resolution)
            lo, hi = tc.probe
            probe = np.linspace(lo, hi, tc.probe_points)[:, None]
            tables, leaks = [], []
            for n in tc.indices:
                trunc = build_truncation(base, n, ladder)
                game = build_truncated_game(base, trunc)
                table = None
                for delta, adelta in zip(cfg.deltas, action_deltas):
                    record, cert, report, snet, fgame = _rung(cfg, game, delta, adelta)
                    record["n"] = n
                    record["radius"] = ladder.radius(n)
                    record["max_leakage"] = float(leakage(fgame).max())
                    rungs.append(record)
                    add_row(record, cert)
                    table = _probe_table(game, report, snet, probe)
                tables.append(table)
                leaks.append(rungs[-1]["max_leakage"])
            diffs = [float(np.max(np.abs(b - a))) for a, b in zip(tables, tables[1:])]
            truncation_summary = {"indices": list(tc.indices), "probe": [lo, hi],
                                  "table_differences": diffs, "max_leakage": leaks}
    except ResourceError as err:
        print(f"mgapprox: resource cap hit: {err}", file=sys.stderr)
        status = 3

    eps_cols = [f"eps_{i + 1}" for i in range(base.num_players)]
    header = ["delta", "refine", "k_states", *eps_cols, "residual", "omega_hat", "seconds"]
    with open(out_dir / "convergence.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    result = {
        "artifact": "mgapprox",
        "version": __version__,
        "config": cfg.to_dict(),
        "model": {"name": base.name, "num_players": base.num_players,
                  "cost_bound": base.cost_bound},
        "completed": status == 0,
        "rungs": rungs,
    }
    if truncation_summary is not None:
        result["truncation"] = truncation_summary
    result["wall_clock"] = time.perf_counter() - wall
    (out_dir / "result.json").write_text(dumps(result, indent=2) + "\n")
    return status


def strip_timing(obj):
    """Copy of a result document with timing fields removed."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgapprox",
                                     description="Finite approximations of Markov games.")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--out-dir", default=None, help="output directory (default: out)")
    parser.add_argument("--threads", type=int, default=None,
                        help="thread count for BLAS-backed linear algebra")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a config file")
    p_run.add_argument("config")
    sub.add_parser("list-models", help="list the model zoo")
    return parser


def _set_threads(n: int):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("mgapprox: --threads must be >= 1", file=sys.stderr)
            return 2
        _set_threads(args.threads)
    if args.command == "list-models":
        print(list_models())
        return 0
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = RunConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)},
                               "seed": args.seed})
        return run(cfg, args.out_dir or "out")
    except ConfigError as err:
        print(f"mgapprox: {err}", file=sys.stderr)
        return 2
    except ResourceError as err:
        print(f"mgapprox: resource cap hit: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
