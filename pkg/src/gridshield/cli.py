"""Command-line front end.

Three commands over a single JSON config:

- ``safeset``  — compute the islanding safe-set sequence for an instant
  (hull CSV + full set JSON), optionally the whole-day safe band.
- ``simulate`` — run day episodes with a built-in agent, write per-day
  traces and the evaluation metrics table.
- ``serve``    — expose the environment over newline-delimited JSON on
  TCP or stdio for external training loops.

Exit codes: 0 success, 2 config error, 3 ill-posed scenario (empty safe
set / aborted episode), 4 numerical solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import signal
import socket
import socketserver
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .czono import interval_hull
from .env import (
    BASELINE_SHIELD,
    FULL_SHIELD,
    ExogenousSeries,
    ForecastModel,
    MicroGridEnv,
    SynthProfile,
    _Forecaster,
    format_metrics_table,
    greedy_agent,
    load_series,
    metrics_rows,
    observation_layout,
    random_admissible_agent,
    run_days,
)
from .gridmodel import GridParams, MarketParams, StorageParams, default_grid
from .lpqp import DEFAULT_TOL, SolverFailure
from .reach import IllPosedScenarioError, compute_safe_sets
from .shield import Action

log = logging.getLogger("gridshield.cli")

PROTOCOL_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration file or values."""


@dataclass(frozen=True)
class Config:
    grid: GridParams
    forecast: ForecastModel
    mode: str = FULL_SHIELD
    alpha: float = 0.5
    beta: float = 0.5
    baseline_penalty_coef: float = 1.0
    tol: float = DEFAULT_TOL
    seed: int = 0
    data_source: str = "synthetic"          # "synthetic" | "file"
    data_path: Optional[str] = None
    synth_profile: SynthProfile = SynthProfile()
    out_dir: str = "gridshield_out"
    safeset_band: bool = False
    n_days: int = 1


def _build_dataclass(cls, data: dict, context: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{context}: {err}") from err


def _build_grid(data: dict) -> GridParams:
    if not data:
        return default_grid()
    data = dict(data)
    storages = data.pop("storages", None)
    markets = data.pop("markets", None)
    base = default_grid()
    stor = (
        tuple(_build_dataclass(StorageParams, s, "grid.storages") for s in storages)
        if storages is not None
        else base.storages
    )
    mark = (
        tuple(_build_dataclass(MarketParams, mk, "grid.markets") for mk in markets)
        if markets is not None
        else base.markets
    )
    merged = {
        "tau": data.pop("tau", base.tau),
        "horizon_T": data.pop("horizon_T", base.horizon_T),
        "islanding_H": data.pop("islanding_H", base.islanding_H),
    }
    if data:
        raise ConfigError(f"grid: unknown keys {sorted(data)}")
    try:
        return GridParams(storages=stor, markets=mark, **merged)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"grid: {err}") from err


def load_config(path: Optional[str] = None) -> Config:
    """Parse and validate the JSON config; missing sections use defaults."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as err:
            raise ConfigError(f"cannot read config: {err}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
    known = {
        "grid", "forecast", "shield", "reward", "data", "seed", "out_dir",
        "safeset_band", "n_days",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")

    grid = _build_grid(raw.get("grid", {}))
    forecast = _build_dataclass(ForecastModel, dict(raw.get("forecast", {})), "forecast")

    shield_cfg = dict(raw.get("shield", {}))
    mode = shield_cfg.pop("mode", FULL_SHIELD)
    if mode not in (FULL_SHIELD, BASELINE_SHIELD):
        raise ConfigError(f"shield.mode must be {FULL_SHIELD!r} or {BASELINE_SHIELD!r}")
    pen = shield_cfg.pop("baseline_penalty_coef", 1.0)
    tol = shield_cfg.pop("tol", DEFAULT_TOL)
    if shield_cfg:
        raise ConfigError(f"shield: unknown keys {sorted(shield_cfg)}")
    if not (isinstance(tol, (int, float)) and 0 < tol <= 1e-4):
        raise ConfigError("shield.tol must be a small positive number")

    reward_cfg = dict(raw.get("reward", {}))
    alpha = reward_cfg.pop("alpha", 0.5)
    beta = reward_cfg.pop("beta", 0.5)
    if reward_cfg:
        raise ConfigError(f"reward: unknown keys {sorted(reward_cfg)}")
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not (isinstance(v, (int, float)) and 0.0 <= v <= 1.0):
            raise ConfigError(f"reward.{name} must lie in [0, 1]")

    data_cfg = dict(raw.get("data", {}))
    source = data_cfg.pop("source", "synthetic")
    data_path = data_cfg.pop("path", None)
    profile = _build_dataclass(SynthProfile, dict(data_cfg.pop("profile", {})), "data.profile")
    if data_cfg:
        raise ConfigError(f"data: unknown keys {sorted(data_cfg)}")
    if source not in ("synthetic", "file"):
        raise ConfigError("data.source must be 'synthetic' or 'file'")
    if source == "file" and not data_path:
        raise ConfigError("data.source 'file' requires data.path")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    n_days = raw.get("n_days", 1)
    if not (isinstance(n_days, int) and n_days >= 1):
        raise ConfigError("n_days must be a positive integer")

    return Config(
        grid=grid,
        forecast=forecast,
        mode=mode,
        alpha=float(alpha),
        beta=float(beta),
        baseline_penalty_coef=float(pen),
        tol=float(tol),
        seed=seed,
        data_source=source,
        data_path=data_path,
        synth_profile=profile,
        out_dir=str(raw.get("out_dir", "gridshield_out")),
        safeset_band=bool(raw.get("safeset_band", False)),
        n_days=n_days,
    )


def _load_data(config: Config, n_days: int) -> Optional[ExogenousSeries]:
    if config.data_source == "file":
        try:
            return load_series(config.data_path)
        except (OSError, ValueError) as err:
            raise ConfigError(str(err)) from err
    return None  # synthetic: MicroGridEnv generates it


def build_env(config: Config, n_days: Optional[int] = None) -> MicroGridEnv:
    n_days = n_days if n_days is not None else config.n_days
    series = _load_data(config, n_days)
    return MicroGridEnv(
        params=config.grid,
        forecast_model=config.forecast,
        series=series,
        mode=config.mode,
        alpha=config.alpha,
        beta=config.beta,
        baseline_penalty_coef=config.baseline_penalty_coef,
        tol=config.tol,
        synth_profile=config.synth_profile,
        synth_seed=config.seed,
        n_days=n_days,
    )


# ---------------------------------------------------------------------------
# safeset


def cmd_safeset(config: Config, day: int = 0, t0: int = 0) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = build_env(config, n_days=max(day + 1, 1))
    fc = _Forecaster(env.series, config.forecast)
    T = config.grid.horizon_T
    anchor = day * T + t0
    fb = fc.lower_bound_window(anchor, anchor, config.grid.islanding_H)
    seq = compute_safe_sets(config.grid, fb, check_empty=True, tol=config.tol)

    sets_path = out / "safeset_sets.json"
    with open(sets_path, "w") as fh:
        json.dump(
            {
                "day": day,
                "t0": t0,
                "islanding_H": config.grid.islanding_H,
                "d_lower": fb.d_lower.tolist(),
                "sets": [s.to_dict() for s in seq.sets],
            },
            fh,
        )

    n = config.grid.n_storage
    hull_path = out / "safeset_hulls.csv"
    with open(hull_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["step"] + [f"lower_{i}" for i in range(n)] + [f"upper_{i}" for i in range(n)]
        )
        for s, Z in enumerate(seq.sets):
            hull = interval_hull(Z)
            writer.writerow(
                [s]
                + [repr(float(v)) for v in hull.lower]
                + [repr(float(v)) for v in hull.upper]
            )

    written = [str(sets_path), str(hull_path)]
    if config.safeset_band:
        band_path = out / "safeset_band.csv"
        with open(band_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t_min"] + [f"lower_{i}" for i in range(n)] + [f"upper_{i}" for i in range(n)]
            )
            for t in range(T):
                a = day * T + t
                fb_t = fc.lower_bound_window(a, a, config.grid.islanding_H)
                seq_t = compute_safe_sets(config.grid, fb_t, check_empty=True, tol=config.tol)
                hull = interval_hull(seq_t.sets[0])
                writer.writerow(
                    [t]
                    + [repr(float(v)) for v in hull.lower]
                    + [repr(float(v)) for v in hull.upper]
                )
        written.append(str(band_path))
    print("\n".join(written))
    return 0


# ---------------------------------------------------------------------------
# simulate


_AGENTS = ("greedy", "random")


def _make_agent(name: str, config: Config):
    if name == "greedy":
        return greedy_agent(config.grid)
    if name == "random":
        return random_admissible_agent(config.grid, seed=config.seed)
    raise ConfigError(f"unknown agent {name!r}; choose from {_AGENTS}")


def write_simulation_outputs(out_dir, metrics: dict, traces) -> None:
    """Write per-day trace CSVs plus metrics.csv / metrics.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for trace in traces:
        if trace.records:
            trace.to_csv(out / f"trace_day{trace.day}.csv")
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, value in metrics.items():
            writer.writerow([key, repr(float(value)) if isinstance(value, float) else value])
    with open(out / "metrics.txt", "w") as fh:
        fh.write(format_metrics_table(metrics) + "\n")


def cmd_simulate(
    config: Config, agent: str = "greedy", n_days: int = 1, mode: Optional[str] = None
) -> int:
    agent_fn = _make_agent(agent, config)
    env = build_env(config, n_days=n_days)
    metrics, traces = run_days(env, agent_fn, n_days, mode=mode, base_seed=config.seed)
    write_simulation_outputs(config.out_dir, metrics, traces)
    print(format_metrics_table(metrics))

    if metrics["aborted days"]:
        print(
            f"{metrics['aborted days']} day(s) aborted (infeasible shield step)",
            file=sys.stderr,
        )
        return 3
    return 0


# ---------------------------------------------------------------------------
# serve


def _error_frame(message: str) -> dict:
    return {"v": PROTOCOL_VERSION, "error": str(message)}


class _Session:
    """One environment per connection; survives malformed frames."""

    def __init__(self, config: Config):
        self.config = config
        self.env: Optional[MicroGridEnv] = None
        self.closed = False

    def handle_line(self, line: str) -> Optional[dict]:
        line = line.strip()
        if not line:
            return None
        try:
            frame = json.loads(line)
        except json.JSONDecodeError:
            return _error_frame("frame is not valid JSON")
        if not isinstance(frame, dict):
            return _error_frame("frame must be a JSON object")
        if "v" in frame and frame["v"] != PROTOCOL_VERSION:
            return _error_frame(f"unsupported protocol version {frame['v']!r}")
        op = frame.get("op")
        if op == "reset":
            return self._reset(frame)
        if op == "step":
            return self._step(frame)
        if op == "close":
            self.closed = True
            return {"v": PROTOCOL_VERSION, "ok": True}
        return _error_frame(f"unknown op {op!r}")

    def _reset(self, frame: dict) -> dict:
        seed = frame.get("seed", self.config.seed)
        day = frame.get("day", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            return _error_frame("reset.seed must be an integer")
        if not isinstance(day, int) or isinstance(day, bool):
            return _error_frame("reset.day must be an integer")
        try:
            if self.env is None:
                self.env = build_env(self.config, n_days=max(day + 1, self.config.n_days))
            if not (0 <= day < self.env.n_days):
                return _error_frame(f"reset.day must lie in [0, {self.env.n_days})")
            obs = self.env.reset(day=day, seed=seed)
        except IllPosedScenarioError as err:
            return _error_frame(f"ill-posed scenario: {err}")
        return {"v": PROTOCOL_VERSION, "obs": [float(v) for v in obs.vector()]}

    def _step(self, frame: dict) -> dict:
        if self.env is None or self.env.trace is None:
            return _error_frame("step before reset")
        action = frame.get("action")
        n, m = self.config.grid.n_storage, self.config.grid.n_markets
        if (
            not isinstance(action, list)
            or len(action) != n + m
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in action)
        ):
            return _error_frame(f"step.action must be a list of {n + m} numbers")
        if not all(np.isfinite(v) for v in action):
            return _error_frame("step.action entries must be finite")
        try:
            obs, reward, done, info = self.env.step(Action.from_vector(action, n, m))
        except RuntimeError as err:
            return _error_frame(str(err))
        payload_info = {
            "safe_action": [float(v) for v in info.get("safe_action", [])],
            "correction": float(info.get("correction", 0.0)),
            "violation": float(info.get("violation", 0.0)),
            "shield_time": float(info.get("shield_time", 0.0)),
            # Reward decomposition terms, so clients can audit
            # reward == -(alpha*cost + beta*correction + penalty)
            # without recomputing any model math.
            "cost": float(info.get("cost", 0.0)),
            "penalty": float(info.get("penalty", 0.0)),
        }
        if info.get("aborted"):
            payload_info["aborted"] = True
        log.debug("step latency %.4fs", payload_info["shield_time"])
        return {
            "v": PROTOCOL_VERSION,
            "obs": [float(v) for v in obs.vector()],
            "reward": float(reward),
            "done": bool(done),
            "info": payload_info,
        }


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        session = _Session(self.server.gridshield_config)
        while not session.closed:
            line = self.rfile.readline()
            if not line:
                break
            try:
                response = session.handle_line(line.decode("utf-8", errors="replace"))
            except (IllPosedScenarioError, SolverFailure) as err:
                response = _error_frame(f"{type(err).__name__}: {err}")
            if response is not None:
                self.wfile.write((json.dumps(response) + "\n").encode())
                self.wfile.flush()


class GridServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, config: Config, host: str, port: int):
        super().__init__((host, port), _Handler)
        self.gridshield_config = config


def _serve_stdio(config: Config) -> int:
    session = _Session(config)
    for line in sys.stdin:
        response = session.handle_line(line)
        if response is not None:
            sys.stdout.write(json.dumps(response) + "\n")
            sys.stdout.flush()
        if session.closed:
            break
    return 0


def cmd_serve(config: Config, endpoint: str = "tcp://127.0.0.1:7777") -> int:
    if endpoint == "stdio":
        return _serve_stdio(config)
    spec = endpoint
    if spec.startswith("tcp://"):
        spec = spec[len("tcp://"):]
    host, sep, port_s = spec.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"endpoint must be tcp://host:port or stdio, got {endpoint!r}")
    try:
        port = int(port_s)
    except ValueError:
        raise ConfigError(f"invalid port {port_s!r}") from None
    server = GridServer(config, host, port)
    stop = lambda *_: server.shutdown()  # noqa: E731
    signal.signal(signal.SIGTERM, lambda *_: sys.exit(0))
    try:
        log.info("serving on %s:%d", *server.server_address[:2])
        print(f"listening on {server.server_address[0]}:{server.server_address[1]}", flush=True)
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gridshield",
        description="Provably safe economic dispatch for micro grids",
    )
    p.add_argument("--config", help="path to JSON config", default=None)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default=None, help="override output directory")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("safeset", help="compute islanding safe sets")
    ps.add_argument("--day", type=int, default=0)

    pm = sub.add_parser("simulate", help="run day episodes with a built-in agent")
    pm.add_argument("--days", type=int, default=1)
    pm.add_argument("--day", type=int, default=0, help="unused; days run from 0")
    pm.add_argument("--mode", choices=(FULL_SHIELD, BASELINE_SHIELD), default=None)
    pm.add_argument("--agent", choices=_AGENTS, default="greedy")

    pv = sub.add_parser("serve", help="serve the environment over NDJSON")
    pv.add_argument("--endpoint", default="tcp://127.0.0.1:7777")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.out is not None:
            config = replace(config, out_dir=args.out)
        if args.command == "safeset":
            return cmd_safeset(config, day=args.day)
        if args.command == "simulate":
            return cmd_simulate(
                config, agent=args.agent, n_days=args.days, mode=args.mode
            )
        if args.command == "serve":
            return cmd_serve(config, endpoint=args.endpoint)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except IllPosedScenarioError as err:
        print(f"ill-posed scenario: {err}", file=sys.stderr)
        return 3
    except SolverFailure as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
