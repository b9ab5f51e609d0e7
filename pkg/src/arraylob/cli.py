"""Command-line entry point.

Subcommands
-----------
replay   replay a LOBSTER day window by window; write the trade tape and L2 trace
rollout  run a scripted policy through the execution environment; write reports
bench    micro-benchmarks on synthetic books; write timing tables
synth    write a synthetic LOBSTER-format day (for demos and tests)

Settings come from built-in defaults, then a JSON ``--config`` file, then
explicit flags, each overriding the last.  Config keys are the flag names with
or without the leading dashes (``n-messages`` and ``n_messages`` both work).
Relative data paths are resolved against ``$ARRAYLOB_DATA`` when it is set.

Exit codes: 0 success, 2 bad configuration, 3 bad or missing data, 4 other
runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from . import bench, lobster
from .baselines import POLICY_KINDS, PolicySpec, evaluate, summarize
from .book import l2_snapshot
from .execution import DegenerateBookError, ExecEnv, ExecParams
from .lobster import EmptyWindowError, LobsterFormatError
from .replay import ReplayEnv
from .synthetic import write_day

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
DATA_ROOT_ENV = "ARRAYLOB_DATA"

log = logging.getLogger("arraylob")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    messages: Optional[str] = None
    orderbook: Optional[str] = None
    capacity: int = 100
    n_messages: int = 100
    window_min: float = 30.0
    episode_min: Optional[float] = None  # defaults to window_min
    levels: Optional[int] = None
    tick_size: int = 100
    task_side: str = "sell"
    task_size: int = 500
    lam: float = 0.0
    depth_n: int = 2
    batch: int = 1
    seed: int = 0
    policy: str = "twap"
    episodes: Optional[int] = None  # defaults to one per non-empty window
    max_order_size: float = 100.0
    trials: int = 1000
    bench_capacities: list = field(default_factory=lambda: list(bench.CAPACITIES))
    bench_sizes: list = field(default_factory=lambda: list(bench.MARKET_SIZES))
    bench_batches: list = field(default_factory=lambda: list(bench.BATCH_SIZES))
    out: str = "out"

    def validate(self, needs_data: bool = False) -> "RunConfig":
        positive = ("capacity", "n_messages", "window_min", "tick_size", "task_size", "batch", "trials",
                    "max_order_size")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name.replace('_', '-')} must be positive, got {getattr(self, name)!r}")
        for name in ("episode_min", "levels", "episodes"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name.replace('_', '-')} must be positive, got {v!r}")
        if self.depth_n < 0 or self.lam < 0 or self.seed < 0:
            raise ConfigError("depth-n, lambda and seed must be non-negative")
        if self.task_side.lower() not in ("sell", "buy", "ask", "bid"):
            raise ConfigError(f"task-side must be sell or buy, got {self.task_side!r}")
        if self.policy not in POLICY_KINDS:
            raise ConfigError(f"policy must be one of {POLICY_KINDS}, got {self.policy!r}")
        for name in ("bench_capacities", "bench_sizes", "bench_batches"):
            vals = getattr(self, name)
            floor = 0 if name == "bench_sizes" else 1
            if not vals or any(int(v) < floor for v in vals):
                raise ConfigError(f"{name.replace('_', '-')} needs values >= {floor}")
        if needs_data and not (self.messages and self.orderbook):
            raise ConfigError("--messages and --orderbook are required")
        return self

    @property
    def window_s(self) -> int:
        return int(round(self.window_min * 60))

    @property
    def episode_s(self) -> float:
        return (self.episode_min or self.window_min) * 60

    def data_paths(self) -> tuple:
        root = os.environ.get(DATA_ROOT_ENV)
        out = []
        for p in (self.messages, self.orderbook):
            p = Path(p).expanduser()
            if root and not p.is_absolute():
                p = Path(root) / p
            out.append(p)
        return tuple(out)


_FLAG_TYPES = {f.name: f for f in fields(RunConfig)}
_ALIASES = {"lambda": "lam"}


def _key(name: str) -> str:
    name = name.lstrip("-").replace("-", "_")
    return _ALIASES.get(name, name)


def load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    out = {}
    for k, v in raw.items():
        key = _key(k)
        if key not in _FLAG_TYPES:
            raise ConfigError(f"unknown config key {k!r}")
        out[key] = v
    return out


def _int_list(text: str) -> list:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arraylob", description="Array limit order book simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    # Every setting defaults to None here so that only flags actually given
    # override the config file.
    def common(p):
        p.add_argument("--config", help="JSON file with any of the settings below")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--seed", type=int)

    def data(p):
        p.add_argument("--messages", help="LOBSTER message CSV")
        p.add_argument("--orderbook", help="LOBSTER orderbook CSV")
        p.add_argument("--capacity", type=int, help="order slots per side (default 100)")
        p.add_argument("--n-messages", type=int, help="historical messages per step (default 100)")
        p.add_argument("--window-min", type=float, help="window length in minutes (default 30)")
        p.add_argument("--levels", type=int, help="orderbook levels to read (default: all)")

    rp = sub.add_parser("replay", help="pure replay: trade tape and per-step L2 trace")
    common(rp)
    data(rp)

    ro = sub.add_parser("rollout", help="evaluate a scripted policy")
    common(ro)
    data(ro)
    ro.add_argument("--episode-min", type=float, help="episode length in minutes (default: window)")
    ro.add_argument("--task-side", help="sell or buy")
    ro.add_argument("--task-size", type=int)
    ro.add_argument("--lambda", dest="lam", type=float, help="weight of the drift term")
    ro.add_argument("--depth-n", type=int, help="passive price offset in ticks")
    ro.add_argument("--tick-size", type=int, help="price units per tick (default 100)")
    ro.add_argument("--batch", type=int, help="episodes stepped together")
    ro.add_argument("--policy", choices=POLICY_KINDS)
    ro.add_argument("--episodes", type=int, help="number of episodes, cycling through windows")
    ro.add_argument("--max-order-size", type=float, help="upper bound for the random policy")

    be = sub.add_parser("bench", help="timing tables on synthetic books")
    common(be)
    be.add_argument("--trials", type=int)
    be.add_argument("--bench-capacities", type=_int_list, help="comma list, default 10,100,1000")
    be.add_argument("--bench-sizes", type=_int_list, help="comma list of market order sizes")
    be.add_argument("--bench-batches", type=_int_list, help="comma list of batch sizes K")

    sy = sub.add_parser("synth", help="write a synthetic LOBSTER-format day")
    sy.add_argument("--out", required=True)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--n-messages", type=int, default=2000, help="message rows to write")
    sy.add_argument("--levels", type=int, default=10)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for k, v in vars(args).items():
        if k in _FLAG_TYPES and v is not None:
            values[k] = v
    try:
        return RunConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e


# -- commands -------------------------------------------------------------------------


def _load(cfg: RunConfig) -> lobster.WindowSet:
    mpath, opath = cfg.data_paths()
    ws = lobster.load_day(mpath, opath, window_duration_s=cfg.window_s, n_messages=cfg.n_messages,
                          capacity=cfg.capacity, levels=cfg.levels)
    log.info("loaded %d windows (%d non-empty) from %s", len(ws), len(ws.nonempty()), mpath)
    return ws


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_replay(cfg: RunConfig) -> dict:
    """Replay every non-empty window; one L2 row per step, every trade on the tape."""
    ws = _load(cfg)
    levels = cfg.levels or 10
    # Each message can fill at most ``capacity`` resting orders.
    env = ReplayEnv(ws, trade_capacity=ws.n_messages * ws.capacity)
    trade_rows, l2_rows = [], []
    dropped = 0
    for w in ws.nonempty():
        s = env.reset(w)
        while not env.data_exhausted(s):
            s = env.step(s)
            dropped += s.book.dropped_trades
            for t in s.step_trades:
                trade_rows.append([w, s.step_counter - 1, *t.tolist()])
            snap = l2_snapshot(s.book, levels).reshape(-1).tolist()
            l2_rows.append([w, s.step_counter - 1, *s.current_time, *snap])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "trades.csv",
               ["window", "step", "price", "qty", "aggressor_oid", "standing_oid", "time_s", "time_ns"],
               trade_rows)
    l2_head = ["window", "step", "time_s", "time_ns"]
    for i in range(1, levels + 1):
        l2_head += [f"ask_price_{i}", f"ask_size_{i}", f"bid_price_{i}", f"bid_size_{i}"]
    _write_csv(out / "l2.csv", l2_head, l2_rows)
    summary = {"windows": len(ws.nonempty()), "steps": len(l2_rows), "trades": len(trade_rows),
               "dropped_trades": int(dropped)}
    (out / "replay_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_rollout(cfg: RunConfig) -> dict:
    ws = _load(cfg)
    windows = ws.nonempty()
    if not windows:
        raise EmptyWindowError("no window contains messages")
    n = cfg.episodes or len(windows)
    chosen = [windows[i % len(windows)] for i in range(n)]
    params = ExecParams(task_side=cfg.task_side, task_size=cfg.task_size, lam=cfg.lam, depth_n=cfg.depth_n,
                        tick_size=cfg.tick_size, episode_duration_s=cfg.episode_s)
    env = ExecEnv(ws, params)
    spec = PolicySpec(kind=cfg.policy, seed=cfg.seed, max_order_size=cfg.max_order_size)
    reports = evaluate(spec, env, chosen, n_envs=cfg.batch)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [r.as_dict() for r in reports]
    _write_csv(out / "episodes.csv", list(rows[0]), [list(r.values()) for r in rows])
    result = {"config": asdict(cfg), "summary": summarize(reports), "episodes": rows}
    (out / "report.json").write_text(json.dumps(result, indent=2, sort_keys=True, default=float) + "\n")
    return result["summary"]


def cmd_bench(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t1 = []
    for n in cfg.bench_capacities:
        ops = bench.time_operations(int(n), trials=cfg.trials, seed=cfg.seed)
        row = {"capacity": n}
        for name, t in ops.items():
            row.update(t.as_row(f"{name}_"))
        t1.append(row)
    t2 = []
    for q, t in bench.time_match_vs_quantity(tuple(cfg.bench_sizes), capacity=100, trials=cfg.trials,
                                             seed=cfg.seed).items():
        t2.append({"quantity": q, **t.as_row()})
    t3 = []
    for k in cfg.bench_batches:
        for kind, t in bench.throughput_probe(int(k), capacity=100, trials=cfg.trials, seed=cfg.seed).items():
            t3.append({"batch": k, "message": kind, **t.as_row()})
    for name, rows in (("table1.csv", t1), ("table2.csv", t2), ("batch.csv", t3)):
        _write_csv(out / name, list(rows[0]), [list(r.values()) for r in rows])
    return {"table1": t1, "table2": t2, "batch": t3}


def cmd_synth(args) -> dict:
    m, o = write_day(args.out, seed=args.seed, n_messages=args.n_messages, levels=args.levels)
    return {"messages": str(m), "orderbook": str(o)}


def _print_table(rows, keys) -> None:
    print("  ".join(f"{k:>14}" for k in keys))
    for r in rows:
        print("  ".join(f"{r[k]:>14.3f}" if isinstance(r[k], float) else f"{r[k]!s:>14}" for k in keys))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "synth":
            print(json.dumps(cmd_synth(args), indent=2))
            return EXIT_OK
        cfg = resolve_config(args).validate(needs_data=args.command in ("replay", "rollout"))
        if args.command == "replay":
            print(json.dumps(cmd_replay(cfg), indent=2, sort_keys=True))
        elif args.command == "rollout":
            print(json.dumps(cmd_rollout(cfg), indent=2, sort_keys=True))
        else:
            res = cmd_bench(cfg)
            _print_table(res["table1"], ["capacity", "add_median_us", "cancel_median_us", "match_median_us"])
            _print_table(res["table2"], ["quantity", "median_us", "iqr_us"])
            _print_table(res["batch"], ["batch", "message", "median_us", "iqr_us"])
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (LobsterFormatError, EmptyWindowError, DegenerateBookError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - last-resort exit code
        log.exception("runtime failure")
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
