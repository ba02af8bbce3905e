"""Command-line entry point: ``cidlab <subcommand> ...``.

Every flag can also come from a plain ``key=value`` file passed with
``--config`` (keys use underscores, e.g. ``soc_max=20``); flags given on the
command line win.  ``CIDLAB_DATA`` sets the default data directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .backtest import average_returns, read_returns, report, rolling_intrinsic, run_policy, write_returns
from .data_io import SyntheticConfig, data_root, day_path, load_dataset, load_day, save_day, split, synth_generate
from .env import TradingEnv
from .fitted_q import TrainConfig, load_checkpoint, save_checkpoint
from .market import MarketCalendar
from .regressors import MLPConfig
from .runtime import RuntimeConfig, run
from .storage import StorageParams

CALENDAR_FILE = "calendar.json"
STORAGE_KEYS = [f.name for f in fields(StorageParams)]
DESK_STORAGE = dict(soc_min=0.0, soc_max=20.0, c_min=0.0, c_max=20.0, g_min=0.0, g_max=20.0,
                    eta=1.0, soc_init=10.0, soc_term=10.0)


def read_config(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _add_storage(p):
    for key in STORAGE_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", type=float, default=DESK_STORAGE[key])


def _storage(args) -> StorageParams:
    return StorageParams(**{k: getattr(args, k) for k in STORAGE_KEYS})


def _calendar(location) -> MarketCalendar:
    path = Path(location)
    if path.is_dir():
        path = path / CALENDAR_FILE
    layout = json.loads(path.read_text())
    return MarketCalendar.quarterly(layout["n_products"], layout["trading_start"], layout["n_steps"], layout["trading_step"])


def build_parser() -> argparse.ArgumentParser:
    root = data_root()
    parser = argparse.ArgumentParser(prog="cidlab", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file with defaults for any flag")
    parser.add_argument("-v", "--verbose", action="store_true", help="log one line per training episode")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write synthetic day files")
    g.add_argument("--days", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=str(root))
    for f in fields(SyntheticConfig):
        g.add_argument(f"--{f.name.replace('_', '-')}", type=type(f.default), default=f.default)

    t = sub.add_parser("train", help="fit a trading policy with fitted Q iteration")
    t.add_argument("--data", default=str(root))
    t.add_argument("--split", type=float, default=0.7, help="training fraction of the days")
    t.add_argument("--split-seed", type=int, default=0)
    t.add_argument("--episodes", type=int, default=50, help="episodes per training day (E)")
    t.add_argument("--ep", type=int, default=10, help="episodes between refits")
    t.add_argument("--actors", type=int, default=1)
    t.add_argument("--asynchronous", action="store_true", help="threaded actors instead of the lockstep mode")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--repeat", type=int, default=1, help="train this many policies with derived seeds")
    t.add_argument("--h-max", type=int, default=4)
    t.add_argument("--regressor", default="mlp", choices=["mlp", "tabular"])
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--out", default="model.ckpt")
    _add_storage(t)

    b = sub.add_parser("backtest", help="compare trained policies with the rolling intrinsic")
    b.add_argument("--data", default=str(root))
    b.add_argument("--model", action="append", required=True, help="checkpoint; repeat to average policies")
    b.add_argument("--set", choices=["test", "train", "all"], default="test")
    b.add_argument("--out", default="report")
    _add_storage(b)

    r = sub.add_parser("report", help="render the comparison table from two return files")
    r.add_argument("--fq", required=True)
    r.add_argument("--ri", required=True)
    r.add_argument("--out", help="optional per-day CSV output")

    s = sub.add_parser("simulate", help="run one policy over one day file")
    s.add_argument("--day", required=True)
    s.add_argument("--policy", default="ri", help="ri, idle or model:PATH")
    s.add_argument("--calendar", help="calendar.json (default: next to the day file)")
    _add_storage(s)
    return parser


def _convert(action, text):
    if isinstance(action, argparse._StoreTrueAction):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(action, argparse._AppendAction):
        return [t.strip() for t in text.split(",")]
    return (action.type or str)(text)


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        values = read_config(known.config)
        # file values act as defaults, so explicit flags still override them
        for action in parser._subparsers._group_actions[0].choices.values():
            dests = {a.dest: a for a in action._actions}
            action.set_defaults(**{k: _convert(dests[k], v) for k, v in values.items() if k in dests})
    return parser.parse_args(argv)


def cmd_gen_data(args):
    cfg = SyntheticConfig(**{f.name: getattr(args, f.name) for f in fields(SyntheticConfig)})
    out = Path(args.out)
    for rec in synth_generate(cfg, args.days, args.seed):
        save_day(rec, day_path(out, rec.day))
    (out / CALENDAR_FILE).write_text(json.dumps(
        {"n_products": cfg.n_products, "n_steps": cfg.n_steps, "trading_start": cfg.trading_start,
         "trading_step": cfg.trading_step}, sort_keys=True) + "\n")
    print(f"wrote {args.days} days to {out}")


def cmd_train(args):
    days = load_dataset(args.data)
    calendar = _calendar(args.data)
    storage = _storage(args)
    train_days, test_days = split(days, args.split, args.split_seed)
    for i in range(args.repeat):
        seed = args.seed + i
        tc = TrainConfig(episodes_per_day=args.episodes, ep=args.ep, h_max=args.h_max, regressor=args.regressor,
                         mlp=MLPConfig(epochs=args.epochs), seed=seed)
        rc = RuntimeConfig(actors=args.actors, deterministic=not args.asynchronous and args.actors == 1)
        ensemble, store = run(lambda: TradingEnv(calendar, storage), train_days, tc, rc)
        meta = {"seed": seed, "train_days": [d.day for d in train_days], "test_days": [d.day for d in test_days],
                "storage": asdict(storage), "trajectories": len(store)}
        path = args.out if args.repeat == 1 else f"{args.out}.{i}"
        digest = save_checkpoint(ensemble, path, meta)
        print(f"saved {path} sha256={digest}")


def cmd_backtest(args):
    days = {d.day: d for d in load_dataset(args.data)}
    calendar = _calendar(args.data)
    storage = _storage(args)
    runs, chosen = [], None
    for path in args.model:
        ensemble, meta = load_checkpoint(path)
        wanted = sorted(days) if args.set == "all" else meta[f"{args.set}_days"]
        if chosen is not None and wanted != chosen:
            raise SystemExit(f"{path}: evaluated on a different day set than {args.model[0]}")
        chosen = wanted
        env = TradingEnv(calendar, storage)
        runs.append([run_policy(days[d], ensemble, storage, calendar, env=env) for d in wanted])
    fq = average_returns(runs)
    env = TradingEnv(calendar, storage)
    ri = [rolling_intrinsic(days[d], storage, calendar, env=env) for d in chosen]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_returns(fq, out / "fq_returns.csv")
    write_returns(ri, out / "ri_returns.csv")
    rep = report(fq, ri, {"policies": len(runs)})
    rep.write_csv(out / "report.csv")
    rep.write_histogram(out / "ratios.hist")
    print(rep.table())


def cmd_report(args):
    rep = report(read_returns(args.fq), read_returns(args.ri))
    if args.out:
        rep.write_csv(args.out)
    print(rep.table())


def cmd_simulate(args):
    day = load_day(args.day)
    calendar = _calendar(args.calendar or Path(args.day).parent)
    storage = _storage(args)
    policy = args.policy
    if policy.startswith("model:"):
        policy, _ = load_checkpoint(policy.split(":", 1)[1])
    elif policy not in ("ri", "idle"):
        raise SystemExit(f"unknown policy {args.policy!r}")
    res = run_policy(day, policy, storage, calendar)
    for step, r in enumerate(res.rewards):
        print(f"step={step} reward={r:.2f}")
    print(f"day={res.day} policy={args.policy} return={res.value:.2f}")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "backtest": cmd_backtest,
            "report": cmd_report, "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    COMMANDS[args.command](args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
