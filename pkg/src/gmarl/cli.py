"""Command-line front end: ``gmarl {train,eval,sweep,ingest}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .data import DatasetError
from .envs import generate_episode
from .experiment import (
    OUT_ENV,
    PRESETS,
    ExperimentConfig,
    evaluate_experiment,
    generalization_sweep,
    make_env,
    run_experiment,
)
from .graph_env import dump_trajectory


def build_config(args) -> ExperimentConfig:
    """--config file (or, for eval/sweep, the config saved next to the checkpoint), then flags."""
    d = {}
    path = args.config
    if path is None and getattr(args, "checkpoint", None) is not None:
        saved = Path(args.checkpoint) / "config.json"
        path = saved if saved.exists() else None
    elif path is None and args.command in ("eval", "sweep"):
        saved = Path(args.out or os.environ.get(OUT_ENV, "results")) / "config.json"
        path = saved if saved.exists() else None
    if path:
        with open(path) as fh:
            d = json.load(fh)
    if args.preset:
        d["preset"] = args.preset
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out:
        d["out_dir"] = args.out
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            d[key] = json.loads(value)
        except json.JSONDecodeError:
            d[key] = value
    return ExperimentConfig.from_dict(d)


def _print_summary(result) -> None:
    for m, v in result.mean_rmse.items():
        print(f"{m:>14s}  mean RMSE {v:.4f}")


def cmd_train(args) -> None:
    cfg = build_config(args)

    def progress(row):
        if row["epoch"] % 50 == 0:
            logging.info("epoch %d  train reward %.4f  eval reward %.4f", row["epoch"], row["mean_reward"], row["eval_reward"])

    result = run_experiment(cfg, progress=progress)
    _print_summary(result)
    print(f"results written to {cfg.out}")


def cmd_eval(args) -> None:
    cfg = build_config(args)
    result = evaluate_experiment(cfg, checkpoint=args.checkpoint)
    _print_summary(result)
    print(f"results written to {cfg.out}")


def cmd_sweep(args) -> None:
    cfg = build_config(args)
    table = generalization_sweep(cfg, args.T, checkpoint=args.checkpoint)
    for T, row in table.items():
        print(f"T={T:4d}  " + "  ".join(f"{m} {v:.4f}" for m, v in row.items()))
    print(f"sweep written to {cfg.out / 'sweep.csv'}")


def cmd_ingest(args) -> None:
    """Build one episode of the preset's environment and write its trajectory dump."""
    cfg = build_config(args)
    env = make_env(cfg)
    episode = generate_episode(env, cfg.horizon, [cfg.seed, 100, 0], cfg.order)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / f"{cfg.preset}-trajectory.tsv"
    path.write_text(dump_trajectory(episode.transitions))
    print(f"{cfg.preset}: {episode.state0.n} initial nodes, {episode.horizon} arrivals -> {path}")


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmarl", description="Multi-agent filter adaptation on expanding graphs.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("train", cmd_train, "train the policy, then evaluate all methods"),
        ("eval", cmd_eval, "evaluate methods with a saved policy"),
        ("sweep", cmd_sweep, "evaluate a saved policy over several horizons"),
        ("ingest", cmd_ingest, "build a preset environment and dump one trajectory"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--config", help="JSON file with ExperimentConfig fields")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (default $GMARL_OUT or ./results)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field (JSON value)")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name in ("eval", "sweep"):
            sp.add_argument("--checkpoint", type=Path, help="directory holding policy.ckpt (default: --out)")
        if name == "sweep":
            sp.add_argument("--T", type=int, nargs="*", help="test horizons (default: config sweep_T)")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (DatasetError, FileNotFoundError, ValueError, FloatingPointError) as exc:
        print(f"gmarl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
