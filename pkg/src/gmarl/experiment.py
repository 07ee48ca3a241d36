"""Experiment presets, paired multi-run evaluation and result files.

Every method in a run sees the same materialized episode, so per-run RMSEs are
paired. Output files (all deterministic given the config):

    rmse.csv         step, one column per method (RMSE over runs at each step)
    runs.csv         run, one column per method (RMSE over steps), flagged
    summary.csv      method, mean_rmse, runs
    train_curve.csv  epoch, mean_reward, mean_rmse, eval_reward
    rmse.svg         RMSE vs step
    policy.ckpt, taps_init.txt, config.json
    sweep.csv        T, one column per method (written by the sweep)
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from .baselines import DEFAULT_RIDGE, init_gnn, run_fixed_filter, run_online_filter, run_online_gnn
from .data import DatasetError, MovieLensData, build_covid_env, build_movielens_env, load_cities, prepare_movielens
from .envs import ReplayEnv, SyntheticEnv, generate_episode
from .graph_env import AttachmentKind
from .plot import line_chart
from .policy import load_checkpoint, save_checkpoint
from .trainer import TrainConfig, initial_taps, rmse_curve, rollout_batch, train

log = logging.getLogger(__name__)

METHODS = ("gmarl", "batch", "online-filter", "online-gnn")
OUT_ENV = "GMARL_OUT"
DATA_ENV = "GMARL_DATA"
EVAL_STREAM = 100
GNN_STREAM = 6

# Preset-specific defaults. Online step sizes come from scripts/step_grid.py on
# held-out seeds; shift features on the rating graph are ~1e3 times larger.
PRESETS = {
    "synthetic-uniform": {"n_init": 5, "edges": 2, "filter_step": 3e-5, "gnn_step": 3e-2},
    "synthetic-preferential": {"n_init": 5, "edges": 2, "filter_step": 3e-5, "gnn_step": 3e-2},
    "movielens": {"n_init": 200, "edges": 20, "filter_step": 1e-8, "gnn_step": 1e-2},
    "covid": {"n_init": 30, "edges": 5, "filter_step": 1e-6, "gnn_step": 1e-2},
}


@dataclass
class ExperimentConfig:
    preset: str = "synthetic-uniform"
    horizon: int = 50
    order: int = 3
    gamma: float = 0.95
    learning_rate: float = 5e-4
    episodes_per_epoch: int = 16
    epochs: int = 500
    group_size: int = 4
    init_spread: float = 0.01
    runs: int = 64
    seed: int = 0
    methods: tuple = METHODS
    n_init: int | None = None  # None: preset default
    edges: int | None = None
    filter_step: float | None = None
    gnn_step: float | None = None
    ridge: float = DEFAULT_RIDGE
    item: str = "Star Wars"
    day: int = 100
    data_dir: str | None = None
    out_dir: str | None = None
    workers: int = 1
    sweep_T: tuple = (20, 40, 60, 80, 100)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        self.methods = tuple(self.methods)
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"methods must be a nonempty subset of {METHODS}, got {self.methods}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        self.sweep_T = tuple(int(t) for t in self.sweep_T)
        for key, value in PRESETS[self.preset].items():
            if getattr(self, key) is None:
                setattr(self, key, value)

    @property
    def out(self) -> Path:
        return Path(self.out_dir or os.environ.get(OUT_ENV, "results"))

    @property
    def data_root(self) -> Path:
        return Path(self.data_dir or os.environ.get(DATA_ENV, "data"))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            horizon=self.horizon,
            gamma=self.gamma,
            learning_rate=self.learning_rate,
            episodes_per_epoch=self.episodes_per_epoch,
            epochs=self.epochs,
            seed=self.seed,
            order=self.order,
            eval_runs=self.runs,
            group_size=self.group_size,
            init_spread=self.init_spread,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["methods"] = list(self.methods)
        d["sweep_T"] = list(self.sweep_T)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            d = json.load(fh)
        d.update(overrides)
        return cls.from_dict(d)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    losses: dict  # method -> (runs, T) squared errors, flagged runs removed
    flagged: list = field(default_factory=list)
    curve: list | None = None

    @property
    def rmse(self) -> dict:
        return {m: rmse_curve(v) for m, v in self.losses.items()}

    @property
    def mean_rmse(self) -> dict:
        return {m: float(np.mean(c)) for m, c in self.rmse.items()}

    @property
    def run_rmse(self) -> dict:
        return {m: np.sqrt(np.mean(v, axis=1)) for m, v in self.losses.items()}


# -- environments ---------------------------------------------------------------


def make_env(cfg: ExperimentConfig):
    if cfg.preset.startswith("synthetic"):
        kind = AttachmentKind.PREFERENTIAL if cfg.preset.endswith("preferential") else AttachmentKind.UNIFORM
        return SyntheticEnv(n_init=cfg.n_init, attachment=kind, edges_per_node=cfg.edges)
    if cfg.preset == "movielens":
        root = cfg.data_root / "ml-100k"
        if not (root / "u.data").exists():
            raise DatasetError(
                f"MovieLens-100K not found: expected {root / 'u.data'}. Place the ml-100k files there, "
                f"point --config data_dir or ${DATA_ENV} at their parent, or run scripts/convert_ml100k.py."
            )
        pool = prepare_movielens(MovieLensData.from_dir(root), cfg.item)
        return ReplayEnv(partial(build_movielens_env, pool, cfg.n_init, cfg.edges), "movielens")
    path = cfg.data_root / "covid" / "cities.csv"
    if not path.exists():
        raise DatasetError(
            f"COVID city table not found: expected {path} (CSV header: city id, lat, lon, one column per day). "
            f"Set data_dir in the config or ${DATA_ENV}."
        )
    return ReplayEnv(partial(build_covid_env, load_cities(path), cfg.n_init, cfg.edges, cfg.day), "covid")


def eval_seeds(cfg: ExperimentConfig) -> list:
    return [[cfg.seed, EVAL_STREAM, i] for i in range(cfg.runs)]


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))


def _baseline_losses(episode, taps, cfg: ExperimentConfig, gnn0) -> dict:
    out = {}
    with np.errstate(over="ignore", invalid="ignore"):
        if "batch" in cfg.methods:
            out["batch"] = run_fixed_filter(taps, episode.transitions)[1]
        if "online-filter" in cfg.methods:
            out["online-filter"] = run_online_filter(taps, episode.transitions, cfg.filter_step)[1]
        if "online-gnn" in cfg.methods:
            try:
                out["online-gnn"] = run_online_gnn(gnn0, episode.transitions, cfg.gnn_step)[1]
            except FloatingPointError:
                out["online-gnn"] = np.full(episode.horizon, np.nan)
    return out


def evaluate_methods(cfg: ExperimentConfig, env, params, taps_init, horizon: int | None = None) -> ExperimentResult:
    """Paired evaluation of the selected methods over ``cfg.runs`` episodes."""
    horizon = cfg.horizon if horizon is None else horizon
    episodes = _map(partial(generate_episode, env, horizon, order=cfg.order), eval_seeds(cfg), cfg.workers)
    gnn0 = init_gnn([cfg.seed, GNN_STREAM])
    per_run = _map(partial(_baseline_losses, taps=taps_init, cfg=cfg, gnn0=gnn0), episodes, cfg.workers)
    losses = {}
    for m in cfg.methods:
        if m == "gmarl":
            traces = rollout_batch(params, episodes, taps_init, deterministic=True)
            losses[m] = np.stack([tr.losses for tr in traces])
        else:
            losses[m] = np.stack([r[m] for r in per_run])
    finite = np.all([np.all(np.isfinite(v), axis=1) for v in losses.values()], axis=0)
    flagged = [i for i in range(cfg.runs) if not finite[i]]
    if flagged:
        warnings.warn(f"{len(flagged)} run(s) with non-finite losses excluded: {flagged}", stacklevel=2)
    if not finite.any():
        raise FloatingPointError("every evaluation run produced non-finite losses")
    return ExperimentResult(cfg, {m: v[finite] for m, v in losses.items()}, flagged)


# -- file output ------------------------------------------------------------------


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (str, int, np.integer)) else _fmt(v) for v in row])


def write_results(result: ExperimentResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    methods = list(result.losses)
    rmse = result.rmse
    T = len(next(iter(rmse.values())))
    write_csv(out / "rmse.csv", ["step"] + methods, ([t + 1] + [rmse[m][t] for m in methods] for t in range(T)))
    kept = [i for i in range(cfg.runs) if i not in result.flagged]
    runs = result.run_rmse
    write_csv(
        out / "runs.csv",
        ["run"] + methods + ["flagged"],
        [[i] + [runs[m][j] for m in methods] + [0] for j, i in enumerate(kept)]
        + [[i] + ["nan"] * len(methods) + [1] for i in result.flagged],
    )
    means = result.mean_rmse
    write_csv(out / "summary.csv", ["method", "mean_rmse", "runs"], [[m, means[m], len(kept)] for m in methods])
    svg = line_chart(range(1, T + 1), rmse, title=f"{cfg.preset}: RMSE per step", xlabel="step", ylabel="RMSE")
    (out / "rmse.svg").write_text(svg)
    if result.curve is not None:
        write_csv(
            out / "train_curve.csv",
            ["epoch", "mean_reward", "mean_rmse", "eval_reward"],
            ([c["epoch"], c["mean_reward"], c["mean_rmse"], c["eval_reward"]] for c in result.curve),
        )
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def save_policy(out: Path, params, taps_init) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "policy.ckpt")
    (out / "taps_init.txt").write_text(" ".join(_fmt(v) for v in taps_init) + "\n")


def load_policy(directory):
    directory = Path(directory)
    ckpt = directory / "policy.ckpt"
    taps = directory / "taps_init.txt"
    if not ckpt.exists() or not taps.exists():
        raise FileNotFoundError(
            f"no trained policy in {directory} (need policy.ckpt and taps_init.txt); run `gmarl train` first "
            f"or pass --checkpoint DIR"
        )
    return load_checkpoint(ckpt), np.array([float(v) for v in taps.read_text().split()])


# -- entry points -------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, progress=None, write=True) -> ExperimentResult:
    """Train G-MARL when selected, then evaluate every method on the same episodes."""
    env = make_env(cfg)
    tcfg = cfg.train_config()
    taps_init = initial_taps(env, tcfg)
    params, curve = None, None
    if "gmarl" in cfg.methods:
        trained = train(tcfg, env, taps_init=taps_init, progress=progress)
        params, curve = trained.params, trained.curve
        if write:
            save_policy(cfg.out, params, taps_init)
    result = evaluate_methods(cfg, env, params, taps_init)
    result.curve = curve
    if write:
        write_results(result, cfg.out)
    return result


def evaluate_experiment(cfg: ExperimentConfig, checkpoint=None, write=True) -> ExperimentResult:
    """Evaluate with a saved policy (no training)."""
    env = make_env(cfg)
    if "gmarl" in cfg.methods:
        params, taps_init = load_policy(checkpoint or cfg.out)
    else:
        params, taps_init = None, initial_taps(env, cfg.train_config())
    result = evaluate_methods(cfg, env, params, taps_init)
    if write:
        write_results(result, cfg.out)
    return result


def generalization_sweep(cfg: ExperimentConfig, T_values=None, checkpoint=None, write=True) -> dict:
    """Mean RMSE of each method for every test horizon, with the policy held fixed."""
    T_values = list(cfg.sweep_T if T_values is None else T_values)
    if not T_values:
        raise ValueError("generalization sweep needs at least one T value")
    if any(int(t) < 1 for t in T_values):
        raise ValueError(f"T values must be >= 1, got {T_values}")
    env = make_env(cfg)
    if "gmarl" in cfg.methods:
        params, taps_init = load_policy(checkpoint or cfg.out)
    else:
        params, taps_init = None, initial_taps(env, cfg.train_config())
    table = {}
    for T in T_values:
        table[int(T)] = evaluate_methods(cfg, env, params, taps_init, int(T)).mean_rmse
    if write:
        cfg.out.mkdir(parents=True, exist_ok=True)
        write_csv(cfg.out / "sweep.csv", ["T"] + list(cfg.methods), ([T] + [row[m] for m in cfg.methods] for T, row in table.items()))
    return table
