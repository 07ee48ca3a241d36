"""Coarse grid for the online baselines' step sizes on a held-out seed.

    python3 scripts/step_grid.py --preset synthetic-uniform --seed 123 --runs 128
"""
import argparse

import numpy as np

from gmarl.baselines import init_gnn, run_online_filter, run_online_gnn
from gmarl.envs import generate_episode
from gmarl.experiment import PRESETS, ExperimentConfig, make_env
from gmarl.trainer import initial_taps

FILTER_GRID = [0.0, 1e-8, 3e-8, 1e-7, 3e-7, 1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3]
GNN_GRID = [1e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--preset", default="synthetic-uniform", choices=sorted(PRESETS))
    ap.add_argument("--runs", type=int, default=32)
    ap.add_argument("--seed", type=int, default=123)
    ap.add_argument("--data-dir")
    args = ap.parse_args()

    cfg = ExperimentConfig(preset=args.preset, seed=args.seed, data_dir=args.data_dir)
    env = make_env(cfg)
    taps = initial_taps(env, cfg.train_config())
    eps = [generate_episode(env, cfg.horizon, [args.seed, 5, i]) for i in range(args.runs)]
    gnn0 = init_gnn([args.seed, 6])

    def rmse(losses):
        return float(np.mean(np.sqrt(np.mean(losses, axis=0))))

    print("method,step,mean_rmse")
    for step in FILTER_GRID:
        with np.errstate(all="ignore"):
            losses = np.stack([run_online_filter(taps, ep.transitions, step)[1] for ep in eps])
        print(f"online-filter,{step:g},{rmse(losses):.5f}")
    for step in GNN_GRID:
        try:
            losses = np.stack([run_online_gnn(gnn0, ep.transitions, step)[1] for ep in eps])
            print(f"online-gnn,{step:g},{rmse(losses):.5f}")
        except FloatingPointError:
            print(f"online-gnn,{step:g},diverged")


if __name__ == "__main__":
    main()
