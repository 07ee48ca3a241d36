"""Overlay training reward curves from several runs (train_curve.csv files) in one SVG."""
import argparse
import csv
from pathlib import Path

import numpy as np

from gmarl.plot import line_chart


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("curves", nargs="+", type=Path)
    ap.add_argument("--out", type=Path, default=Path("reward.svg"))
    ap.add_argument("--column", default="eval_reward")
    ap.add_argument("--window", type=int, default=10)
    args = ap.parse_args()

    series = {}
    epochs = None
    for path in args.curves:
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        y = np.array([float(r[args.column]) for r in rows])
        epochs = [int(r["epoch"]) for r in rows]
        series[str(path.parent.name)] = y
    if len({len(v) for v in series.values()}) > 1:
        raise SystemExit("curves have different epoch counts; pass runs with the same config")
    mean = np.mean(list(series.values()), axis=0)
    k = args.window
    smooth = np.convolve(mean, np.ones(k) / k, mode="valid")
    series[f"mean (window {k})"] = np.concatenate([np.full(k - 1, np.nan), smooth])
    svg = line_chart(epochs, series, title=args.column, xlabel="epoch", ylabel="discounted reward")
    args.out.write_text(svg)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
