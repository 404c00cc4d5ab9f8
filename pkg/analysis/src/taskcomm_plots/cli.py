"""Command line: `taskcomm-plot curves|density --csv a.csv,b.csv --labels ...`."""

from __future__ import annotations

import argparse
import sys

from .io import load_runs
from .plots import plot_learning_curves, plot_time_density


def _split(arg):
    return [part for part in (arg or "").split(",") if part]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="taskcomm-plot",
                                     description="Render figures from experiment metrics CSVs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_curves = sub.add_parser("curves", help="smoothed learning curves")
    p_curves.add_argument("--csv", required=True, help="comma-separated metrics CSV paths")
    p_curves.add_argument("--labels", help="comma-separated legend labels (default: paths)")
    p_curves.add_argument("--metric", default="success", choices=("success", "episode_total_time"))
    p_curves.add_argument("--window", type=int, default=500, help="rolling-mean window in episodes")
    p_curves.add_argument("--out", required=True, help="output image file")

    p_density = sub.add_parser("density", help="episode-time density plot")
    p_density.add_argument("--csv", required=True)
    p_density.add_argument("--labels")
    p_density.add_argument("--bandwidth", type=float, default=None,
                           help="KDE bandwidth (default: Silverman's rule)")
    p_density.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    labels = _split(args.labels) if args.labels else None
    runs = load_runs(_split(args.csv), labels)

    if args.command == "curves":
        plot_learning_curves(runs, args.metric, args.out, window=args.window)
    else:
        plot_time_density(runs, args.out, bandwidth=args.bandwidth)
    print(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
