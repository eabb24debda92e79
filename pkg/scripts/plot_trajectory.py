#!/usr/bin/env python3
"""Plot a trajectory CSV written by the simulator.

Stacked panels: plant output and loop error, control effort, element modes,
and the energy series (V and, when a certificate was active, W).  Column
layout is taken from the CSV header, so single-element and three-element
runs both work.
"""

import argparse
import csv
import sys


def read_columns(path: str) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {name: [] for name in header}
        for row in reader:
            for name, cell in zip(header, row):
                cols[name].append(float(cell))
    return cols


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("csv_path")
    parser.add_argument("--out", default=None,
                        help="write a PNG instead of opening a window")
    parser.add_argument("--title", default=None)
    args = parser.parse_args(argv)

    try:
        import matplotlib
        if args.out:
            matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is required for plotting (pip install matplotlib)",
              file=sys.stderr)
        return 1

    cols = read_columns(args.csv_path)
    t = cols["t"]
    mode_names = [n for n in cols if n.startswith("mode")]
    energy_names = [n for n in ("V", "W") if n in cols]

    n_panels = 2 + bool(mode_names) + bool(energy_names)
    fig, axes = plt.subplots(n_panels, 1, sharex=True,
                             figsize=(9, 2.2 * n_panels))
    axes = list(axes)

    ax = axes.pop(0)
    ax.plot(t, cols["y"], label="y")
    ax.plot(t, cols["e"], label="e", alpha=0.7)
    ax.set_ylabel("output / error")
    ax.legend(loc="upper right")

    ax = axes.pop(0)
    ax.plot(t, cols["u"], color="tab:red")
    ax.set_ylabel("u")

    if mode_names:
        ax = axes.pop(0)
        for name in mode_names:
            ax.step(t, cols[name], where="post", label=name)
        ax.set_ylabel("mode")
        ax.set_yticks([0, 1], labels=["integrator", "gain"])
        if len(mode_names) > 1:
            ax.legend(loc="upper right")

    if energy_names:
        ax = axes.pop(0)
        for name in energy_names:
            ax.plot(t, cols[name], label=name)
        ax.set_ylabel("energy")
        ax.set_yscale("log")
        ax.legend(loc="upper right")

    fig.axes[-1].set_xlabel("t [s]")
    fig.suptitle(args.title or args.csv_path)
    fig.tight_layout()
    if args.out:
        fig.savefig(args.out, dpi=150)
        print(f"wrote {args.out}")
    else:
        plt.show()
    return 0


if __name__ == "__main__":
    sys.exit(main())
