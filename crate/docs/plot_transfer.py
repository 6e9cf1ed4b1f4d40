"""Plot the transfer experiment from its plot.csv.

    python docs/plot_transfer.py runs/transfer/plot.csv transfer.png

Needs matplotlib. Lines starting with '#' (the build metadata) are skipped.
"""

import csv
import sys
from collections import defaultdict
from statistics import mean, stdev

import matplotlib.pyplot as plt


def load(path):
    values = defaultdict(list)
    with open(path) as f:
        rows = csv.DictReader(line for line in f if not line.startswith("#"))
        for r in rows:
            values[(r["metric"], r["arm"], int(r["n"]))].append(float(r["value"]))
    return values


def main(src, dst):
    values = load(src)
    metrics = sorted({m for m, _, _ in values})
    fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 4), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        for arm in sorted({a for m, a, _ in values if m == metric}):
            ns = sorted(n for m, a, n in values if m == metric and a == arm)
            ys = [mean(values[(metric, arm, n)]) for n in ns]
            es = [stdev(values[(metric, arm, n)]) if len(values[(metric, arm, n)]) > 1 else 0.0 for n in ns]
            ax.errorbar(ns, ys, yerr=es, marker="o", capsize=3, label=arm)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("training samples")
        ax.set_ylabel(metric)
        ax.legend()
    fig.tight_layout()
    fig.savefig(dst, dpi=150)


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
