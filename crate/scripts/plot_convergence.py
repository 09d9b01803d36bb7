"""Log-log plot of a convergence.csv written by `trefftz converge`.

usage: python scripts/plot_convergence.py out/plane_wave_1d/convergence.csv [plot.png]
"""

import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    path = sys.argv[1]
    target = sys.argv[2] if len(sys.argv) > 2 else path.rsplit(".", 1)[0] + ".png"
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    h = [float(r["h"]) for r in rows]
    fig, ax = plt.subplots()
    for col in ("err_dg", "err_l2", "err_energy"):
        ax.loglog(h, [float(r[col]) for r in rows], "o-", label=col)
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.invert_xaxis()
    ax.legend()
    fig.savefig(target, dpi=120)
    print(target)


if __name__ == "__main__":
    main()
