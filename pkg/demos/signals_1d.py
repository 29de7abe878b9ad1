"""Joint reconstruction of the two noisy 1-D signals, plotted per Bregman iteration.

Usage: python3 demos/signals_1d.py [seed] [out.png]
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from icbrecon.experiments import check_recovery, noisy_signals, signals_config
from icbrecon.joint import run_joint
from icbrecon.simdata import signal_edges


def main(seed=0, out="signals_1d.png"):
    (blue, red), (fb, fr) = noisy_signals(seed)
    res = run_joint(signals_config(fb, fr))
    edges = signal_edges(100)
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for ax, truth, data, u, name in zip(axes, (blue, red), (fb, fr), res.images, ("blue", "red")):
        ax.plot(data.ravel(), ".", color="0.6", ms=3, label="data")
        ax.plot(truth.ravel(), "k--", lw=1, label="truth")
        ax.plot(u.ravel(), color=name, lw=1.5, label="ICB")
        exact, err = check_recovery(u, data, edges)
        ax.set_title(f"{name}: jump set exact={exact}, plateau error {err:.1e}")
    axes[0].legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print("wrote", out)


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0, *sys.argv[2:3])
