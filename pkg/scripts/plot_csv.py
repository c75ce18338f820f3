"""Plot CSVs written by ``burstlink``: BER sweeps (log axis against Eb/N0)
or per-stage diagnostics (one trace per event). Needs matplotlib.

    python scripts/plot_csv.py runs/ber/ber_genie.csv runs/ber/ber_sync.csv -o ber.png
    python scripts/plot_csv.py out/extraction.csv --events 3 -o extraction.png
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read(path):
    data = np.genfromtxt(path, delimiter=",", skip_header=1, names=True, dtype=None, encoding="utf-8")
    return np.atleast_1d(data)


def plot_ber(ax, path, data):
    ax.semilogy(data["ebn0_db"], data["ber"], "o-", label=Path(path).stem)
    if "theory" in data.dtype.names and not any(l.get_label() == "theory" for l in ax.lines):
        ax.semilogy(data["ebn0_db"], data["theory"], "k--", lw=0.8, label="theory")
    ax.set_xlabel("Eb/N0 [dB]")
    ax.set_ylabel("BER")
    ax.grid(True, which="both", alpha=0.3)


def plot_stage(ax, path, data, events):
    for t in np.unique(data["event_time"])[:events]:
        sel = data[data["event_time"] == t]
        mag = np.hypot(sel["value"], sel["value_imag"])
        ax.plot(sel["index"], mag, lw=0.8, label=f"t={t}")
    ax.set_title(str(data["stage"][0]))
    ax.set_xlabel("index")
    ax.set_ylabel("|value|")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv", nargs="+")
    ap.add_argument("--events", type=int, default=4, help="events per diagnostics plot")
    ap.add_argument("-o", "--output", default="plot.png")
    args = ap.parse_args()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path in args.csv:
        data = read(path)
        if "ebn0_db" in data.dtype.names:
            plot_ber(ax, path, data)
        else:
            plot_stage(ax, path, data, args.events)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print("wrote", args.output)


if __name__ == "__main__":
    main()
