#!/usr/bin/env python3
"""Print the headline numbers of a finished run or sweep directory.

Usage:
    python3 scripts/summarize_run.py out/fig2_bell_magnon [--plot]

Works on both a single-run directory (trajectory.csv) and a sweep
directory (summary.csv + point_*/). --plot needs matplotlib.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path


def load_columns(path):
    with open(path) as f:
        rows = list(csv.DictReader(f))
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


def summarize_run(d, plot=False):
    cols = load_columns(d / "trajectory.csv")
    t = cols["time_s"]
    fid = cols["fidelity"]
    en = cols["log_negativity_bits"]
    sc = cols["conditional_entropy_nats"]
    finite = [x for x in fid if not math.isnan(x)]
    print(f"{d}:")
    print(f"  grid rows        {len(t)}  (t = 0 .. {t[-1]:.3e} s)")
    if finite:
        k = max(range(len(fid)), key=lambda i: -math.inf if math.isnan(fid[i]) else fid[i])
        print(f"  peak fidelity    {fid[k]:.6f}  at t = {t[k]:.3e} s")
    if any(not math.isnan(x) for x in en):
        k = max(range(len(en)), key=lambda i: -math.inf if math.isnan(en[i]) else en[i])
        print(f"  peak E_N         {en[k]:.6f} bits  at t = {t[k]:.3e} s")
    if any(not math.isnan(x) for x in sc):
        print(f"  min S(1|2)       {min(x for x in sc if not math.isnan(x)):+.6f} nats")
    man = d / "manifest.json"
    if man.exists():
        m = json.loads(man.read_text())
        a = m.get("audits", {})
        if "projection_probability" in a:
            print(f"  projection prob  {a['projection_probability']:.6f}")
        print(f"  solver steps     {int(a.get('n_steps', 0))} "
              f"({int(a.get('n_rejected_steps', 0))} rejected), "
              f"wall {m.get('wall_time_s', 0):.1f} s")
        for w in m.get("warnings", []):
            print(f"  warning: {w.splitlines()[0]}")
    if plot:
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(3, 1, sharex=True, figsize=(6, 7))
        ax[0].plot(t, cols["n_mode1"], label="mode 1")
        ax[0].plot(t, cols["n_mode2"], label="mode 2")
        ax[0].set_ylabel("<n>")
        ax[0].legend()
        ax[1].plot(t, fid, label="fidelity")
        ax[1].plot(t, en, label="E_N (bits)")
        ax[1].legend()
        ax[2].plot(t, sc)
        ax[2].axhline(-math.log(2), ls=":", c="k", lw=0.8)
        ax[2].set_ylabel("S(1|2) (nats)")
        ax[2].set_xlabel("t (s)")
        fig.tight_layout()
        out = d / "trajectory.png"
        fig.savefig(out, dpi=150)
        print(f"  wrote {out}")


def summarize_sweep(d, plot=False):
    print(f"{d} (sweep):")
    with open(d / "summary.csv") as f:
        for r in csv.DictReader(f):
            v = float(r["sweep_value"])
            pf = float(r["peak_fidelity"])
            if math.isnan(pf):
                print(f"  value {v:g}: FAILED (see point dir error.txt)")
            else:
                print(f"  value {v:g}: peak F {pf:.4f}, "
                      f"peak E_N {float(r['peak_log_negativity_bits']):.4f} bits, "
                      f"min S {float(r['min_conditional_entropy_nats']):+.4f} nats")
    for p in sorted(d.glob("point_*")):
        if (p / "trajectory.csv").exists():
            summarize_run(p, plot=plot)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("directory", type=Path)
    ap.add_argument("--plot", action="store_true",
                    help="write trajectory.png next to each trajectory.csv")
    args = ap.parse_args()
    d = args.directory
    if (d / "summary.csv").exists():
        summarize_sweep(d, plot=args.plot)
    elif (d / "trajectory.csv").exists():
        summarize_run(d, plot=args.plot)
    else:
        sys.exit(f"no trajectory.csv or summary.csv in {d}")


if __name__ == "__main__":
    main()
