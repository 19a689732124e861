#!/usr/bin/env python3
"""Recompute tracking metrics from a run directory and compare with metrics.json.

Reads runlog.csv and config.json, recomputes the tracking error from the logged
positions, and checks mean/max error and (if a disturbance is configured) the
baseline, overshoot and convergence time. Exits 0 when every value matches.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path


def load_log(path):
    rows = []
    with open(path, newline="") as f:
        lines = (line for line in f if not line.startswith("#"))
        for row in csv.DictReader(lines):
            rows.append({k: float(v) for k, v in row.items()})
    return rows


def window(t, e, a, b):
    vals = [ei for ti, ei in zip(t, e) if a <= ti <= b]
    return sum(vals) / len(vals), max(vals)


def recompute(rows, cfg):
    t = [r["t"] for r in rows]
    e = [math.hypot(r["X_G"] - r["X_d"], r["Y_G"] - r["Y_d"]) for r in rows]
    end = t[-1]
    w0, w1 = cfg["metrics"]["window"]
    out = {}
    out["mean_err_m"], out["max_err_m"] = window(t, e, w0, min(w1, end))

    dist = [ev["time"] for ev in cfg.get("events", []) if ev["type"] == "disturbance"]
    if not dist or min(dist) >= end:
        return out
    td = min(dist)
    baseline = window(t, e, td - 5.0, td)[0]
    after = [k for k in range(len(t)) if t[k] > td]
    peak = max(after, key=lambda k: (e[k], -k))
    out["baseline_m"] = baseline
    out["overshoot_m"] = max(0.0, e[peak] - baseline)

    limit = 1.5 * baseline
    out["convergence_s"] = end - td
    for k in range(peak, len(t)):
        j = k
        while j < len(t) and e[j] <= limit:
            if t[j] - t[k] >= 1.0 - 1e-9:
                out["convergence_s"] = t[k] - td
                return out
            j += 1
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--tol", type=float, default=1e-12)
    args = ap.parse_args()

    rows = load_log(args.run_dir / "runlog.csv")
    cfg = json.loads((args.run_dir / "config.json").read_text())
    emitted = json.loads((args.run_dir / "metrics.json").read_text())

    ok = True
    for key, value in recompute(rows, cfg).items():
        gap = abs(value - emitted[key])
        good = gap <= args.tol
        ok &= good
        print(f"{key:16s} recomputed={value:.17g} emitted={emitted[key]:.17g} gap={gap:.3g} {'ok' if good else 'MISMATCH'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
