#!/usr/bin/env python3
"""Angle sweep with progress, writing trials/summary/timings CSV, report.json and sweep.svg.

    python3 scripts/run_sweep.py --mode cloud --out sweep_cloud
    python3 scripts/run_sweep.py --angles 0 30 60 --trials 3 --out sweep_img
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from cylstereo.harness import SweepConfig, run_sweep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--mode", choices=("image", "cloud"), default="image")
    ap.add_argument("--angles", type=float, nargs="+")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("sweep_out"))
    args = ap.parse_args()

    cfg = SweepConfig(mode=args.mode, master_seed=args.seed, workers=args.workers)
    if args.angles:
        cfg = replace(cfg, angles=tuple(args.angles))
    if args.trials:
        cfg = replace(cfg, trials_per_angle=args.trials)

    t0 = time.perf_counter()

    def progress(rec):
        err = "" if rec.status != "ok" else f" {rec.orientation_error:.2f} deg {rec.centering_error:.2f} mm"
        print(f"[{time.perf_counter() - t0:7.1f} s] {rec.angle_deg:5.1f} deg #{rec.trial:2d} {rec.status}{err}",
              file=sys.stderr)

    report = run_sweep(cfg, progress)
    paths = report.write(args.out)
    print(report.summary_csv(), end="")
    print(f"wrote {', '.join(str(p) for p in paths.values())}", file=sys.stderr)


if __name__ == "__main__":
    main()
