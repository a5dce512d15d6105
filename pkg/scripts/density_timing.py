#!/usr/bin/env python3
"""Pose-stage time with and without the density filter on rendered reference scenes."""

import argparse
import math
import time
from dataclasses import replace

import numpy as np

from cylstereo.harness import SweepConfig, TrialDraw, trial_seed
from cylstereo.matching import compute_disparity_map
from cylstereo.pose import estimate_pose
from cylstereo.reconstruction import reconstruct_cloud
from cylstereo.scene import REFERENCE_ANGLE_DEG, render_stereo_pair


def best_time(cloud, cfg, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        pose = estimate_pose(cloud, cfg)
        times.append(time.perf_counter() - t0)
    return min(times), pose


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--angle", type=float, default=REFERENCE_ANGLE_DEG)
    ap.add_argument("--trials", type=int, default=14)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    cfg = SweepConfig(angles=(args.angle,))
    wins = 0
    for t in range(args.trials):
        draw = TrialDraw.from_seed(trial_seed(cfg.master_seed, 0, t))
        cyl = cfg.scene.cylinder(args.angle, draw.roll_deg)
        left, right, _ = render_stereo_pair(cyl, cfg.rig, draw.texture_seed, cfg.render)
        cloud = reconstruct_cloud(compute_disparity_map(left, right, cfg.pipeline.match), cfg.rig.stereo_pair())
        pc = cfg.pipeline.pose.with_seed(draw.ransac_seed)
        t_on, p_on = best_time(cloud, pc, args.repeats)
        t_off, p_off = best_time(cloud, replace(pc, use_density_filter=False), args.repeats)
        dn = math.degrees(math.acos(min(1.0, abs(float(p_on.axis @ p_off.axis)))))
        wins += t_on < t_off
        print(f"trial {t:2d}: {len(cloud)} points, filtered {t_on:.3f} s, unfiltered {t_off:.3f} s, "
              f"saving {100 * (1 - t_on / t_off):5.1f}%, normals differ {dn:.3f} deg")
    print(f"filtered faster in {wins}/{args.trials} trials")


if __name__ == "__main__":
    main()
