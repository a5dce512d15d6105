"""Command-line entry point.

Exit codes: 0 success, 2 end face not found (occluded), 3 stage timeout, 4 bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .calibration import calibrate_file
from .errors import CylStereoError, FaceNotFound, StageFailure, StageTimeout
from .files import disparity_preview, read_disparity_csv, read_pgm, write_disparity_csv, write_pgm
from .geometry import compose_projection, load_camera, save_camera
from .harness import (
    SweepConfig,
    centering_error,
    config_from_dict,
    execute_pipeline,
    orientation_error,
    run_stage,
    run_sweep,
)
from .matching import compute_disparity_map, valid_count
from .pose import estimate_pose
from .reconstruction import StereoPair, read_ply, reconstruct_cloud, write_cloud_csv, write_ply
from .scene import GroundTruth, render_stereo_pair, sample_cylinder_cloud

EXIT_OK, EXIT_OCCLUDED, EXIT_TIMEOUT, EXIT_BAD_INPUT = 0, 2, 3, 4
GLOBAL_DEFAULTS = {"config": None, "seed": None, "out": ".", "timeout_s": None, "verbose": False}

log = logging.getLogger("cylstereo")


def _load_config(args) -> SweepConfig:
    cfg = SweepConfig()
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CylStereoError(f"cannot read config {args.config}: {exc}") from None
        cfg = config_from_dict(SweepConfig, data)
    if args.timeout_s is not None:
        cfg = replace(cfg, pipeline=replace(cfg.pipeline, timeout_s=args.timeout_s))
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def cmd_simulate(args, cfg: SweepConfig) -> int:
    out = _out(args)
    cyl = cfg.scene.cylinder(args.angle, args.roll)
    left, right, truth = render_stereo_pair(cyl, cfg.rig, _seed(args), cfg.render)
    write_pgm(out / "left.pgm", left)
    write_pgm(out / "right.pgm", right)
    _write_json(out / "truth.json", truth.to_dict())
    k = cfg.rig.intrinsics
    save_camera(out / "camera_left.json", k, cfg.rig.left_extrinsics)
    save_camera(out / "camera_right.json", k, cfg.rig.right_extrinsics)
    if args.cloud:
        cloud, _ = sample_cylinder_cloud(
            cyl, cfg.scene.n_face, cfg.scene.n_body, cfg.scene.noise_sigma, _seed(args)
        )
        write_ply(out / "cloud.ply", cloud)
    log.info("wrote scene at %.1f deg to %s", args.angle, out)
    return EXIT_OK


def cmd_disparity(args, cfg: SweepConfig) -> int:
    out = _out(args)
    left, right = read_pgm(args.left), read_pgm(args.right)
    p = cfg.pipeline.match
    dmap = run_stage(
        "stereo", cfg.pipeline.timeout_s, lambda chk: compute_disparity_map(left, right, p, deadline=chk), {}
    )
    write_disparity_csv(out / "disparity.csv", dmap)
    write_pgm(out / "disparity.pgm", disparity_preview(dmap, p.max_disparity))
    print(json.dumps({"valid_pixels": valid_count(dmap)}))
    return EXIT_OK


def _stereo_pair(args, cfg: SweepConfig) -> StereoPair:
    if args.camera_left or args.camera_right:
        if not (args.camera_left and args.camera_right):
            raise CylStereoError("give both --camera-left and --camera-right")
        return StereoPair(
            compose_projection(*load_camera(args.camera_left)), compose_projection(*load_camera(args.camera_right))
        )
    return cfg.rig.stereo_pair()


def cmd_reconstruct(args, cfg: SweepConfig) -> int:
    out = _out(args)
    dmap = read_disparity_csv(args.disparity)
    pair = _stereo_pair(args, cfg)
    cloud = run_stage("reconstruction", cfg.pipeline.timeout_s, lambda chk: reconstruct_cloud(dmap, pair), {})
    write_ply(out / "cloud.ply", cloud)
    write_cloud_csv(out / "cloud.csv", cloud)
    print(json.dumps({"points": len(cloud), "degenerate_skipped": cloud.meta["degenerate_skipped"]}))
    return EXIT_OK


def cmd_pose(args, cfg: SweepConfig) -> int:
    out = _out(args)
    cloud = read_ply(args.cloud)
    pose_cfg = cfg.pipeline.pose.with_seed(_seed(args))
    pose = run_stage("pose", cfg.pipeline.timeout_s, lambda chk: estimate_pose(cloud, pose_cfg), {})
    doc = pose.to_dict()
    _write_json(out / "pose.json", doc)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_run(args, cfg: SweepConfig) -> int:
    out = _out(args)
    truth = None
    if args.angle is not None:
        cyl = cfg.scene.cylinder(args.angle, args.roll)
        left, right, truth = render_stereo_pair(cyl, cfg.rig, _seed(args), cfg.render)
    elif args.left and args.right:
        left, right = read_pgm(args.left), read_pgm(args.right)
        if args.truth:
            truth = GroundTruth.from_dict(json.loads(Path(args.truth).read_text()))
    else:
        raise CylStereoError("run needs --angle or both --left and --right")
    params = replace(cfg.pipeline, pose=cfg.pipeline.pose.with_seed(_seed(args)))
    outcome = execute_pipeline(left, right, _stereo_pair(args, cfg), params)
    doc = {"timings": outcome.timings.to_dict()}
    if outcome.cloud is not None:
        doc["cloud_points"] = len(outcome.cloud)
    if outcome.pose is not None:
        doc["pose"] = outcome.pose.to_dict()
        if truth is not None:
            doc["orientation_error_deg"] = orientation_error(outcome.pose.axis, truth.axis)
            doc["centering_error_mm"] = centering_error(outcome.pose.center, truth.face_center)
    if outcome.error is not None:
        doc["error"] = {"type": type(outcome.error).__name__, "message": str(outcome.error)}
        doc["error"]["stage"] = getattr(outcome.error, "stage", None)
    _write_json(out / "run.json", doc)
    print(json.dumps(doc, sort_keys=True))
    if outcome.error is not None:
        raise outcome.error
    return EXIT_OK


def cmd_sweep(args, cfg: SweepConfig) -> int:
    out = _out(args)
    if args.angles:
        cfg = replace(cfg, angles=tuple(args.angles))
    if args.trials is not None:
        cfg = replace(cfg, trials_per_angle=args.trials)
    if args.mode:
        cfg = replace(cfg, mode=args.mode)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)

    def progress(rec):
        log.info("angle %5.1f trial %2d: %s", rec.angle_deg, rec.trial, rec.status)

    report = run_sweep(cfg, progress=progress)
    report.write(out)
    print(report.summary_csv(), end="")
    return EXIT_OK


def cmd_calibrate(args, cfg: SweepConfig) -> int:
    out = _out(args)
    report = calibrate_file(args.input)
    _write_json(out / "calibration.json", report.to_dict())
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand. Their actions are
    # shared with every subparser, so defaults are filled in after parsing
    # (SUPPRESS) rather than set on the actions.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file overriding scene, rig, render and pipeline parameters")
    common.add_argument("--seed", type=int, help="seed (texture, RANSAC, or sweep master seed)")
    common.add_argument("--out", help="output directory (default: current)")
    common.add_argument("--timeout-s", type=float, help="per-stage time budget in seconds (default 60)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(
        prog="cylstereo", description=__doc__, parents=[common], formatter_class=argparse.RawDescriptionHelpFormatter
    )
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="render a synthetic stereo pair")
    s.add_argument("--angle", type=float, default=0.0, help="tilt of the cylinder axis from the line of sight")
    s.add_argument("--roll", type=float, default=0.0)
    s.add_argument("--cloud", action="store_true", help="also write a directly sampled cloud.ply")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("disparity", parents=[common], help="disparity map from a PGM pair")
    s.add_argument("--left", required=True)
    s.add_argument("--right", required=True)
    s.set_defaults(func=cmd_disparity)

    s = sub.add_parser("reconstruct", parents=[common], help="point cloud from a disparity CSV")
    s.add_argument("--disparity", required=True)
    s.add_argument("--camera-left")
    s.add_argument("--camera-right")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("pose", parents=[common], help="cylinder pose from a PLY cloud")
    s.add_argument("--cloud", required=True)
    s.set_defaults(func=cmd_pose)

    s = sub.add_parser("run", parents=[common], help="end-to-end on a PGM pair or a freshly rendered scene")
    s.add_argument("--left")
    s.add_argument("--right")
    s.add_argument("--truth", help="truth.json for error metrics")
    s.add_argument("--angle", type=float, help="render a scene at this tilt instead of reading images")
    s.add_argument("--roll", type=float, default=0.0)
    s.add_argument("--camera-left")
    s.add_argument("--camera-right")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="errors and timings over tilt angles")
    s.add_argument("--angles", type=float, nargs="+")
    s.add_argument("--trials", type=int)
    s.add_argument("--mode", choices=("image", "cloud"))
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("calibrate", parents=[common], help="refine the focal length from known-depth targets")
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_calibrate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args, _load_config(args))
    except FaceNotFound as exc:
        print(f"end face not found: {exc}", file=sys.stderr)
        return EXIT_OCCLUDED
    except StageTimeout as exc:
        print(f"timeout: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT
    except StageFailure as exc:
        print(f"{exc.stage} failed: {exc.cause}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (CylStereoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
