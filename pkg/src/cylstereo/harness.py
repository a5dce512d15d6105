"""End-to-end runs, angle sweeps, error metrics and report files."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CylStereoError, FaceNotFound, NonUnitInput, StageFailure, StageTimeout
from .matching import MatchParams, compute_disparity_map
from .pose import CylinderPose, PoseConfig, estimate_pose
from .reconstruction import PointCloud, StereoPair, reconstruct_cloud
from .scene import (
    CylinderSpec,
    GroundTruth,
    RenderParams,
    StereoRigSpec,
    face_pixel_mask,
    ground_truth,
    render_stereo_pair,
    sample_cylinder_cloud,
)

STAGES = ("stereo", "reconstruction", "pose")
UNIT_TOL = 1e-6


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def orientation_error(axis_est, axis_true) -> float:
    """Angle in degrees between two undirected axes, in [0, 90]."""
    a = np.asarray(axis_est, dtype=np.float64)
    b = np.asarray(axis_true, dtype=np.float64)
    for v in (a, b):
        if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise NonUnitInput(f"expected a unit 3-vector, got {v}")
    return math.degrees(math.acos(min(1.0, abs(float(a @ b)))))


def centering_error(c_est, c_true) -> float:
    return float(np.linalg.norm(np.asarray(c_est, dtype=np.float64) - np.asarray(c_true, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineParams:
    match: MatchParams = field(default_factory=MatchParams)
    pose: PoseConfig = field(default_factory=PoseConfig)
    timeout_s: float = 60.0  # per stage

    def __post_init__(self) -> None:
        if not self.timeout_s > 0:
            raise CylStereoError("timeout_s must be positive")


@dataclass(frozen=True)
class StageTimings:
    stereo: float = 0.0
    reconstruction: float = 0.0
    pose: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class _Clock:
    """Per-stage wall-clock budget; ``check`` raises once the budget is spent."""

    def __init__(self, stage: str, budget_s: float):
        self.stage, self.budget_s = stage, budget_s
        self.start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def check(self) -> None:
        if self.elapsed() > self.budget_s:
            raise StageTimeout(self.stage, self.budget_s)


def run_stage(name: str, budget_s: float, fn: Callable, times: dict):
    """Call ``fn(check)`` under a time budget and record its duration in ``times``.

    ``check`` raises StageTimeout once the budget is spent; package errors other
    than FaceNotFound come back wrapped in StageFailure naming the stage.
    """
    clock = _Clock(name, budget_s)
    try:
        out = fn(clock.check)
        clock.check()
    except (StageTimeout, FaceNotFound):
        times[name] = clock.elapsed()
        raise
    except CylStereoError as exc:
        times[name] = clock.elapsed()
        raise StageFailure(name, exc) from exc
    times[name] = clock.elapsed()
    return out


@dataclass
class PipelineOutcome:
    pose: CylinderPose | None
    timings: StageTimings
    cloud: PointCloud | None = None
    error: CylStereoError | None = None


def _as_pair(rig) -> StereoPair:
    return rig.stereo_pair() if isinstance(rig, StereoRigSpec) else rig


def execute_pipeline(left, right, rig, params: PipelineParams = PipelineParams()) -> PipelineOutcome:
    """Like :func:`run_pipeline` but returns failures instead of raising them."""
    pair = _as_pair(rig)
    times: dict = {}
    cloud = pose = None
    error = None
    t0 = time.perf_counter()
    try:
        dmap = run_stage(
            "stereo", params.timeout_s, lambda chk: compute_disparity_map(left, right, params.match, deadline=chk), times
        )
        cloud = run_stage("reconstruction", params.timeout_s, lambda chk: reconstruct_cloud(dmap, pair), times)
        pose = run_stage("pose", params.timeout_s, lambda chk: estimate_pose(cloud, params.pose), times)
    except CylStereoError as exc:
        error = exc
    timings = StageTimings(**times, total=time.perf_counter() - t0)
    return PipelineOutcome(pose, timings, cloud, error)


def run_pipeline(left, right, rig, params: PipelineParams = PipelineParams()) -> tuple[CylinderPose, StageTimings]:
    """Disparity, cloud and pose for one stereo pair, timing each stage.

    Raises FaceNotFound when no end face is found, StageTimeout when a stage
    exceeds ``params.timeout_s``, and StageFailure (naming the stage) otherwise.
    """
    out = execute_pipeline(left, right, rig, params)
    if out.error is not None:
        raise out.error
    return out.pose, out.timings


def execute_cloud_pipeline(cloud: PointCloud, params: PipelineParams = PipelineParams()) -> PipelineOutcome:
    times: dict = {}
    pose, error = None, None
    t0 = time.perf_counter()
    try:
        pose = run_stage("pose", params.timeout_s, lambda chk: estimate_pose(cloud, params.pose), times)
    except CylStereoError as exc:
        error = exc
    return PipelineOutcome(pose, StageTimings(**times, total=time.perf_counter() - t0), cloud, error)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneParams:
    distance: float = 285.0
    azimuth_deg: float = 180.0
    length: float = 200.0
    outer_diameter: float = 40.0
    inner_diameter: float = 20.0
    # cloud mode
    noise_sigma: float = 0.3
    n_face: int = 6500
    n_body: int = 6000

    def cylinder(self, angle_deg: float, roll_deg: float = 0.0) -> CylinderSpec:
        return CylinderSpec.at_angle(
            angle_deg,
            distance=self.distance,
            azimuth_deg=self.azimuth_deg,
            roll_deg=roll_deg,
            length=self.length,
            outer_diameter=self.outer_diameter,
            inner_diameter=self.inner_diameter,
        )


@dataclass(frozen=True)
class SweepConfig:
    angles: tuple[float, ...] = tuple(float(a) for a in range(0, 91, 10))
    trials_per_angle: int = 14
    master_seed: int = 0
    mode: str = "image"  # or "cloud"
    scene: SceneParams = field(default_factory=SceneParams)
    rig: StereoRigSpec = field(default_factory=StereoRigSpec)
    render: RenderParams = field(default_factory=RenderParams)
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if self.trials_per_angle < 1:
            raise CylStereoError("trials_per_angle must be >= 1")
        if not self.angles or any(not 0 <= a <= 90 for a in self.angles):
            raise CylStereoError("angles must be non-empty and within [0, 90]")
        if self.mode not in ("image", "cloud"):
            raise CylStereoError(f"mode must be 'image' or 'cloud', got {self.mode!r}")


def trial_seed(master_seed: int, angle_index: int, trial: int) -> int:
    """Independent 63-bit seed for one trial, derived from the master seed."""
    ss = np.random.SeedSequence([int(master_seed), int(angle_index), int(trial)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class TrialDraw:
    """Per-trial randomness: scene roll, surface texture and estimator seeds."""

    roll_deg: float
    texture_seed: int
    sample_seed: int
    ransac_seed: int

    @classmethod
    def from_seed(cls, seed: int) -> "TrialDraw":
        rng = np.random.default_rng(seed)
        roll = float(rng.uniform(0.0, 360.0))
        tex, sample, ransac = (int(x) for x in rng.integers(0, 2**31 - 1, size=3))
        return cls(roll, tex, sample, ransac)


@dataclass
class TrialRecord:
    angle_deg: float
    trial: int
    seed: int
    status: str  # ok | occluded | timeout | failed
    stage: str
    orientation_error: float
    centering_error: float
    radius: float
    view_angle_deg: float
    cloud_points: int
    face_points: int
    face_visible: bool
    message: str
    timings: StageTimings = field(default_factory=StageTimings)

    # Column order of the per-trial CSV; wall-clock values live in a separate file.
    COLUMNS = (
        "angle_deg",
        "trial",
        "seed",
        "status",
        "stage",
        "orientation_error",
        "centering_error",
        "radius",
        "view_angle_deg",
        "cloud_points",
        "face_points",
        "face_visible",
        "message",
    )

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.COLUMNS}


def _classify(error) -> tuple[str, str]:
    if error is None:
        return "ok", ""
    if isinstance(error, FaceNotFound):
        return "occluded", "pose"
    if isinstance(error, StageTimeout):
        return "timeout", error.stage
    if isinstance(error, StageFailure):
        return "failed", error.stage
    return "failed", ""


def run_trial(cfg: SweepConfig, angle_index: int, trial: int) -> TrialRecord:
    angle = cfg.angles[angle_index]
    seed = trial_seed(cfg.master_seed, angle_index, trial)
    draw = TrialDraw.from_seed(seed)
    cyl = cfg.scene.cylinder(angle, draw.roll_deg)
    pipeline = replace(cfg.pipeline, pose=cfg.pipeline.pose.with_seed(draw.ransac_seed))

    if cfg.mode == "image":
        left, right, truth = render_stereo_pair(cyl, cfg.rig, draw.texture_seed, cfg.render)
        out = execute_pipeline(left, right, cfg.rig, pipeline)
        face_points = 0
        if out.cloud is not None and out.cloud.pixels is not None and len(out.cloud):
            mask = face_pixel_mask(cyl, cfg.rig)
            px = out.cloud.pixels.astype(int)
            face_points = int(np.count_nonzero(mask[px[:, 1], px[:, 0]]))
    else:
        cloud, truth = sample_cylinder_cloud(
            cyl, cfg.scene.n_face, cfg.scene.n_body, cfg.scene.noise_sigma, draw.sample_seed
        )
        out = execute_cloud_pipeline(cloud, pipeline)
        face_points = int(np.count_nonzero(cloud.meta["is_face"]))

    status, stage = _classify(out.error)
    if isinstance(out.error, FaceNotFound) and out.error.stage:
        stage = out.error.stage
    oe = ce = radius = view = math.nan
    if out.pose is not None:
        oe = orientation_error(out.pose.axis, truth.axis)
        ce = centering_error(out.pose.center, truth.face_center)
        radius = out.pose.radius
        view = out.pose.inlier_stats.get("view_angle_deg", math.nan)
    return TrialRecord(
        angle_deg=angle,
        trial=trial,
        seed=seed,
        status=status,
        stage=stage,
        orientation_error=oe,
        centering_error=ce,
        radius=radius,
        view_angle_deg=view,
        cloud_points=0 if out.cloud is None else len(out.cloud),
        face_points=face_points,
        face_visible=truth.face_visible,
        message="" if out.error is None else str(out.error),
        timings=out.timings,
    )


def _mean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return math.fsum(vals) / len(vals) if vals else math.nan


@dataclass
class AngleSummary:
    angle_deg: float
    trials: int
    successes: int
    occluded: int
    timeouts: int
    failures: int
    mean_orientation_error: float
    mean_centering_error: float
    mean_times: dict

    COLUMNS = (
        "angle_deg",
        "trials",
        "successes",
        "occluded",
        "timeouts",
        "failures",
        "mean_orientation_error",
        "mean_centering_error",
    )

    @classmethod
    def from_trials(cls, angle: float, recs: list[TrialRecord]) -> "AngleSummary":
        ok = [r for r in recs if r.status == "ok"]
        times = {s: _mean([getattr(r.timings, s) for r in ok]) for s in STAGES + ("total",)}
        return cls(
            angle_deg=angle,
            trials=len(recs),
            successes=len(ok),
            occluded=sum(r.status == "occluded" for r in recs),
            timeouts=sum(r.status == "timeout" for r in recs),
            failures=sum(r.status == "failed" for r in recs),
            mean_orientation_error=_mean([r.orientation_error for r in ok]),
            mean_centering_error=_mean([r.centering_error for r in ok]),
            mean_times=times,
        )

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.COLUMNS}


@dataclass
class SweepReport:
    config: SweepConfig
    trials: list[TrialRecord]
    rows: list[AngleSummary]

    def to_dict(self) -> dict:
        """Deterministic content only; wall-clock timings are kept out."""
        return {
            "config": config_to_dict(self.config),
            "summary": [_json_row(r.row()) for r in self.rows],
            "trials": [_json_row(t.row()) for t in self.trials],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def trials_csv(self) -> str:
        return _csv(TrialRecord.COLUMNS, [t.row() for t in self.trials])

    def summary_csv(self) -> str:
        return _csv(AngleSummary.COLUMNS, [r.row() for r in self.rows])

    def timings_csv(self) -> str:
        cols = ("angle_deg", "trial", "seed", "status") + STAGES + ("total",)
        rows = [{**{k: getattr(t, k) for k in cols[:4]}, **t.timings.to_dict()} for t in self.trials]
        return _csv(cols, rows)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "trials.csv": self.trials_csv(),
            "summary.csv": self.summary_csv(),
            "report.json": self.to_json(),
            "timings.csv": self.timings_csv(),
            "sweep.svg": sweep_svg(self),
        }
        paths = {}
        for name, text in files.items():
            paths[name] = out / name
            paths[name].write_text(text)
        return paths


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _json_row(row: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}


def run_sweep(cfg: SweepConfig = SweepConfig(), progress: Callable[[TrialRecord], None] | None = None) -> SweepReport:
    """Every angle x trial, then per-angle means over the successful trials.

    With ``workers > 1`` trials run in separate processes; records are always
    assembled in angle/trial order, so the report does not depend on scheduling.
    """
    jobs = [(i, t) for i in range(len(cfg.angles)) for t in range(cfg.trials_per_angle)]
    if cfg.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(run_trial, cfg, i, t) for i, t in jobs]
            records = []
            for f in futures:
                records.append(f.result())
                if progress:
                    progress(records[-1])
    else:
        records = []
        for i, t in jobs:
            records.append(run_trial(cfg, i, t))
            if progress:
                progress(records[-1])
    rows = [
        AngleSummary.from_trials(a, [r for r in records if r.angle_deg == a and r.trial < cfg.trials_per_angle])
        for a in dict.fromkeys(cfg.angles)
    ]
    return SweepReport(cfg, records, rows)


# ---------------------------------------------------------------------------
# Config (de)serialisation
# ---------------------------------------------------------------------------


def config_to_dict(obj) -> dict:
    def conv(v):
        if is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in fields(v)}
        if isinstance(v, (tuple, list)):
            return [conv(x) for x in v]
        return v

    return conv(obj)


def config_from_dict(cls, data: dict, base=None):
    """Build dataclass ``cls`` from a (possibly partial) dict; missing keys keep defaults."""
    base = cls() if base is None else base
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise CylStereoError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {}
    for name, value in data.items():
        current = getattr(base, name)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise CylStereoError(f"{cls.__name__}.{name} must be an object")
            kw[name] = config_from_dict(type(current), value, current)
        elif isinstance(current, tuple):
            kw[name] = tuple(value)
        else:
            kw[name] = value
    try:
        return replace(base, **kw)
    except TypeError as exc:
        raise CylStereoError(f"bad {cls.__name__} config: {exc}") from None


# ---------------------------------------------------------------------------
# SVG chart
# ---------------------------------------------------------------------------


def sweep_svg(report: SweepReport, width: int = 720, height: int = 300) -> str:
    """Three small panels against angle: orientation error, centering error, total time."""
    angles = [r.angle_deg for r in report.rows]
    series = [
        ("orientation error (deg)", [r.mean_orientation_error for r in report.rows], "#1f77b4"),
        ("centering error (mm)", [r.mean_centering_error for r in report.rows], "#d62728"),
        ("total time (s)", [r.mean_times["total"] for r in report.rows], "#2ca02c"),
    ]
    pw, ph, margin = width / 3, height, 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    a_lo, a_hi = min(angles), max(angles)
    a_span = (a_hi - a_lo) or 1.0
    for k, (title, ys, color) in enumerate(series):
        x0 = k * pw + margin
        x1 = (k + 1) * pw - 10
        y0, y1 = ph - margin, 25
        finite = [y for y in ys if not math.isnan(y)]
        top = max(finite) * 1.1 if finite and max(finite) > 0 else 1.0
        sx = lambda a: x0 + (a - a_lo) / a_span * (x1 - x0)
        sy = lambda y: y0 - y / top * (y0 - y1)
        parts.append(f'<text x="{(x0 + x1) / 2:.1f}" y="15" text-anchor="middle">{title}</text>')
        parts.append(f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x1:.1f}" y2="{y0:.1f}" stroke="black"/>')
        parts.append(f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x0:.1f}" y2="{y1:.1f}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 4:.1f}" y="{y1 + 4:.1f}" text-anchor="end">{top:.3g}</text>')
        parts.append(f'<text x="{x0 - 4:.1f}" y="{y0 + 4:.1f}" text-anchor="end">0</text>')
        for a in angles:
            parts.append(f'<text x="{sx(a):.1f}" y="{y0 + 14:.1f}" text-anchor="middle">{a:g}</text>')
        # break the line at angles without successful trials and mark them
        run: list[str] = []
        for a, y in zip(angles, ys):
            if math.isnan(y):
                if len(run) > 1:
                    parts.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(run)}"/>')
                run = []
                parts.append(f'<text x="{sx(a):.1f}" y="{y0 - 4:.1f}" text-anchor="middle" fill="gray">x</text>')
                continue
            run.append(f"{sx(a):.1f},{sy(y):.1f}")
            parts.append(f'<circle cx="{sx(a):.1f}" cy="{sy(y):.1f}" r="2.5" fill="{color}"/>')
        if len(run) > 1:
            parts.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(run)}"/>')
        parts.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{ph - 8}" text-anchor="middle">angle (deg)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def ground_truth_for(cfg: SweepConfig, angle_index: int, trial: int) -> GroundTruth:
    """Truth of one sweep trial without re-running it."""
    draw = TrialDraw.from_seed(trial_seed(cfg.master_seed, angle_index, trial))
    return ground_truth(cfg.scene.cylinder(cfg.angles[angle_index], draw.roll_deg))
