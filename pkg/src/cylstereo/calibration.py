"""Focal-length refinement for a parallel rig whose residual error sits on the depth axis.

After a first-stage calibration leaves x/y accurate and depth biased, a single
target at known depth gives the corrected focal length ``f0 = f * Z_true / Z_measured``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import CylStereoError, EmptyInput, LengthMismatch, NonPositiveDepth, ZeroDisparity


@dataclass(frozen=True)
class DepthObservation:
    Z_measured: float
    Z_true: float
    disparity: float

    def __post_init__(self) -> None:
        if not self.Z_true > 0:
            raise NonPositiveDepth("Z_true must be positive")
        if not self.disparity > 0:
            raise CylStereoError("disparity must be positive")


@dataclass(frozen=True)
class CalibrationReport:
    xy_error: float
    z_error: float
    f_before: float
    f_after: float

    def to_dict(self) -> dict:
        return asdict(self)


def paper_depth_model(f: float, D: float, d: float) -> float:
    """Depth from disparity in the form ``Z = f * (1 - D / d)``.

    Only the focal correction reasons with it; triangulation works from the
    projection matrices instead.
    """
    if d == 0:
        raise ZeroDisparity("disparity must be nonzero")
    return f * (1.0 - D / d)


def refine_focal(f: float, Z_measured: float, Z_true: float) -> float:
    if not (Z_measured > 0 and Z_true > 0):
        raise NonPositiveDepth("depths must be positive")
    if not f > 0:
        raise CylStereoError("focal length must be positive")
    return f * Z_true / Z_measured


def refine_focal_from_observations(f: float, observations: list[DepthObservation]) -> float:
    """Apply ``refine_focal`` with the mean depth ratio over several observations."""
    if not observations:
        raise EmptyInput("no observations")
    ratios = [o.Z_true / o.Z_measured if o.Z_measured > 0 else np.nan for o in observations]
    if not np.all(np.isfinite(ratios)):
        raise NonPositiveDepth("measured depths must be positive")
    return f * float(np.mean(ratios))


def evaluate_calibration(
    estimated, truth, f_before: float = float("nan"), f_after: float = float("nan")
) -> CalibrationReport:
    """Worst-case planar and depth residuals between paired point lists."""
    est = np.asarray(estimated, dtype=np.float64).reshape(-1, 3)
    tru = np.asarray(truth, dtype=np.float64).reshape(-1, 3)
    if len(est) == 0 or len(tru) == 0:
        raise EmptyInput("empty point list")
    if len(est) != len(tru):
        raise LengthMismatch(f"{len(est)} estimated vs {len(tru)} true points")
    delta = est - tru
    xy = float(np.max(np.hypot(delta[:, 0], delta[:, 1])))
    z = float(np.max(np.abs(delta[:, 2])))
    return CalibrationReport(xy_error=xy, z_error=z, f_before=f_before, f_after=f_after)


def calibrate_file(path: str | Path) -> CalibrationReport:
    """Read ``{f, observations: [...]}`` and report the refined focal length.

    With only depth observations there are no planar residuals, so ``xy_error``
    is 0 and ``z_error`` is the worst remaining depth residual once every
    measurement is rescaled by the focal correction (depth scales linearly with f
    at fixed disparity).
    """
    doc = json.loads(Path(path).read_text())
    try:
        f = float(doc["f"])
        obs = [DepthObservation(**o) for o in doc["observations"]]
    except (KeyError, TypeError) as exc:
        raise CylStereoError(f"bad calibration input: {exc}") from None
    f_after = refine_focal_from_observations(f, obs)
    scale = f_after / f
    z_err = max(abs(o.Z_measured * scale - o.Z_true) for o in obs)
    return CalibrationReport(xy_error=0.0, z_error=float(z_err), f_before=f, f_after=f_after)
