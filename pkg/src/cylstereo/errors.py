"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class CylStereoError(ValueError):
    """Base class for all errors raised by this package."""


class DepthNonPositive(CylStereoError):
    pass


class ZeroDisparity(CylStereoError):
    pass


class NonPositiveDepth(CylStereoError):
    pass


class EmptyInput(CylStereoError):
    pass


class LengthMismatch(CylStereoError):
    pass


class WindowOutOfBounds(CylStereoError):
    pass


class DimensionMismatch(CylStereoError):
    pass


class DegenerateGeometry(CylStereoError):
    pass


class EmptyCloud(CylStereoError):
    pass


class DegenerateFilter(CylStereoError):
    pass


class TooFewPoints(CylStereoError):
    pass


class NoConsensus(CylStereoError):
    pass


class CoincidentBasePoints(CylStereoError):
    pass


class PointsOffPlane(CylStereoError):
    pass


class FaceNotFound(CylStereoError):
    """The end face could not be isolated (occluded or no planar consensus)."""

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


class BehindCamera(CylStereoError):
    pass


class NonUnitInput(CylStereoError):
    pass


class StageTimeout(CylStereoError):
    def __init__(self, stage: str, budget_s: float):
        super().__init__(f"stage {stage!r} exceeded {budget_s:g} s")
        self.stage = stage
        self.budget_s = budget_s


class StageFailure(CylStereoError):
    """Wraps any stage error with the name of the stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
