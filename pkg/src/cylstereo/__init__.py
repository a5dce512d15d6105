"""Stereo pose estimation for bored cylinders.

Pipeline: window matching on rectified pairs, least-squares triangulation,
density filtering, RANSAC end-face plane and rim circle.
"""

from .errors import CylStereoError, FaceNotFound, StageFailure, StageTimeout
from .geometry import CameraIntrinsics, Extrinsics, ProjectionMatrix, compose_projection, project
from .harness import (
    PipelineParams,
    StageTimings,
    SweepConfig,
    SweepReport,
    centering_error,
    orientation_error,
    run_pipeline,
    run_sweep,
)
from .matching import INVALID, MatchParams, compute_disparity_map
from .pose import CylinderPose, PoseConfig, estimate_pose, extract_end_face
from .reconstruction import PointCloud, StereoPair, reconstruct_cloud, triangulate
from .scene import CylinderSpec, RenderParams, StereoRigSpec, render_stereo_pair, sample_cylinder_cloud

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "CylStereoError",
    "CylinderPose",
    "CylinderSpec",
    "Extrinsics",
    "FaceNotFound",
    "INVALID",
    "MatchParams",
    "PipelineParams",
    "PointCloud",
    "PoseConfig",
    "ProjectionMatrix",
    "RenderParams",
    "StageFailure",
    "StageTimeout",
    "StageTimings",
    "StereoPair",
    "StereoRigSpec",
    "SweepConfig",
    "SweepReport",
    "centering_error",
    "compose_projection",
    "compute_disparity_map",
    "estimate_pose",
    "extract_end_face",
    "orientation_error",
    "project",
    "reconstruct_cloud",
    "render_stereo_pair",
    "run_pipeline",
    "run_sweep",
    "sample_cylinder_cloud",
    "triangulate",
]
