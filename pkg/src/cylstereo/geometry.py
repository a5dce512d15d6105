"""Pinhole camera model: world -> camera -> pixel, and the 3x4 projection matrix.

Conventions:
- world and camera lengths are millimetres, image coordinates are pixels;
- extrinsics map world to camera, ``X_c = R @ X_w + T``;
- ``u`` is the column, ``v`` the row, origin at the top-left pixel centre.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CylStereoError, DepthNonPositive

# |h3| below this is treated as a point on the camera plane
DEHOMOGENIZE_EPS = 1e-12
ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Intrinsic parameters in pixels; ``skew`` is tan(alpha)."""

    fx: float
    fy: float
    u0: float
    v0: float
    skew: float = 0.0

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise CylStereoError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (np.isfinite(self.u0) and np.isfinite(self.v0) and np.isfinite(self.skew)):
            raise CylStereoError("principal point and skew must be finite")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.u0], [0.0, self.fy, self.v0], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def scaled_focal(self, factor: float) -> "CameraIntrinsics":
        return CameraIntrinsics(self.fx * factor, self.fy * factor, self.u0, self.v0, self.skew)


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """Rigid world-to-camera transform. ``R`` must be a proper rotation."""

    R: np.ndarray
    T: np.ndarray

    def __post_init__(self) -> None:
        R = np.array(self.R, dtype=np.float64).reshape(3, 3)
        T = np.array(self.T, dtype=np.float64).reshape(3)
        if np.max(np.abs(R @ R.T - np.eye(3))) >= ROTATION_TOL:
            raise CylStereoError("R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise CylStereoError("R is not a proper rotation (det != 1)")
        if not np.all(np.isfinite(T)):
            raise CylStereoError("T must be finite")
        R.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        """4x4 homogeneous form ``[R T; 0 1]``."""
        out = np.eye(4)
        out[:3, :3] = self.R
        out[:3, 3] = self.T
        return out

    @property
    def center(self) -> np.ndarray:
        """Camera optical centre in world coordinates."""
        return -self.R.T @ self.T


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    m: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.m, dtype=np.float64).reshape(3, 4)
        if not np.all(np.isfinite(m)):
            raise CylStereoError("projection matrix has non-finite entries")
        if np.linalg.matrix_rank(m) != 3:
            raise CylStereoError("projection matrix must have rank 3")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def scaled(self, factor: float) -> "ProjectionMatrix":
        return ProjectionMatrix(self.m * factor)

    @property
    def center(self) -> np.ndarray:
        """Optical centre: the right null vector of ``m``, dehomogenized."""
        _, _, vt = np.linalg.svd(self.m)
        c = vt[-1]
        return c[:3] / c[3]


def world_to_camera(p, e: Extrinsics) -> np.ndarray:
    """Apply ``R @ p + T``. Accepts a single point (3,) or a stack (N, 3)."""
    p = np.asarray(p, dtype=np.float64)
    return p @ e.R.T + e.T


def camera_to_pixel(p, k: CameraIntrinsics) -> np.ndarray:
    """Perspective division followed by the skewed pixel mapping."""
    p = np.asarray(p, dtype=np.float64)
    X, Y, Z = p[..., 0], p[..., 1], p[..., 2]
    if np.any(Z <= 0):
        raise DepthNonPositive("camera-frame depth must be positive")
    x, y = X / Z, Y / Z
    u = k.fx * x + k.skew * y + k.u0
    v = k.fy * y + k.v0
    return np.stack([u, v], axis=-1)


def compose_projection(k: CameraIntrinsics, e: Extrinsics) -> ProjectionMatrix:
    intrinsic_34 = np.hstack([k.K, np.zeros((3, 1))])
    return ProjectionMatrix(intrinsic_34 @ e.matrix)


def homogeneous_image(p, M: ProjectionMatrix) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return p @ M.m[:, :3].T + M.m[:, 3]


def project(p, M: ProjectionMatrix) -> np.ndarray:
    """Project world point(s) through ``M``; raises if any lies on/behind the camera."""
    h = homogeneous_image(p, M)
    h3 = h[..., 2]
    if np.any(h3 <= DEHOMOGENIZE_EPS):
        raise DepthNonPositive("homogeneous depth must be positive")
    return h[..., :2] / h3[..., None]


def rotation_about(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix for a rotation of ``angle_rad`` about ``axis``."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * K + (1 - np.cos(angle_rad)) * (K @ K)


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def camera_to_dict(k: CameraIntrinsics, e: Extrinsics) -> dict:
    return {
        "fx": k.fx,
        "fy": k.fy,
        "skew": k.skew,
        "u0": k.u0,
        "v0": k.v0,
        "R": e.R.tolist(),
        "T": e.T.tolist(),
    }


def camera_from_dict(d: dict) -> tuple[CameraIntrinsics, Extrinsics]:
    try:
        k = CameraIntrinsics(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            u0=float(d["u0"]),
            v0=float(d["v0"]),
            skew=float(d.get("skew", 0.0)),
        )
        e = Extrinsics(np.asarray(d["R"], dtype=np.float64), np.asarray(d["T"], dtype=np.float64))
    except KeyError as exc:
        raise CylStereoError(f"camera JSON missing field {exc}") from None
    return k, e


def save_camera(path: str | Path, k: CameraIntrinsics, e: Extrinsics) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(k, e), indent=2))


def load_camera(path: str | Path) -> tuple[CameraIntrinsics, Extrinsics]:
    return camera_from_dict(json.loads(Path(path).read_text()))
