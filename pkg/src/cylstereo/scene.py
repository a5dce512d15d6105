"""Synthetic ground truth: a bored cylinder seen by an ideal parallel stereo rig.

The world frame is the left camera frame. The right camera sits ``baseline`` mm
along +x with the same orientation, so a point at depth Z appears ``f * B / Z``
pixels further left in the right image.

The cylinder is described by its front (visible) end-face centre and the outward
normal of that face, ``axis``. The body extends ``length`` mm along ``-axis``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, CylStereoError
from .geometry import CameraIntrinsics, Extrinsics, compose_projection, project
from .reconstruction import PointCloud, StereoPair

# Table-1 style occlusion boundary: faces at or beyond this tilt count as hidden
OCCLUSION_ANGLE_DEG = 80.0
# tilt of the reference scene used for point-count checks
REFERENCE_ANGLE_DEG = 21.0


@dataclass(frozen=True)
class StereoRigSpec:
    focal: float = 800.0
    baseline: float = 60.0
    width: int = 640
    height: int = 480
    u0: float | None = None
    v0: float | None = None

    def __post_init__(self) -> None:
        if not self.baseline > 0:
            raise CylStereoError("baseline must be positive")
        if self.width < 1 or self.height < 1:
            raise CylStereoError("image size must be positive")

    @property
    def intrinsics(self) -> CameraIntrinsics:
        u0 = (self.width - 1) / 2 if self.u0 is None else self.u0
        v0 = (self.height - 1) / 2 if self.v0 is None else self.v0
        return CameraIntrinsics(self.focal, self.focal, u0, v0)

    @property
    def left_extrinsics(self) -> Extrinsics:
        return Extrinsics.identity()

    @property
    def right_extrinsics(self) -> Extrinsics:
        return Extrinsics(np.eye(3), np.array([-self.baseline, 0.0, 0.0]))

    def stereo_pair(self, intrinsics: CameraIntrinsics | None = None) -> StereoPair:
        k = self.intrinsics if intrinsics is None else intrinsics
        return StereoPair(
            compose_projection(k, self.left_extrinsics),
            compose_projection(k, self.right_extrinsics),
        )


@dataclass(frozen=True)
class CylinderSpec:
    face_center: tuple[float, float, float] = (0.0, 0.0, 285.0)
    axis: tuple[float, float, float] = (0.0, 0.0, -1.0)
    length: float = 200.0
    outer_diameter: float = 40.0
    inner_diameter: float = 20.0
    roll_deg: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.inner_diameter < self.outer_diameter:
            raise CylStereoError("need 0 < inner_diameter < outer_diameter")
        if not self.length > 0:
            raise CylStereoError("length must be positive")
        a = np.asarray(self.axis, dtype=np.float64)
        if not np.isclose(np.linalg.norm(a), 1.0, atol=1e-9):
            object.__setattr__(self, "axis", tuple((a / np.linalg.norm(a)).tolist()))

    @classmethod
    def at_angle(
        cls,
        angle_deg: float,
        distance: float = 285.0,
        azimuth_deg: float = 180.0,
        roll_deg: float = 0.0,
        offset: tuple[float, float] = (0.0, 0.0),
        **kw,
    ) -> "CylinderSpec":
        """Face centre on the line of sight at ``distance``; face normal tilted away
        from the camera direction by ``angle_deg`` toward image azimuth ``azimuth_deg``
        (0 = +u, 90 = +v; the default tilts it toward -u)."""
        c = np.array([offset[0], offset[1], distance], dtype=np.float64)
        to_cam = -c / np.linalg.norm(c)
        az = math.radians(azimuth_deg)
        t = np.array([math.cos(az), math.sin(az), 0.0])
        t = t - (t @ to_cam) * to_cam
        t /= np.linalg.norm(t)
        th = math.radians(angle_deg)
        axis = math.cos(th) * to_cam + math.sin(th) * t
        return cls(face_center=tuple(c.tolist()), axis=tuple(axis.tolist()), roll_deg=roll_deg, **kw)

    @property
    def outer_radius(self) -> float:
        return self.outer_diameter / 2

    @property
    def inner_radius(self) -> float:
        return self.inner_diameter / 2

    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(centre, axis, e1, e2): right-handed face frame, e1/e2 rotated by roll."""
        c = np.asarray(self.face_center, dtype=np.float64)
        a = np.asarray(self.axis, dtype=np.float64)
        ref = np.array([0.0, 1.0, 0.0]) if abs(a[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(ref, a)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(a, e1)
        r = math.radians(self.roll_deg)
        e1, e2 = math.cos(r) * e1 + math.sin(r) * e2, -math.sin(r) * e1 + math.cos(r) * e2
        return c, a, e1, e2


@dataclass(frozen=True)
class GroundTruth:
    face_center: np.ndarray
    axis: np.ndarray
    face_visible: bool
    geometric_visible: bool
    angle_deg: float

    def to_dict(self) -> dict:
        return {
            "face_center": [float(x) for x in self.face_center],
            "axis": [float(x) for x in self.axis],
            "face_visible": bool(self.face_visible),
            "geometric_visible": bool(self.geometric_visible),
            "angle_deg": float(self.angle_deg),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            face_center=np.asarray(d["face_center"], dtype=np.float64),
            axis=np.asarray(d["axis"], dtype=np.float64),
            face_visible=bool(d["face_visible"]),
            geometric_visible=bool(d.get("geometric_visible", d["face_visible"])),
            angle_deg=float(d["angle_deg"]),
        )


def ground_truth(cyl: CylinderSpec, camera_center=(0.0, 0.0, 0.0)) -> GroundTruth:
    c, a, _, _ = cyl.frame()
    to_cam = np.asarray(camera_center, dtype=np.float64) - c
    cos_t = float(a @ to_cam / np.linalg.norm(to_cam))
    angle = math.degrees(math.acos(max(-1.0, min(1.0, cos_t))))
    return GroundTruth(
        face_center=c.copy(),
        axis=a.copy(),
        face_visible=angle < OCCLUSION_ANGLE_DEG,
        geometric_visible=cos_t > 0,
        angle_deg=angle,
    )


# ---------------------------------------------------------------------------
# Procedural surface texture
# ---------------------------------------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


def _lattice(ix: np.ndarray, iy: np.ndarray, key: int) -> np.ndarray:
    """Uniform [0, 1) value at integer lattice points, fixed by ``key``."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(key) + ix.astype(np.int64).astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15))
        h = _mix(h ^ (iy.astype(np.int64).astype(np.uint64) * np.uint64(0xD1B54A32D192ED03)))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(s: np.ndarray, t: np.ndarray, cell: float, key: int) -> np.ndarray:
    """Bilinear value noise in [-0.5, 0.5] over surface coordinates (mm)."""
    x, y = s / cell, t / cell
    ix, iy = np.floor(x), np.floor(y)
    fx, fy = x - ix, y - iy
    v00 = _lattice(ix, iy, key)
    v10 = _lattice(ix + 1, iy, key)
    v01 = _lattice(ix, iy + 1, key)
    v11 = _lattice(ix + 1, iy + 1, key)
    top = v00 + (v10 - v00) * fx
    bot = v01 + (v11 - v01) * fx
    return top + (bot - top) * fy - 0.5


# ---------------------------------------------------------------------------
# Renderer
# ---------------------------------------------------------------------------

SURF_NONE, SURF_FACE, SURF_OUTER, SURF_BORE, SURF_BACK = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class RenderParams:
    face_albedo: float = 0.6
    body_albedo: float = 0.55
    bore_albedo: float = 0.2
    background: float = 0.0
    ambient: float = 0.85
    light_dir: tuple[float, float, float] = (0.0, 0.0, -1.0)  # direction toward the light
    face_texture: float = 0.05
    body_texture: float = 0.018
    texture_cell_mm: float = 0.5
    supersample: int = 2


def _cylinder_hits(o, d, c, a, radius, length):
    """Both ray parameters where rays hit the finite lateral surface (nan if absent)."""
    w = o - c
    wa = w @ a
    da = d @ a
    wp = w - wa * a
    dp = d - da[:, None] * a
    A = np.einsum("ij,ij->i", dp, dp)
    Bq = 2 * (dp @ wp)
    Cq = wp @ wp - radius**2
    disc = Bq * Bq - 4 * A * Cq
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(disc)
        s1 = (-Bq - sq) / (2 * A)
        s2 = (-Bq + sq) / (2 * A)
    out = []
    for s in (s1, s2):
        h = wa + s * da
        good = (disc >= 0) & (A > 1e-15) & (s > 1e-9) & (h <= 0) & (h >= -length)
        out.append(np.where(good, s, np.nan))
    return out


def _disk_hit(o, d, c, a, offset, r_in, r_out):
    w = o - c
    wa = w @ a
    da = d @ a
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (offset - wa) / da
    p = o + s[:, None] * d
    q = p - c
    rad = np.linalg.norm(q - (q @ a)[:, None] * a, axis=1)
    good = (np.abs(da) > 1e-15) & (s > 1e-9) & (rad >= r_in) & (rad <= r_out)
    return np.where(good, s, np.nan)


def raycast(origin, dirs: np.ndarray, cyl: CylinderSpec):
    """Nearest surface hit per ray: (surface id, ray parameter, point, normal)."""
    o = np.asarray(origin, dtype=np.float64)
    c, a, _, _ = cyl.frame()
    Ro, Ri, L = cyl.outer_radius, cyl.inner_radius, cyl.length
    cand = np.full((len(dirs), 7), np.nan)
    cand[:, 0] = _disk_hit(o, dirs, c, a, 0.0, Ri, Ro)
    cand[:, 1], cand[:, 2] = _cylinder_hits(o, dirs, c, a, Ro, L)
    cand[:, 3], cand[:, 4] = _cylinder_hits(o, dirs, c, a, Ri, L)
    cand[:, 5] = _disk_hit(o, dirs, c, a, -L, Ri, Ro)
    surf_of = np.array([SURF_FACE, SURF_OUTER, SURF_OUTER, SURF_BORE, SURF_BORE, SURF_BACK, SURF_NONE])
    filled = np.where(np.isnan(cand), np.inf, cand)
    k = np.argmin(filled, axis=1)
    s = filled[np.arange(len(k)), k]
    hit = np.isfinite(s)
    surf = np.where(hit, surf_of[k], SURF_NONE)
    s = np.where(hit, s, np.nan)
    p = o + s[:, None] * dirs
    q = p - c
    radial = q - (q @ a)[:, None] * a
    with np.errstate(invalid="ignore"):
        radial_n = radial / np.linalg.norm(radial, axis=1, keepdims=True)
    normal = np.zeros_like(p)
    normal[surf == SURF_FACE] = a
    normal[surf == SURF_BACK] = -a
    normal[surf == SURF_OUTER] = radial_n[surf == SURF_OUTER]
    normal[surf == SURF_BORE] = -radial_n[surf == SURF_BORE]
    return surf, s, p, normal


def _shade(surf, p, normal, cyl: CylinderSpec, rp: RenderParams, key: int) -> np.ndarray:
    c, a, e1, e2 = cyl.frame()
    light = np.asarray(rp.light_dir, dtype=np.float64)
    light /= np.linalg.norm(light)
    lam = np.clip(normal @ light, 0.0, None)
    out = np.full(len(surf), rp.background)
    q = p - c
    x1, x2, h = q @ e1, q @ e2, q @ a
    phi = np.arctan2(x2, x1)

    face = (surf == SURF_FACE) | (surf == SURF_BACK)
    if np.any(face):
        base = rp.face_albedo * (rp.ambient + (1 - rp.ambient) * lam[face])
        tex = value_noise(x1[face], x2[face] + np.where(surf[face] == SURF_BACK, 1e4, 0.0), rp.texture_cell_mm, key)
        out[face] = base + 2 * rp.face_texture * tex
    body = surf == SURF_OUTER
    if np.any(body):
        base = rp.body_albedo * (rp.ambient + (1 - rp.ambient) * lam[body])
        tex = value_noise(cyl.outer_radius * phi[body], h[body], rp.texture_cell_mm, key + 1)
        out[body] = base + 2 * rp.body_texture * tex
    bore = surf == SURF_BORE
    if np.any(bore):
        base = rp.bore_albedo * (rp.ambient + (1 - rp.ambient) * lam[bore])
        tex = value_noise(cyl.inner_radius * phi[bore], h[bore], rp.texture_cell_mm, key + 2)
        out[bore] = base + 2 * rp.body_texture * tex
    return np.clip(out, 0.0, 1.0)


def _pixel_rays(k: CameraIntrinsics, width: int, height: int, ss: int) -> np.ndarray:
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    u = (np.arange(width)[:, None] + offs[None, :]).ravel()
    v = (np.arange(height)[:, None] + offs[None, :]).ravel()
    uu, vv = np.meshgrid(u, v)
    y = (vv - k.v0) / k.fy
    x = (uu - k.u0 - k.skew * y) / k.fx
    d = np.stack([x, y, np.ones_like(x)], axis=-1).reshape(-1, 3)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def render_view(cyl: CylinderSpec, rig: StereoRigSpec, camera_x: float, rp: RenderParams, key: int):
    """Render one camera at (camera_x, 0, 0); returns (image, per-pixel surface id)."""
    ss = max(1, int(rp.supersample))
    k = rig.intrinsics
    dirs = _pixel_rays(k, rig.width, rig.height, ss)
    origin = np.array([camera_x, 0.0, 0.0])
    surf, _, p, normal = raycast(origin, dirs, cyl)
    shade = _shade(surf, p, normal, cyl, rp, key)
    img = shade.reshape(rig.height, ss, rig.width, ss).mean(axis=(1, 3))
    centre = surf.reshape(rig.height, ss, rig.width, ss)[:, ss // 2, :, ss // 2]
    return img, centre


def render_stereo_pair(
    cyl: CylinderSpec,
    rig: StereoRigSpec = StereoRigSpec(),
    texture_seed: int = 0,
    params: RenderParams = RenderParams(),
):
    """Render (left, right, truth). Texture is attached to the object surface, so
    both views see the same pattern."""
    c = np.asarray(cyl.face_center, dtype=np.float64)
    if c[2] <= 0:
        raise BehindCamera("cylinder face centre must be in front of the rig")
    key = int(texture_seed) & 0xFFFFFFFFFFFF
    left, _ = render_view(cyl, rig, 0.0, params, key)
    right, _ = render_view(cyl, rig, rig.baseline, params, key)
    return left, right, ground_truth(cyl)


def face_pixel_mask(cyl: CylinderSpec, rig: StereoRigSpec) -> np.ndarray:
    """Boolean (H, W) mask of left-image pixels whose centre ray lands on the front face."""
    dirs = _pixel_rays(rig.intrinsics, rig.width, rig.height, 1)
    surf, _, _, _ = raycast(np.zeros(3), dirs, cyl)
    return (surf == SURF_FACE).reshape(rig.height, rig.width)


def face_center_pixels(truth: GroundTruth, rig: StereoRigSpec) -> tuple[np.ndarray, np.ndarray]:
    sp = rig.stereo_pair()
    return project(truth.face_center, sp.M_left), project(truth.face_center, sp.M_right)


# ---------------------------------------------------------------------------
# Direct cloud sampling
# ---------------------------------------------------------------------------


def sample_cylinder_cloud(
    cyl: CylinderSpec,
    n_face: int = 6500,
    n_body: int = 6000,
    noise_sigma: float = 0.0,
    seed: int = 0,
    camera_center=(0.0, 0.0, 0.0),
) -> tuple[PointCloud, GroundTruth]:
    """Points on the visible end-face annulus and on the camera-facing half of the
    lateral surface, with isotropic Gaussian noise.

    Face points are only emitted while the face counts as visible (tilt below the
    occlusion angle); point order is face first, then body.
    """
    if n_face < 0 or n_body < 0 or n_face + n_body == 0:
        raise CylStereoError("point counts must be non-negative and not both zero")
    rng = np.random.default_rng(seed)
    truth = ground_truth(cyl, camera_center)
    c, a, e1, e2 = cyl.frame()
    Ro, Ri, L = cyl.outer_radius, cyl.inner_radius, cyl.length

    parts = []
    face = np.zeros(0, dtype=bool)
    if truth.face_visible and n_face > 0:
        r = np.sqrt(rng.uniform(Ri**2, Ro**2, n_face))
        t = rng.uniform(0, 2 * np.pi, n_face)
        parts.append(c + (r * np.cos(t))[:, None] * e1 + (r * np.sin(t))[:, None] * e2)
        face = np.ones(n_face, dtype=bool)

    if n_body > 0:
        q = np.asarray(camera_center, dtype=np.float64) - c
        q = q - (q @ a) * a
        if np.linalg.norm(q) < 1e-9:
            q = -e2
        phi0 = math.atan2(q @ e2, q @ e1)
        phi = phi0 + rng.uniform(-np.pi / 2, np.pi / 2, n_body)
        h = rng.uniform(-L, 0.0, n_body)
        radial = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
        parts.append(c + Ro * radial + h[:, None] * a)
        face = np.concatenate([face, np.zeros(n_body, dtype=bool)])

    pts = np.concatenate(parts) if parts else np.zeros((0, 3))
    if noise_sigma > 0:
        pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
    cloud = PointCloud(pts)
    cloud.meta["is_face"] = face
    return cloud, truth
