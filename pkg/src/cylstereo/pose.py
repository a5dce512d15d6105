"""Cylinder pose from a reconstructed cloud.

Steps: keep the densest voxels (the end face), RANSAC a plane through them,
project the face points onto that plane, express them in an in-plane orthonormal
frame, RANSAC the rim circle in 2-D, and lift its centre back to 3-D. The axis is
the plane normal, oriented toward the camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    CoincidentBasePoints,
    CylStereoError,
    DegenerateFilter,
    EmptyCloud,
    FaceNotFound,
    NoConsensus,
    PointsOffPlane,
    TooFewPoints,
)
from .reconstruction import PointCloud

FLATTEN_TOL = 1e-6
ON_PLANE_TOL = 1e-9
REFIT_ROUNDS = 4


@dataclass(frozen=True)
class Plane:
    """``a x + b y + c z + d = 0`` with a unit normal (a, b, c)."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self) -> None:
        n = math.sqrt(self.a**2 + self.b**2 + self.c**2)
        if n == 0:
            raise CylStereoError("plane normal is zero")
        if abs(n - 1.0) > 1e-12:
            object.__setattr__(self, "a", self.a / n)
            object.__setattr__(self, "b", self.b / n)
            object.__setattr__(self, "c", self.c / n)
            object.__setattr__(self, "d", self.d / n)

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return cls(float(n[0]), float(n[1]), float(n[2]), float(-n @ np.asarray(point, dtype=np.float64)))

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def flipped(self) -> "Plane":
        return Plane(-self.a, -self.b, -self.c, -self.d)

    def signed_distance(self, p) -> np.ndarray:
        return np.asarray(p, dtype=np.float64) @ self.normal + self.d


@dataclass(frozen=True, eq=False)
class AffineMap:
    """Homogeneous 4x4 map from world to in-plane coordinates, plus its inverse."""

    M: np.ndarray
    M_inv: np.ndarray
    plane: Plane
    origin: np.ndarray

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return p @ self.M[:3, :3].T + self.M[:3, 3]

    def invert(self, coords) -> np.ndarray:
        q = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
        return q @ self.M_inv[:3, :3].T + self.M_inv[:3, 3]


@dataclass(frozen=True)
class Circle2D:
    cx: float
    cy: float
    r: float

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise CylStereoError("circle radius must be positive")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def residuals(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return np.hypot(pts[:, 0] - self.cx, pts[:, 1] - self.cy) - self.r


@dataclass(frozen=True)
class RansacParams:
    max_iterations: int = 500
    inlier_threshold: float = 0.8
    min_inlier_fraction: float = 0.5
    sample_fraction: float = 1.0
    seed: int = 0
    min_inliers: int = 3

    def __post_init__(self) -> None:
        if not self.inlier_threshold > 0:
            raise CylStereoError("inlier_threshold must be positive")
        for name in ("min_inlier_fraction", "sample_fraction"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise CylStereoError(f"{name} must be in (0, 1]")
        if self.max_iterations < 1:
            raise CylStereoError("max_iterations must be >= 1")


def default_plane_params(seed: int = 0) -> RansacParams:
    return RansacParams(max_iterations=500, inlier_threshold=0.8, min_inlier_fraction=0.2, seed=seed)


def default_circle_params(seed: int = 0) -> RansacParams:
    return RansacParams(
        max_iterations=1000, inlier_threshold=0.5, min_inlier_fraction=0.05, sample_fraction=0.25, seed=seed
    )


@dataclass(frozen=True)
class PoseConfig:
    voxel_size: float = 2.0
    density_quantile: float = 0.6
    # voxels are kept when their occupancy reaches this fraction of the quantile
    density_relative: float = 0.5
    use_density_filter: bool = True
    plane: RansacParams = field(default_factory=default_plane_params)
    circle: RansacParams = field(default_factory=lambda: replace(default_circle_params(), min_inlier_fraction=0.4))
    # face points are those within this distance of the fitted plane
    face_slab: float = 3.0
    # the rim circle is fitted to the outermost face point in each of this many
    # equal angular sectors
    rim_sectors: int = 120
    # the rim circle must have points within rim_band of it in this fraction of
    # 16 angular sectors
    min_rim_coverage: float = 0.75
    rim_band: float = 2.0
    # faces seen more obliquely than this are reported as occluded
    max_view_angle_deg: float = 80.0
    min_face_points: int = 200
    # planes tried, largest consensus first, before giving up on the face
    max_planes: int = 10

    def with_seed(self, seed: int) -> "PoseConfig":
        return replace(
            self,
            plane=replace(self.plane, seed=seed),
            circle=replace(self.circle, seed=seed + 1),
        )


@dataclass(frozen=True, eq=False)
class CylinderPose:
    center: np.ndarray
    axis: np.ndarray
    radius: float
    inlier_stats: dict

    def to_dict(self) -> dict:
        return {
            "center": [float(x) for x in self.center],
            "axis": [float(x) for x in self.axis],
            "radius": float(self.radius),
            "stage_stats": self.inlier_stats,
        }


# ---------------------------------------------------------------------------
# Density filter
# ---------------------------------------------------------------------------


def voxel_occupancy(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Number of points sharing each point's voxel."""
    idx = np.floor(np.asarray(points) / voxel_size).astype(np.int64)
    if len(idx) == 0:
        return np.zeros(0, dtype=np.int64)
    idx -= idx.min(axis=0)
    span = idx.max(axis=0) + 1
    if np.prod(span.astype(np.float64)) < 2**62:
        keys = (idx[:, 0] * span[1] + idx[:, 1]) * span[2] + idx[:, 2]
        _, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    else:
        _, inverse, counts = np.unique(idx, axis=0, return_inverse=True, return_counts=True)
    return counts[inverse.ravel()]


def extract_end_face(
    cloud: PointCloud, voxel_size: float = 2.0, density_quantile: float = 0.6, relative: float = 0.5
) -> PointCloud:
    """Keep points in the densest voxels.

    The threshold is ``relative`` times the ``density_quantile`` quantile of the
    occupancy seen by each point, so it sits inside the dense population even
    when sparse voxels greatly outnumber dense ones.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cloud is empty")
    if not voxel_size > 0:
        raise CylStereoError("voxel_size must be positive")
    occ = voxel_occupancy(cloud.points, voxel_size)
    threshold = relative * np.quantile(occ, density_quantile)
    keep = occ >= threshold
    if not np.any(keep):
        raise DegenerateFilter("density filter removed every point")
    out = cloud.subset(keep)
    out.meta["density_threshold"] = float(threshold)
    return out


# ---------------------------------------------------------------------------
# Plane
# ---------------------------------------------------------------------------


def _pca_plane(points: np.ndarray) -> Plane:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    return Plane.from_point_normal(centroid, vt[-1])


def _rank(points: np.ndarray) -> int:
    if len(points) == 0:
        return 0
    s = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    scale = max(1.0, float(np.abs(points).max()))
    return int(np.sum(s > 1e-9 * scale))


def fit_plane_ransac(cloud, p: RansacParams = RansacParams()) -> tuple[Plane, np.ndarray]:
    """Best-consensus plane refit by least squares. Returns (plane, inlier mask)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n < 3 or _rank(pts) < 2:
        raise TooFewPoints(f"need >= 3 non-collinear points, got {n}")
    rng = np.random.default_rng(p.seed)
    idx = np.stack([rng.choice(n, 3, replace=False) for _ in range(p.max_iterations)])
    p0, p1, p2 = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(normals, axis=1)
    good = norm > 1e-12
    normals = normals[good] / norm[good, None]
    offsets = -np.einsum("ij,ij->i", normals, p0[good])
    if len(normals) == 0:
        raise NoConsensus("every sample was degenerate")

    best_count, best_k = -1, 0
    chunk = max(1, 2_000_000 // n)
    for s in range(0, len(normals), chunk):
        dist = np.abs(pts @ normals[s : s + chunk].T + offsets[s : s + chunk])
        counts = np.count_nonzero(dist <= p.inlier_threshold, axis=0)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best_k = int(counts[k]), s + k

    plane = Plane(*normals[best_k], offsets[best_k])
    inliers = np.abs(plane.signed_distance(pts)) <= p.inlier_threshold
    band = inliers
    for _ in range(REFIT_ROUNDS):
        if np.count_nonzero(band) < 3:
            break
        plane = _pca_plane(pts[band])
        res = np.abs(plane.signed_distance(pts))
        inliers = res <= p.inlier_threshold
        # tighten the refit band to the inliers' own spread when it is much
        # smaller than the threshold (nearly noise-free data)
        spread = 3 * 1.4826 * float(np.median(res[inliers])) if np.any(inliers) else p.inlier_threshold
        band = res <= min(p.inlier_threshold, max(spread, 1e-9))
        if np.count_nonzero(band) < 3:
            band = inliers
    count = int(np.count_nonzero(inliers))
    if count < max(3, p.min_inliers) or count / n < p.min_inlier_fraction:
        raise NoConsensus(f"best plane has {count}/{n} inliers")
    return plane, inliers


def project_to_plane(p, plane: Plane) -> np.ndarray:
    """Foot of the perpendicular from ``p`` (or each row of ``p``) onto ``plane``."""
    p = np.asarray(p, dtype=np.float64)
    t = plane.signed_distance(p)
    return p - np.multiply.outer(t, plane.normal)


# ---------------------------------------------------------------------------
# In-plane frame
# ---------------------------------------------------------------------------


def plane_basis(plane: Plane, A, B) -> AffineMap:
    """Map sending A, A+uAB, A+uV, A+uN to the canonical origin and unit axes,
    with uAB = (B-A)/|B-A|, uN the plane normal and uV = uN x uAB."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    scale = max(1.0, float(np.abs(np.concatenate([A, B])).max()))
    if np.linalg.norm(B - A) <= 1e-12 * scale:
        raise CoincidentBasePoints("A and B coincide")
    if max(abs(plane.signed_distance(A)), abs(plane.signed_distance(B))) > ON_PLANE_TOL * scale:
        raise PointsOffPlane("base points must lie on the plane")
    uAB = (B - A) / np.linalg.norm(B - A)
    uN = plane.normal
    uAB = uAB - (uAB @ uN) * uN
    uAB /= np.linalg.norm(uAB)
    uV = np.cross(uN, uAB)
    src = np.ones((4, 4))
    src[:3] = np.column_stack([A, A + uAB, A + uV, A + uN])
    dst = np.ones((4, 4))
    dst[:3] = np.column_stack([np.zeros(3), np.eye(3)])
    M = np.linalg.solve(src.T, dst.T).T
    M_inv = np.linalg.solve(dst.T, src.T).T
    return AffineMap(M=M, M_inv=M_inv, plane=plane, origin=A)


def flatten(points, m: AffineMap, tol: float = FLATTEN_TOL) -> np.ndarray:
    q = m.apply(points)
    if np.any(np.abs(q[:, 2]) > tol):
        raise PointsOffPlane(f"max off-plane coordinate {np.abs(q[:, 2]).max():.3g}")
    return q[:, :2]


def unflatten(xy, m: AffineMap) -> np.ndarray:
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    return m.invert(np.column_stack([xy, np.zeros(len(xy))]))


def most_separated_pair(points: np.ndarray, plane: Plane) -> tuple[int, int]:
    """Indices of the two in-plane points farthest apart (via the 2-D hull)."""
    n = plane.normal
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    xy = np.column_stack([points @ e1, points @ e2])
    try:
        cand = ConvexHull(xy).vertices if len(xy) > 3 else np.arange(len(xy))
    except QhullError:
        cand = np.arange(len(xy))
    sub = xy[cand]
    dist = np.linalg.norm(sub[:, None] - sub[None], axis=-1)
    i, j = np.unravel_index(np.argmax(dist), dist.shape)
    return int(cand[i]), int(cand[j])


# ---------------------------------------------------------------------------
# Circle
# ---------------------------------------------------------------------------


def circumcircle(p0, p1, p2) -> Circle2D | None:
    """Circle through three points, or None when they are (nearly) collinear."""
    ax, ay = p0
    bx, by = p1
    cx, cy = p2
    d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    scale = max(1.0, abs(ax), abs(ay), abs(bx), abs(by), abs(cx), abs(cy))
    if abs(d) <= 1e-12 * scale * scale:
        return None
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    return Circle2D(ux, uy, math.hypot(ax - ux, ay - uy))


def _circumcircles(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray):
    ax, ay = p0[:, 0], p0[:, 1]
    bx, by = p1[:, 0], p1[:, 1]
    cx, cy = p2[:, 0], p2[:, 1]
    d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    scale = np.maximum(1.0, np.abs(np.concatenate([p0, p1, p2], axis=1)).max(axis=1))
    ok = np.abs(d) > 1e-12 * scale * scale
    d = np.where(ok, d, 1.0)
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    r = np.hypot(ax - ux, ay - uy)
    return ux[ok], uy[ok], r[ok]


def fit_circle_lsq(pts: np.ndarray, init: Circle2D | None = None) -> Circle2D:
    """Geometric least-squares circle, started from the algebraic (Kasa) fit."""
    pts = np.asarray(pts, dtype=np.float64)
    if init is None:
        A = np.column_stack([2 * pts, np.ones(len(pts))])
        b = (pts**2).sum(axis=1)
        (xc, yc, c), *_ = np.linalg.lstsq(A, b, rcond=None)
        init = Circle2D(xc, yc, math.sqrt(max(c + xc * xc + yc * yc, 1e-12)))

    def resid(x):
        return np.hypot(pts[:, 0] - x[0], pts[:, 1] - x[1]) - x[2]

    sol = least_squares(resid, [init.cx, init.cy, init.r], method="lm" if len(pts) >= 3 else "trf", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return Circle2D(float(sol.x[0]), float(sol.x[1]), abs(float(sol.x[2])))


def fit_circle_ransac(
    points2d,
    p: RansacParams | None = None,
    refine_iterations: int = 20,
) -> tuple[Circle2D, np.ndarray]:
    """3-point circumcircle hypotheses scored on a random subsample.

    The best-scoring circle is refit by geometric least squares, re-collecting
    inliers over all points until the set stops changing.

    Returns (circle, inlier mask over all points).
    """
    p = default_circle_params() if p is None else p
    pts = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n < 3:
        raise TooFewPoints(f"need >= 3 points, got {n}")
    rng = np.random.default_rng(p.seed)
    m = min(n, max(3, math.ceil(p.sample_fraction * n)))
    sub = pts[np.sort(rng.choice(n, m, replace=False))] if m < n else pts
    idx = np.stack([rng.choice(m, 3, replace=False) for _ in range(p.max_iterations)])
    ux, uy, r = _circumcircles(sub[idx[:, 0]], sub[idx[:, 1]], sub[idx[:, 2]])
    if len(r) == 0:
        raise NoConsensus("all samples collinear")

    best_score, best_k = -np.inf, 0
    chunk = max(1, 2_000_000 // m)
    for s in range(0, len(r), chunk):
        res = np.hypot(sub[:, 0, None] - ux[s : s + chunk], sub[:, 1, None] - uy[s : s + chunk]) - r[s : s + chunk]
        score = np.count_nonzero(np.abs(res) <= p.inlier_threshold, axis=0)
        k = int(np.argmax(score))
        if score[k] > best_score:
            best_score, best_k = float(score[k]), s + k

    circle = Circle2D(float(ux[best_k]), float(uy[best_k]), float(r[best_k]))
    inliers = np.abs(circle.residuals(pts)) <= p.inlier_threshold
    for _ in range(max(1, refine_iterations)):
        if np.count_nonzero(inliers) < 3:
            break
        circle = fit_circle_lsq(pts[inliers], circle)
        updated = np.abs(circle.residuals(pts)) <= p.inlier_threshold
        if np.array_equal(updated, inliers):
            break
        inliers = updated
    count = int(np.count_nonzero(inliers))
    if count < 3 or count / n < p.min_inlier_fraction:
        raise NoConsensus(f"best circle has {count}/{n} inliers")
    return circle, inliers


def rim_contour(points2d, sectors: int = 120) -> np.ndarray:
    """Indices of the outer contour: the point farthest from the median in each angular sector.

    An area-filled face leaves only a thin band of points near its rim, too few for
    random circle hypotheses to find; its outer contour is nearly all rim. The
    outer boundary of an annulus is star-shaped about any interior point, so the
    median need not be the true centre.
    """
    pts = np.asarray(points2d, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros(0, dtype=np.intp)
    d = pts - np.median(pts, axis=0)
    r = np.hypot(d[:, 0], d[:, 1])
    k = np.floor((np.arctan2(d[:, 1], d[:, 0]) + np.pi) / (2 * np.pi) * sectors).astype(np.intp) % sectors
    order = np.lexsort((-r, k))
    ks = k[order]
    first = np.r_[True, ks[1:] != ks[:-1]]
    return np.sort(order[first])


def angular_coverage(circle: Circle2D, pts: np.ndarray, bins: int = 16) -> float:
    """Fraction of equal angular sectors around the centre holding at least one point."""
    if len(pts) == 0:
        return 0.0
    ang = np.arctan2(pts[:, 1] - circle.cy, pts[:, 0] - circle.cx)
    k = np.floor((ang + np.pi) / (2 * np.pi) * bins).astype(int) % bins
    return len(np.unique(k)) / bins


# ---------------------------------------------------------------------------
# Full estimate
# ---------------------------------------------------------------------------


def _face_from_plane(points: np.ndarray, plane: Plane, view: np.ndarray, cfg: PoseConfig):
    """Rim circle of the face lying in ``plane``, or FaceNotFound."""
    extra: dict = {}
    view_angle = math.degrees(math.acos(min(1.0, float(-plane.normal @ view))))
    extra["view_angle_deg"] = view_angle
    if view_angle >= cfg.max_view_angle_deg:
        raise FaceNotFound(f"face seen at {view_angle:.1f} deg, treated as occluded", stage="plane")
    pts = points[np.abs(plane.signed_distance(points)) <= cfg.face_slab]
    extra["slab_points"] = len(pts)
    if len(pts) < cfg.min_face_points:
        raise FaceNotFound(f"only {len(pts)} points near the face plane", stage="plane")

    flat_pts = project_to_plane(pts, plane)
    i, j = most_separated_pair(flat_pts, plane)
    basis = plane_basis(plane, flat_pts[i], flat_pts[j])
    xy = flatten(flat_pts, basis)
    try:
        rim = rim_contour(xy, cfg.rim_sectors)
        circle, c_in = fit_circle_ransac(xy[rim], cfg.circle)
    except (TooFewPoints, NoConsensus) as exc:
        raise FaceNotFound(f"no rim circle: {exc}", stage="circle") from exc
    coverage = angular_coverage(circle, xy[np.abs(circle.residuals(xy)) <= cfg.rim_band])
    extra["rim_coverage"] = coverage
    if coverage < cfg.min_rim_coverage:
        raise FaceNotFound(f"rim circle supported on {coverage:.0%} of its perimeter", stage="circle")
    extra["rim_points"] = len(rim)
    return circle, c_in, xy[rim], basis, extra


def estimate_pose(cloud: PointCloud, cfg: PoseConfig = PoseConfig(), view_direction=(0.0, 0.0, 1.0)) -> CylinderPose:
    if len(cloud) == 0:
        raise EmptyCloud("cloud is empty")
    view = np.asarray(view_direction, dtype=np.float64)
    view = view / np.linalg.norm(view)
    stats: dict = {"cloud_points": len(cloud)}

    face = cloud
    if cfg.use_density_filter:
        try:
            face = extract_end_face(cloud, cfg.voxel_size, cfg.density_quantile, cfg.density_relative)
        except DegenerateFilter:
            face = cloud
    stats["face_points"] = len(face)

    # Planes are extracted one after another; a plane whose slab holds no rim
    # circle (a strip of the lateral surface, say) is set aside and the search
    # continues on the remaining points.
    remaining = face
    reason = FaceNotFound("no plane candidates tried", stage="plane")
    fit = None
    for k in range(cfg.max_planes):
        try:
            plane, inliers = fit_plane_ransac(remaining, cfg.plane)
        except (TooFewPoints, NoConsensus) as exc:
            if k == 0:
                reason = FaceNotFound(f"no end-face plane: {exc}", stage="plane")
            break
        if plane.normal @ view > 0:
            plane = plane.flipped()
        try:
            fit = _face_from_plane(face.points, plane, view, cfg)
        except FaceNotFound as exc:
            reason = exc
            remaining = remaining.subset(~inliers)
            continue
        stats["plane_rank"] = k
        stats["plane_inliers"] = int(np.count_nonzero(inliers))
        stats["plane_rms"] = float(np.sqrt(np.mean(plane.signed_distance(remaining.points[inliers]) ** 2)))
        break
    if fit is None:
        raise reason
    circle, c_in, rim_xy, basis, extra = fit
    stats.update(extra)
    center = unflatten(circle.center, basis)[0]
    stats["circle_inliers"] = int(np.count_nonzero(c_in))
    stats["circle_rms"] = float(np.sqrt(np.mean(circle.residuals(rim_xy[c_in]) ** 2)))
    return CylinderPose(center=center, axis=plane.normal.copy(), radius=circle.r, inlier_stats=stats)
