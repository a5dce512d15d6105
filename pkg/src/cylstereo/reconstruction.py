"""Two-view least-squares triangulation and point-cloud persistence."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CylStereoError, DegenerateGeometry
from .geometry import ProjectionMatrix
from .matching import INVALID

MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class StereoPair:
    M_left: ProjectionMatrix
    M_right: ProjectionMatrix

    def __post_init__(self) -> None:
        if np.allclose(self.M_left.center, self.M_right.center, atol=1e-9):
            raise DegenerateGeometry("camera centres coincide (no baseline)")


@dataclass(eq=False)
class PointCloud:
    """World-frame points in mm, optionally tagged with their left-image pixel."""

    points: np.ndarray
    pixels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise CylStereoError("point cloud contains non-finite coordinates")
        if self.pixels is not None:
            self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
            if len(self.pixels) != len(self.points):
                raise CylStereoError("pixels and points differ in length")

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, mask) -> "PointCloud":
        pix = None if self.pixels is None else self.pixels[mask]
        return PointCloud(self.points[mask], pix, dict(self.meta))


def build_system(pl, pr, s: StereoPair) -> tuple[np.ndarray, np.ndarray]:
    """Stack both cameras' projection equations into ``C @ W = D``.

    Accepts single pixels (2,) giving C (4, 3), D (4,), or stacks (N, 2) giving
    C (N, 4, 3), D (N, 4). The right-camera rows use the right matrix's third row.
    """
    pl = np.asarray(pl, dtype=np.float64)
    pr = np.asarray(pr, dtype=np.float64)
    l, r = s.M_left.m, s.M_right.m
    ul, vl = pl[..., 0, None], pl[..., 1, None]
    ur, vr = pr[..., 0, None], pr[..., 1, None]
    C = np.stack(
        [
            ul * l[2, :3] - l[0, :3],
            vl * l[2, :3] - l[1, :3],
            ur * r[2, :3] - r[0, :3],
            vr * r[2, :3] - r[1, :3],
        ],
        axis=-2,
    )
    D = np.stack(
        [
            l[0, 3] - ul[..., 0] * l[2, 3],
            l[1, 3] - vl[..., 0] * l[2, 3],
            r[0, 3] - ur[..., 0] * r[2, 3],
            r[1, 3] - vr[..., 0] * r[2, 3],
        ],
        axis=-1,
    )
    return C, D


def _solve(C: np.ndarray, D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares ``C W = D`` through the SVD; also returns cond(C^T C)."""
    U, S, Vt = np.linalg.svd(C, full_matrices=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = (S[..., 0] / S[..., -1]) ** 2
        coef = np.einsum("...ji,...j->...i", U, D) / S
    W = np.einsum("...ji,...j->...i", Vt, coef)
    cond = np.where(np.isfinite(cond), cond, np.inf)
    return W, cond


def _normalised(M: ProjectionMatrix) -> ProjectionMatrix:
    return M.scaled(1.0 / np.linalg.norm(M.m[:, :3]))


def triangulate_many(pl, pr, s: StereoPair) -> tuple[np.ndarray, np.ndarray]:
    """Triangulate stacks of pixel pairs. Returns (points (N,3), ok mask (N,))."""
    # A projection matrix is defined up to scale; normalising each camera keeps
    # an arbitrary relative scale from polluting the conditioning check.
    s = StereoPair(_normalised(s.M_left), _normalised(s.M_right))
    C, D = build_system(np.reshape(pl, (-1, 2)), np.reshape(pr, (-1, 2)), s)
    if len(C) == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=bool)
    W, cond = _solve(C, D)
    ok = (cond <= MAX_CONDITION) & np.all(np.isfinite(W), axis=1)
    return W, ok


def triangulate(pl, pr, s: StereoPair) -> np.ndarray:
    W, ok = triangulate_many(pl, pr, s)
    if not ok[0]:
        raise DegenerateGeometry("rays are parallel or coincident (ill-conditioned system)")
    return W[0]


def residual(W, pl, pr, s: StereoPair) -> float:
    C, D = build_system(pl, pr, s)
    return float(np.linalg.norm(C @ np.asarray(W, dtype=np.float64) - D))


def reconstruct_cloud(dmap: np.ndarray, s: StereoPair) -> PointCloud:
    """One point per valid disparity: left pixel (u, v) pairs with right (u - d, v)."""
    dmap = np.asarray(dmap)
    v, u = np.nonzero(dmap != INVALID)
    d = dmap[v, u].astype(np.float64)
    pl = np.stack([u, v], axis=1).astype(np.float64)
    pr = np.stack([u - d, v], axis=1).astype(np.float64)
    W, ok = triangulate_many(pl, pr, s)
    cloud = PointCloud(W[ok], pl[ok])
    cloud.meta["degenerate_skipped"] = int(np.count_nonzero(~ok))
    return cloud


# ---------------------------------------------------------------------------
# PLY / CSV
# ---------------------------------------------------------------------------


def write_ply(path: str | Path, cloud: PointCloud) -> None:
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in cloud.points.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path: str | Path) -> PointCloud:
    """Read an ASCII PLY file; only the x, y, z vertex properties are used."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise CylStereoError(f"{path}: not a PLY file")
    n_vertex, props, in_vertex, header_end = None, [], False, None
    for i, line in enumerate(text[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise CylStereoError(f"{path}: only ASCII PLY is supported")
        if tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = i
            break
    if n_vertex is None or header_end is None:
        raise CylStereoError(f"{path}: malformed PLY header")
    try:
        cols = [props.index(c) for c in ("x", "y", "z")]
    except ValueError:
        raise CylStereoError(f"{path}: vertex lacks x/y/z") from None
    body = text[header_end + 1 : header_end + 1 + n_vertex]
    if len(body) != n_vertex:
        raise CylStereoError(f"{path}: expected {n_vertex} vertices, found {len(body)}")
    if n_vertex == 0:
        return PointCloud(np.zeros((0, 3)))
    data = np.array([row.split() for row in body], dtype=np.float64)
    return PointCloud(data[:, cols])


def write_cloud_csv(path: str | Path, cloud: PointCloud) -> None:
    rows = ["x,y,z"] + [f"{x!r},{y!r},{z!r}" for x, y, z in cloud.points.tolist()]
    Path(path).write_text("\n".join(rows) + "\n")


def read_cloud_csv(path: str | Path) -> PointCloud:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return PointCloud(data.reshape(-1, 3))
