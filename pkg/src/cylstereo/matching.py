"""Dense window matching along image rows with the mean-absolute-difference cost.

The left image is the reference. For a left pixel ``(u, v)`` the candidate in the
right image is ``(u - d, v)`` for ``d = 0 .. max_disparity``. Winner-take-all with
the smallest ``d`` winning ties; no sub-pixel refinement.

Costs are accumulated on 16-bit fixed-point intensities, so window sums are exact
integers. That keeps :func:`compute_disparity_map` bit-identical to the per-pixel
reference :func:`match_pixel`, independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import CylStereoError, DimensionMismatch, WindowOutOfBounds

INVALID = -1
LEVELS = 65535
_SENTINEL = np.iinfo(np.int64).max // 4


@dataclass(frozen=True)
class MatchParams:
    half_width: int = 3  # m, along u
    half_height: int = 3  # n, along v
    max_disparity: int = 200
    uniqueness_ratio: float = 1.05
    texture_threshold: float = 0.02
    # candidates within this many pixels of the winner are ignored when picking
    # the runner-up for the uniqueness test
    uniqueness_exclusion: int = 1
    # reject pixels whose search range is cut short by the left image border;
    # with False, out-of-bounds candidates are just skipped
    require_full_range: bool = True
    rows_per_block: int = 32

    def __post_init__(self) -> None:
        if self.half_width < 1 or self.half_height < 1:
            raise CylStereoError("window half sizes must be >= 1")
        if self.max_disparity < 1:
            raise CylStereoError("max_disparity must be >= 1")
        if self.uniqueness_ratio < 1:
            raise CylStereoError("uniqueness_ratio must be >= 1")
        if self.texture_threshold < 0:
            raise CylStereoError("texture_threshold must be >= 0")

    @property
    def window_area(self) -> int:
        return (2 * self.half_width + 1) * (2 * self.half_height + 1)


def check_image(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise CylStereoError(f"gray image must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or a.min(initial=0.0) < 0 or a.max(initial=0.0) > 1:
        raise CylStereoError("intensities must be finite and within [0, 1]")
    return a


def to_fixed(img) -> np.ndarray:
    return np.rint(check_image(img) * LEVELS).astype(np.int64)


def window(img: np.ndarray, u: int, v: int, m: int, n: int) -> np.ndarray:
    """The (2n+1) x (2m+1) block centred on column ``u``, row ``v``."""
    h, w = img.shape
    if u - m < 0 or u + m >= w or v - n < 0 or v + n >= h:
        raise WindowOutOfBounds(f"window at (u={u}, v={v}) exceeds {w}x{h} image")
    return img[v - n : v + n + 1, u - m : u + m + 1]


def sad_cost(left_window, right_window) -> float:
    """Mean absolute difference between two equally-shaped windows."""
    a = np.asarray(left_window, dtype=np.float64)
    b = np.asarray(right_window, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"window shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum() / a.size)


def _check_pair(left, right) -> tuple[np.ndarray, np.ndarray]:
    L, R = to_fixed(left), to_fixed(right)
    if L.shape != R.shape:
        raise DimensionMismatch(f"left {L.shape} vs right {R.shape}")
    return L, R


def _decide(costs: np.ndarray, p: MatchParams) -> int:
    """Winner-take-all with the uniqueness gate over integer window sums."""
    best = int(np.argmin(costs))
    best_cost = costs[best]
    if best_cost >= _SENTINEL:
        return INVALID
    others = costs.copy()
    lo = max(0, best - p.uniqueness_exclusion)
    others[lo : best + p.uniqueness_exclusion + 1] = _SENTINEL
    second = others.min() if others.size else _SENTINEL
    if second < _SENTINEL and float(best_cost) * p.uniqueness_ratio > float(second):
        return INVALID
    return best


def match_pixel(left, right, u: int, v: int, p: MatchParams) -> int:
    """Disparity for one left pixel, or ``INVALID``."""
    L, R = _check_pair(left, right)
    m, n = p.half_width, p.half_height
    try:
        lw = window(L, u, v, m, n)
    except WindowOutOfBounds:
        return INVALID
    if lw.max() - lw.min() < p.texture_threshold * LEVELS:
        return INVALID
    if p.require_full_range and u - p.max_disparity - m < 0:
        return INVALID
    costs = np.full(p.max_disparity + 1, _SENTINEL, dtype=np.int64)
    for d in range(p.max_disparity + 1):
        if u - d - m < 0:
            break
        costs[d] = np.abs(lw - window(R, u - d, v, m, n)).sum()
    return _decide(costs, p)


def _box_sum(a: np.ndarray, m: int, n: int) -> np.ndarray:
    """Sum over (2n+1)x(2m+1) windows; output covers only fully-inside centres."""
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=c[1:, 1:])
    kh, kw = 2 * n + 1, 2 * m + 1
    return c[kh:, kw:] - c[:-kh, kw:] - c[kh:, :-kw] + c[:-kh, :-kw]


def _block_costs(L: np.ndarray, R: np.ndarray, v0: int, v1: int, p: MatchParams) -> np.ndarray:
    """Cost volume (D+1, v1-v0, W) of integer window sums for centre rows [v0, v1)."""
    m, n = p.half_width, p.half_height
    W = L.shape[1]
    Lb = L[v0 - n : v1 + n]
    Rb = R[v0 - n : v1 + n]
    vol = np.full((p.max_disparity + 1, v1 - v0, W), _SENTINEL, dtype=np.int64)
    for d in range(p.max_disparity + 1):
        if W - d < 2 * m + 1:
            break
        diff = np.abs(Lb[:, d:] - Rb[:, : W - d])
        # centres u in [d + m, W - 1 - m]
        vol[d, :, d + m : W - m] = _box_sum(diff, m, n)
    return vol


def _decide_volume(vol: np.ndarray, p: MatchParams) -> np.ndarray:
    best = np.argmin(vol, axis=0)
    best_cost = np.take_along_axis(vol, best[None], axis=0)[0]
    d_idx = np.arange(vol.shape[0])[:, None, None]
    near = np.abs(d_idx - best[None]) <= p.uniqueness_exclusion
    second = np.where(near, _SENTINEL, vol).min(axis=0)
    ok = best_cost < _SENTINEL
    ambiguous = (second < _SENTINEL) & (best_cost.astype(np.float64) * p.uniqueness_ratio > second.astype(np.float64))
    return np.where(ok & ~ambiguous, best, INVALID).astype(np.int32)


def texture_mask(L_fixed: np.ndarray, p: MatchParams) -> np.ndarray:
    size = (2 * p.half_height + 1, 2 * p.half_width + 1)
    rng = ndimage.maximum_filter(L_fixed, size=size) - ndimage.minimum_filter(L_fixed, size=size)
    return rng >= p.texture_threshold * LEVELS


def compute_disparity_rows(L: np.ndarray, R: np.ndarray, v0: int, v1: int, p: MatchParams) -> np.ndarray:
    """Disparities for centre rows [v0, v1); inputs are fixed-point images."""
    return _decide_volume(_block_costs(L, R, v0, v1, p), p)


def compute_disparity_map(left, right, p: MatchParams, deadline=None) -> np.ndarray:
    """Per-pixel :func:`match_pixel` over the whole image, evaluated in row blocks.

    Returns an int32 (H, W) array with ``INVALID`` where no match survives.
    ``deadline`` is an optional callable invoked between row blocks; it may raise
    to abort a run that exceeds its time budget.
    """
    L, R = _check_pair(left, right)
    H, W = L.shape
    m, n = p.half_width, p.half_height
    out = np.full((H, W), INVALID, dtype=np.int32)
    if H < 2 * n + 1 or W < 2 * m + 1:
        return out
    for v0 in range(n, H - n, p.rows_per_block):
        if deadline is not None:
            deadline()
        v1 = min(v0 + p.rows_per_block, H - n)
        out[v0:v1] = compute_disparity_rows(L, R, v0, v1, p)
    out[~texture_mask(L, p)] = INVALID
    if p.require_full_range:
        out[:, : m + p.max_disparity] = INVALID
    return out


def valid_count(dmap: np.ndarray) -> int:
    return int(np.count_nonzero(dmap != INVALID))
