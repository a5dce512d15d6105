"""Image and disparity files: 8-bit binary PGM, disparity CSV."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CylStereoError
from .matching import INVALID, check_image


def write_pgm(path: str | Path, img) -> None:
    """Intensities in [0, 1] mapped linearly to 0..255."""
    a = check_image(img)
    Image.fromarray(np.rint(a * 255).astype(np.uint8)).save(Path(path), format="PPM")


def read_pgm(path: str | Path) -> np.ndarray:
    try:
        with Image.open(Path(path)) as im:
            if im.format != "PPM" or im.mode not in ("L", "I;16", "I;16B", "I"):
                raise CylStereoError(f"{path}: expected a grayscale PGM")
            a = np.asarray(im, dtype=np.float64)
            maxval = 255.0 if im.mode == "L" else float(max(a.max(), 1.0))
    except OSError as exc:
        raise CylStereoError(f"{path}: {exc}") from None
    return a / maxval


def write_disparity_csv(path: str | Path, dmap) -> None:
    """One line per image row; invalid pixels are empty cells."""
    d = np.asarray(dmap)
    lines = [",".join("" if x == INVALID else str(int(x)) for x in row) for row in d]
    Path(path).write_text("\n".join(lines) + "\n")


def read_disparity_csv(path: str | Path) -> np.ndarray:
    rows = [line.split(",") for line in Path(path).read_text().splitlines() if line != ""]
    if not rows or len({len(r) for r in rows}) != 1:
        raise CylStereoError(f"{path}: rows must have equal length")
    try:
        return np.array([[INVALID if c.strip() == "" else int(c) for c in r] for r in rows], dtype=np.int32)
    except ValueError as exc:
        raise CylStereoError(f"{path}: {exc}") from None


def disparity_preview(dmap, max_disparity: int | None = None) -> np.ndarray:
    """Disparity scaled to [0, 1] for viewing; invalid pixels are black."""
    d = np.asarray(dmap).astype(np.float64)
    valid = d != INVALID
    top = float(max_disparity) if max_disparity else float(d[valid].max(initial=1.0))
    out = np.zeros_like(d)
    out[valid] = np.clip(d[valid] / max(top, 1.0), 0.0, 1.0)
    return out
