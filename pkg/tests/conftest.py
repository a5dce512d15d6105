import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def textured_image(shape=(480, 640), seed=0, smooth=1.5) -> np.ndarray:
    """Smoothed white noise stretched to [0, 1]."""
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    a = ndimage.gaussian_filter(rng.random(shape), smooth)
    return (a - a.min()) / (a.max() - a.min())


def shift_right_view(left: np.ndarray, k: int) -> np.ndarray:
    """Right view of a fronto-parallel plane at disparity k: right[:, u] = left[:, u + k]."""
    right = np.zeros_like(left)
    right[:, : left.shape[1] - k] = left[:, k:]
    right[:, left.shape[1] - k :] = left[:, -1:]
    return right


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance results, one (name, passed, detail) per criterion, echoed at the end of the run.
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
