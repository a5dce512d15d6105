import numpy as np
import pytest

from cylstereo.errors import CylStereoError
from cylstereo.files import disparity_preview, read_disparity_csv, read_pgm, write_disparity_csv, write_pgm
from cylstereo.matching import INVALID


def test_pgm_roundtrip(tmp_path, rng):
    img = rng.integers(0, 256, (37, 53)) / 255.0
    write_pgm(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5")
    back = read_pgm(tmp_path / "a.pgm")
    assert back.shape == img.shape and np.array_equal(back, img)


def test_pgm_quantises(tmp_path):
    img = np.array([[0.0, 0.5, 1.0]])
    write_pgm(tmp_path / "q.pgm", img)
    assert np.max(np.abs(read_pgm(tmp_path / "q.pgm") - img)) <= 0.5 / 255


def test_pgm_16bit(tmp_path):
    from PIL import Image

    a = np.array([[0, 1000, 4000]], dtype=np.uint16)
    Image.fromarray(a).save(tmp_path / "w.pgm", format="PPM")
    back = read_pgm(tmp_path / "w.pgm")
    assert back.max() == 1.0 and back[0, 1] == pytest.approx(0.25)


def test_pgm_rejects_bad_input(tmp_path):
    (tmp_path / "junk.pgm").write_bytes(b"not an image")
    with pytest.raises(CylStereoError):
        read_pgm(tmp_path / "junk.pgm")
    with pytest.raises(CylStereoError):
        write_pgm(tmp_path / "x.pgm", np.full((3, 3), 2.0))


def test_disparity_csv_roundtrip(tmp_path, rng):
    d = rng.integers(0, 120, (20, 31)).astype(np.int32)
    d[rng.random(d.shape) < 0.3] = INVALID
    write_disparity_csv(tmp_path / "d.csv", d)
    back = read_disparity_csv(tmp_path / "d.csv")
    assert back.dtype == np.int32 and np.array_equal(back, d)


def test_disparity_csv_empty_cells_are_invalid(tmp_path):
    (tmp_path / "d.csv").write_text("1,,3\n,,\n")
    assert read_disparity_csv(tmp_path / "d.csv").tolist() == [[1, INVALID, 3], [INVALID] * 3]


@pytest.mark.parametrize("text", ["1,2\n3\n", "", "a,b\n"])
def test_disparity_csv_malformed(tmp_path, text):
    (tmp_path / "d.csv").write_text(text)
    with pytest.raises(CylStereoError):
        read_disparity_csv(tmp_path / "d.csv")


def test_disparity_preview():
    d = np.array([[INVALID, 0, 50, 100]])
    assert disparity_preview(d, 100).tolist() == [[0.0, 0.0, 0.5, 1.0]]
    assert disparity_preview(d).tolist() == [[0.0, 0.0, 0.5, 1.0]]
    assert disparity_preview(np.full((2, 2), INVALID)).max() == 0
