import json
import shutil
import subprocess

import numpy as np
import pytest

from cylstereo.cli import EXIT_BAD_INPUT, EXIT_OCCLUDED, EXIT_OK, EXIT_TIMEOUT, main
from cylstereo.files import read_disparity_csv, read_pgm
from cylstereo.reconstruction import read_ply


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert main(["simulate", "--angle", "20", "--cloud", "--seed", "4", "--out", str(out)]) == EXIT_OK
    return out


def test_simulate_outputs(scene_dir):
    for name in ("left.pgm", "right.pgm", "truth.json", "camera_left.json", "camera_right.json", "cloud.ply"):
        assert (scene_dir / name).exists()
    truth = json.loads((scene_dir / "truth.json").read_text())
    assert truth["face_visible"] is True and truth["angle_deg"] == pytest.approx(20.0)
    assert read_pgm(scene_dir / "left.pgm").shape == (480, 640)


def test_stage_by_stage(scene_dir, tmp_path, capsys):
    s = str(scene_dir)
    assert main(["disparity", "--left", f"{s}/left.pgm", "--right", f"{s}/right.pgm", "--out", str(tmp_path)]) == 0
    valid = json.loads(capsys.readouterr().out)["valid_pixels"]
    d = read_disparity_csv(tmp_path / "disparity.csv")
    assert d.shape == (480, 640) and valid > 1000
    args = ["reconstruct", "--disparity", str(tmp_path / "disparity.csv"), "--out", str(tmp_path)]
    args += ["--camera-left", f"{s}/camera_left.json", "--camera-right", f"{s}/camera_right.json"]
    assert main(args) == EXIT_OK
    capsys.readouterr()
    cloud = read_ply(tmp_path / "cloud.ply")
    assert len(cloud) == valid
    assert main(["pose", "--cloud", str(tmp_path / "cloud.ply"), "--out", str(tmp_path)]) == EXIT_OK
    pose = json.loads((tmp_path / "pose.json").read_text())
    truth = json.loads((scene_dir / "truth.json").read_text())
    assert np.degrees(np.arccos(abs(np.dot(pose["axis"], truth["axis"])))) < 2.0
    assert np.linalg.norm(np.subtract(pose["center"], truth["face_center"])) < 8.0


def test_pose_on_sampled_cloud(scene_dir, tmp_path, capsys):
    assert main(["pose", "--cloud", str(scene_dir / "cloud.ply"), "--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert set(doc) == {"center", "axis", "radius", "stage_stats"}


def test_run_from_files(scene_dir, tmp_path, capsys):
    s = str(scene_dir)
    args = ["run", "--left", f"{s}/left.pgm", "--right", f"{s}/right.pgm", "--truth", f"{s}/truth.json"]
    assert main(args + ["--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "run.json").read_text())
    assert doc["orientation_error_deg"] < 2.0 and doc["centering_error_mm"] < 8.0
    assert set(doc["timings"]) == {"stereo", "reconstruction", "pose", "total"}


def test_run_occluded_exit_code(tmp_path, capsys):
    assert main(["run", "--angle", "85", "--out", str(tmp_path)]) == EXIT_OCCLUDED
    doc = json.loads((tmp_path / "run.json").read_text())
    assert doc["error"]["type"] == "FaceNotFound"


def test_timeout_exit_code(scene_dir, tmp_path, capsys):
    s = str(scene_dir)
    args = ["--timeout-s", "0.01", "disparity", "--left", f"{s}/left.pgm", "--right", f"{s}/right.pgm"]
    assert main(args + ["--out", str(tmp_path)]) == EXIT_TIMEOUT


def test_bad_input_exit_codes(tmp_path, capsys):
    missing = str(tmp_path / "nope.pgm")
    assert main(["disparity", "--left", missing, "--right", missing]) == EXIT_BAD_INPUT
    (tmp_path / "bad.json").write_text('{"unknown_key": 1}')
    assert main(["--config", str(tmp_path / "bad.json"), "sweep"]) == EXIT_BAD_INPUT
    assert main(["reconstruct", "--disparity", missing, "--camera-left", missing]) == EXIT_BAD_INPUT
    assert main(["run"]) == EXIT_BAD_INPUT


def test_sweep_command(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scene": {"noise_sigma": 0.2}}))
    args = ["sweep", "--mode", "cloud", "--angles", "0", "80", "--trials", "2", "--seed", "3"]
    assert main(args + ["--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    for name in ("trials.csv", "summary.csv", "report.json", "timings.csv", "sweep.svg"):
        assert (tmp_path / name).exists()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config"]["scene"]["noise_sigma"] == 0.2 and report["config"]["master_seed"] == 3
    assert [r["successes"] for r in report["summary"]] == [2, 0]


def test_calibrate_command(tmp_path, capsys):
    f_true = 800.0
    obs = [{"Z_true": z, "Z_measured": z * 1.02, "disparity": f_true * 60 / z} for z in (300.0, 500.0, 700.0)]
    (tmp_path / "obs.json").write_text(json.dumps({"f": f_true * 1.02, "observations": obs}))
    assert main(["calibrate", "--input", str(tmp_path / "obs.json"), "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "calibration.json").read_text())
    assert rep["f_after"] == pytest.approx(f_true, rel=1e-9) and rep["z_error"] < 1e-9


@pytest.mark.skipif(shutil.which("cylstereo") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["cylstereo", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout and "sweep" in res.stdout
