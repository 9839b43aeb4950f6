import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lts.cli import main
from lts.projection import read_range_image
from lts.scan_io import read_labels, read_scores

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL_CFG = """\
num_scans = 3
seed = 11
flip_p = 0.2
ground_points = 400
object = car 10 2 -0.9 4 2 1.6 0 0 0 300
object = pedestrian 6 -3 -0.8 0.6 0.6 1.8 0 0 0 150
"""


@pytest.fixture()
def sim(tmp_path):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL_CFG)
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    return out


def test_simulate_layout(sim):
    assert sorted(p.name for p in (sim / "velodyne").iterdir()) == ["000000.bin", "000001.bin", "000002.bin"]
    assert len(list((sim / "scores").glob("*.pscr"))) == 3
    assert len(list((sim / "labels").glob("*.plbl"))) == 3
    assert len((sim / "poses.txt").read_text().splitlines()) == 3


def test_project_width(sim, tmp_path):
    out = tmp_path / "img"
    assert main(["project", "--scans", str(sim / "velodyne"), "--out", str(out), "--width", "324"]) == 0
    data = (out / "000000.rimg").read_bytes()
    assert int.from_bytes(data[12:16], "little") == 324
    assert read_range_image(out / "000000.rimg").channels.shape == (64, 324, 5)


def test_single_scan_filter_is_argmax(sim, tmp_path):
    for sub in ("velodyne", "scores"):
        d = tmp_path / "one" / sub
        d.mkdir(parents=True)
        src = next(iter(sorted((sim / sub).iterdir())))
        shutil.copy(src, d / src.name)
    out = tmp_path / "fused"
    assert main(["filter", "--scans", str(tmp_path / "one/velodyne"),
                 "--scores", str(tmp_path / "one/scores"), "--out", str(out)]) == 0
    np.testing.assert_array_equal(read_labels(out / "000000.plbl"),
                                  read_scores(sim / "scores/000000.pscr").argmax())


def test_assoc_zero_is_per_scan_argmax(sim, tmp_path):
    out = tmp_path / "fused"
    assert main(["filter", "--scans", str(sim / "velodyne"), "--scores", str(sim / "scores"),
                 "--poses", str(sim / "poses.txt"), "--out", str(out), "--assoc-max-dist", "0"]) == 0
    for p in sorted((sim / "scores").iterdir()):
        np.testing.assert_array_equal(read_labels(out / (p.stem + ".plbl")), read_scores(p).argmax())


def test_filter_and_eval(sim, tmp_path, capsys):
    fused, rep = tmp_path / "fused", tmp_path / "rep"
    assert main(["filter", "--scans", str(sim / "velodyne"), "--scores", str(sim / "scores"),
                 "--poses", str(sim / "poses.txt"), "--labels", str(sim / "labels"),
                 "--out", str(fused), "--prior", "0.5"]) == 0
    assert main(["eval", "--labels", str(sim / "labels"), "--scores", str(sim / "scores"),
                 "--pred", str(fused), "--out", str(rep)]) == 0
    raw = (rep / "raw.csv").read_text().splitlines()
    assert raw[0] == "class,tp,fp,fn,iou"
    assert raw[-1].startswith("mean,,,,")
    assert (rep / "filtered.csv").exists()
    delta = (rep / "delta.csv").read_text()
    assert delta.startswith("class,delta_iou\n") and "\ncar," in delta
    assert "filtered - raw" in capsys.readouterr().out


def test_class_never_seen_is_absent(tmp_path, capsys):
    cfg = tmp_path / "clean.cfg"
    cfg.write_text(SMALL_CFG.replace("flip_p = 0.2", "flip_p = 0"))
    sim, fused, rep = tmp_path / "sim", tmp_path / "fused", tmp_path / "rep"
    assert main(["simulate", "--config", str(cfg), "--out", str(sim)]) == 0
    assert main(["filter", "--scans", str(sim / "velodyne"), "--scores", str(sim / "scores"),
                 "--poses", str(sim / "poses.txt"), "--out", str(fused)]) == 0
    assert main(["eval", "--labels", str(sim / "labels"), "--scores", str(sim / "scores"),
                 "--pred", str(fused), "--out", str(rep)]) == 0
    # no bicyclist in the scene: no IoU, left out of the mean and of the deltas
    raw = (rep / "raw.csv").read_text().splitlines()
    assert "bicyclist,0,0,0,-" in raw
    assert raw[-1] == "mean,,,,1.000000"
    assert "bicyclist" not in (rep / "delta.csv").read_text()


def test_eval_background_flag(sim, tmp_path):
    rep = tmp_path / "rep"
    assert main(["eval", "--labels", str(sim / "labels"), "--scores", str(sim / "scores"),
                 "--out", str(rep), "--include-background"]) == 0
    assert (rep / "raw.csv").read_text().splitlines()[1].startswith("background,")


def test_netspec_default(capsys):
    assert main(["netspec"]) == 0
    out = capsys.readouterr().out
    assert "2,829,440" in out and "3,592,944" in out


@pytest.mark.parametrize("argv", [
    ["netspec", "--input", "64x512"],
    ["netspec", "--spec", "/nonexistent.spec"],
    ["project", "--scans", "/nonexistent", "--out", "x"],
    ["bogus"],
    ["filter", "--scans", "x"],
])
def test_user_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_empty_spec_exit_2(tmp_path, capsys):
    spec = tmp_path / "empty.spec"
    spec.write_text("# no layers\n")
    assert main(["netspec", "--spec", str(spec)]) == 2
    assert "no layers" in capsys.readouterr().err


def test_bad_config_names_line(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("num_scans = 2\nflip_p = 2\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_mismatched_counts_exit_2(sim, tmp_path):
    (sim / "scores/000002.pscr").unlink()
    assert main(["filter", "--scans", str(sim / "velodyne"), "--scores", str(sim / "scores"),
                 "--out", str(tmp_path / "f")]) == 2


def test_corrupt_file_exit_2(sim, tmp_path):
    (sim / "scores/000001.pscr").write_bytes(b"JUNK")
    assert main(["filter", "--scans", str(sim / "velodyne"), "--scores", str(sim / "scores"),
                 "--out", str(tmp_path / "f")]) == 2


def test_internal_error_exit_1(monkeypatch, capsys):
    import lts.cli as cli

    def boom(*_):
        raise RuntimeError("kaboom")

    monkeypatch.setattr(cli, "shipped_spec_path", boom)
    assert main(["netspec"]) == 1
    assert "internal error" in capsys.readouterr().err


def test_seed_override_changes_scores(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = CONFIGS / "static_scene.cfg"
    assert main(["simulate", "--config", str(cfg), "--out", str(a), "--seed", "1"]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(b), "--seed", "2"]) == 0
    assert (a / "scores/000000.pscr").read_bytes() != (b / "scores/000000.pscr").read_bytes()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lts", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "lts" in res.stdout
