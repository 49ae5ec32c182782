import json
import subprocess
import sys

import pytest

from grassbot.cli import main
from grassbot.harness import ExperimentReport, read_curve, read_trace
from grassbot.perception import ObjectBox, SegmentationFrame, load_frame, save_frame

SCENARIO = """
[scenario]
boundary_m = 0 0, 20 0, 20 15, 0 15
start_x_m = 2
start_y_m = 2

[classifier]
model = identity

[objects]
g1 = can 6 2
g2 = bottle 12 9
"""

TRAPEZOID = [(19.0, 479.0), (619.0, 479.0), (419.0, 240.0), (219.0, 240.0)]


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "s.ini"
    path.write_text(SCENARIO)
    return path


def frame_file(tmp_path, contour, boxes=()):
    path = tmp_path / "frame.ini"
    save_frame(SegmentationFrame(contour, list(boxes)), path)
    return path


def test_run_writes_files(scenario, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(scenario), "--seed", "7", "--out", str(out)]) == 0
    assert (out / "trace.csv").exists() and (out / "trace_events.csv").exists()
    trace = read_trace(out / "trace.csv")
    assert trace.initial_garbage == 2
    assert read_curve(out / "remaining.dat")[0] == (0.0, 2)
    line = capsys.readouterr().out
    assert "pickups=" in line and "failures=" in line and "t=" in line


def test_run_is_deterministic(scenario, tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--scenario", str(scenario), "--seed", "3", "--mode", "random",
                     "--budget", "200", "--out", str(tmp_path / name)]) == 0
    for f in ("trace.csv", "trace_events.csv", "remaining.dat"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_bad_object_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(SCENARIO + "d9 = shoes 50 2\n")
    assert main(["run", "--scenario", str(path), "--seed", "1", "--out", str(tmp_path)]) == 2
    assert "d9" in capsys.readouterr().err


def test_missing_scenario_exit_2(tmp_path):
    assert main(["validate", "--scenario", str(tmp_path / "nope.ini")]) == 2


def test_seed_required(scenario):
    with pytest.raises(SystemExit) as e:
        main(["run", "--scenario", str(scenario)])
    assert e.value.code == 2


def test_validate(scenario, capsys):
    assert main(["validate", "--scenario", str(scenario)]) == 0
    assert "objects=2" in capsys.readouterr().out


def test_invariant_violation_exit_3(scenario, tmp_path, monkeypatch):
    import grassbot.cli as cli
    from grassbot.harness import InvariantViolation

    def broken(*a, **k):
        raise InvariantViolation("garbage count not conserved")

    monkeypatch.setattr(cli, "run_episode", broken)
    assert main(["run", "--scenario", str(scenario), "--seed", "1", "--out", str(tmp_path)]) == 3


def test_direction_trapezoid(tmp_path, capsys):
    assert main(["direction", str(frame_file(tmp_path, TRAPEZOID))]) == 0
    out = capsys.readouterr().out
    heading = float(out.strip().splitlines()[-1].split()[1].rstrip("deg"))
    assert abs(heading) <= 1.2
    assert "cent_set:" in out and "rho=" in out


def test_direction_right_blocked_turns_left(tmp_path, capsys):
    contour = [(-1, 200), (640, 200), (640, 480), (-1, 480)]
    assert main(["direction", str(frame_file(tmp_path, contour, [ObjectBox("o", 320, 240, 639, 479)]))]) == 0
    heading = float(capsys.readouterr().out.strip().splitlines()[-1].split()[1].rstrip("deg"))
    assert heading > 0


def test_direction_empty_exit_4(tmp_path, capsys):
    assert main(["direction", str(frame_file(tmp_path, []))]) == 4
    assert "no feasible direction" in capsys.readouterr().err


def test_malformed_frame_exit_2(tmp_path):
    bad = tmp_path / "f.ini"
    bad.write_text("[frame]\ncontour_px = 1 2 3\n")
    assert main(["direction", str(bad)]) == 2


def test_frame_round_trip(tmp_path):
    path = frame_file(tmp_path, TRAPEZOID, [ObjectBox("b", 1, 2, 3, 4)])
    f = load_frame(path)
    assert f.ground_contour.tolist() == [list(p) for p in TRAPEZOID]
    assert f.object_boxes == [ObjectBox("b", 1, 2, 3, 4)]


def test_track(tmp_path, capsys):
    path = frame_file(tmp_path, TRAPEZOID, [ObjectBox("g", 300, 200, 340, 260)])
    assert main(["track", str(path)]) == 0
    out = capsys.readouterr().out
    assert "du=-1 dv=219" in out and f"v={219 / 480 * 0.5!r}" in out and "arrived=False" in out


def test_experiment_creates_out_dir(scenario, tmp_path, capsys):
    out = tmp_path / "deep" / "nested"
    assert main(["experiment", "--scenario", str(scenario), "--seed", "0", "--seeds", "1",
                 "--budget", "60", "--garbage", "2,5", "--out", str(out)]) == 0
    rep = ExperimentReport.load(out / "report.json")
    assert sorted(rep.cells) == ["2/planned", "2/random", "5/planned", "5/random"]
    assert rep.insufficient_for_aggregate
    assert len(list((out / "curves").glob("*.dat"))) == 4
    assert "insufficient for aggregate claims" in capsys.readouterr().out
    json.loads((out / "report.json").read_text())


def test_experiment_rejects_zero_seeds(scenario, tmp_path):
    assert main(["experiment", "--scenario", str(scenario), "--seed", "0", "--seeds", "0", "--out", str(tmp_path)]) == 2


def test_env_output_dir(scenario, tmp_path, monkeypatch):
    monkeypatch.setenv("GRASSBOT_OUT", str(tmp_path / "envout"))
    assert main(["run", "--scenario", str(scenario), "--seed", "1", "--budget", "20"]) == 0
    assert (tmp_path / "envout" / "trace.csv").exists()


def test_module_entry_point(scenario, tmp_path):
    res = subprocess.run([sys.executable, "-m", "grassbot", "validate", "--scenario", str(scenario)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("ok:")
    res = subprocess.run([sys.executable, "-m", "grassbot", "direction", str(frame_file(tmp_path, []))],
                         capture_output=True, text=True)
    assert res.returncode == 4
