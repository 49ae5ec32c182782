"""End-to-end acceptance checks, one test per criterion.

Each test appends a PASS/FAIL line that is printed in the terminal summary,
so ``pytest tests/test_acceptance.py`` reports all ten verdicts together.
Run the file directly to print the lines without pytest.
"""

import hashlib
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from grassbot.camera import CameraModel, build_homography, hough_line, image_line_to_ground_heading
from grassbot.harness import run_episode, run_experiment, write_trace
from grassbot.navigation import Mode, NavContext, NavParams, NavState, cent_set, navigation_step
from grassbot.perception import ConfusionModel, ObjectBox, SegmentationFrame
from grassbot.scenario import ScenarioConfig, desk_scale
from grassbot.tracker import compute_offsets, tracking_command
from grassbot.world import GARBAGE_CLASSES, NONGARBAGE_CLASSES, OccupancyGrid, Pose2D, RobotState, World, WorldObject
from oracles import passable_mask, random_frame, widest_run_centers

pytestmark = pytest.mark.acceptance

CAM = CameraModel.default()
HOM = build_homography(CAM)


def verdict(number, ok, detail, started):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}  ({time.time() - started:.1f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_criterion_01_servo_exactness():
    t0 = time.time()
    box = ObjectBox("g", 300, 200, 340, 260)
    du, dv = compute_offsets(box, CAM)
    cmd = tracking_command(du, dv, 0.5, 1.0, CAM)
    exact = Fraction(219, 480) * Fraction(1, 2)
    edge = [tracking_command(a, b, 0.5, 1.0, CAM) for a, b in ((5, 10), (-5, -10), (5, -10), (-5, 10))]
    ok = (
        (du, dv) == (-1, 219) and Fraction(cmd.v) == Fraction(float(exact)) and cmd.omega == 0.0
        and abs(Fraction(cmd.v) - exact) <= Fraction(1, 2**53) and not cmd.arrived
        and all((c.v, c.omega, c.arrived) == (0.0, 0.0, True) for c in edge)
    )
    verdict(1, ok, f"du={du} dv={dv} v={cmd.v!r} omega={cmd.omega!r}; deadband edge arrives", t0)


def test_criterion_02_cent_set_oracle():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        f = random_frame(rng)
        if not np.array_equal(cent_set(f), widest_run_centers(passable_mask(f.ground_contour, f.object_boxes))):
            mismatches += 1
    elapsed = time.time() - t0
    verdict(2, mismatches == 0 and elapsed < 30, f"{mismatches}/1000 frames differ from the run oracle", t0)


def test_criterion_03_homography_round_trip():
    t0 = time.time()
    rng = np.random.default_rng(3)
    r = rng.uniform(0.5, 10.0, 10_000)
    a = rng.uniform(-CAM.hfov / 2, CAM.hfov / 2, 10_000)
    pts = np.column_stack([r * np.cos(a), r * np.sin(a)])
    err = float(np.max(np.hypot(*(HOM.backproject(HOM.project(pts)) - pts).T)))
    line = hough_line([(CAM.cx, float(v)) for v in range(CAM.height // 2, CAM.height)])
    heading = image_line_to_ground_heading(line, HOM, CAM)
    ok = err < 1e-9 and abs(heading) <= 0.02 and time.time() - t0 < 5
    verdict(3, ok, f"max round-trip error {err:.2e} m; center-line heading {heading:+.4f} rad", t0)


# published per-class error rates and non-garbage confusion rows
ERROR_RATE = {"bottle": 0.0813, "can": 0.0989, "carton": 0.0906, "plastic_bag": 0.1432, "waste_paper": 0.223}
NONGARBAGE_ROWS = {
    "cup": (0.153, 0.184, 0.012, 0.009, 0.003),
    "book": (0.002, 0.010, 0.136, 0.005, 0.012),
    "shoes": (0.005, 0.023, 0.038, 0.009, 0.003),
    "phone": (0.007, 0.011, 0.065, 0.004, 0.008),
    "bag": (0.007, 0.013, 0.009, 0.032, 0.004),
    "wallet": (0.010, 0.023, 0.089, 0.012, 0.009),
}


def test_criterion_04_classifier_statistics():
    t0 = time.time()
    model = ConfusionModel()
    rng = np.random.default_rng(4)
    n = 100_000
    worst = 0.0
    for cls in GARBAGE_CLASSES:
        wrong = sum(model.classify(cls, rng).predicted_class != cls for _ in range(n))
        p = ERROR_RATE[cls]
        worst = max(worst, abs(wrong / n - p) / math.sqrt(p * (1 - p) / n))
    for cls in NONGARBAGE_CLASSES:
        preds = [model.classify(cls, rng).predicted_class for _ in range(n)]
        for g, p in zip(GARBAGE_CLASSES, NONGARBAGE_ROWS[cls]):
            worst = max(worst, abs(preds.count(g) / n - p) / math.sqrt(p * (1 - p) / n))
    ok = worst <= 3.0 and time.time() - t0 < 20
    verdict(4, ok, f"largest deviation {worst:.2f} binomial sigma over 11 classes", t0)


def test_criterion_05_pickup_model():
    t0 = time.time()
    grid = OccupancyGrid.from_polygon([(0, 0), (10, 0), (10, 10), (0, 10)], 0.25)
    world = World(np.array([(0, 0), (10, 0), (10, 10), (0, 10)], float), grid,
                  [WorldObject.of_class("g", "can", 5.3, 5.0)], RobotState(Pose2D(5, 5, 0)))
    params = NavParams()
    ctx = NavContext(CAM, HOM, grid, params, ConfusionModel.identity(), [], 1)
    rng = np.random.default_rng(5)
    nav = NavState(mode=Mode.PICKUP, tracked_object_id="g", pickup_ticks_left=params.pickup_ticks)
    attempts = successes = ticks = 0
    gaps = set()
    while attempts < 10_000:
        out = navigation_step(world, world.robot.pose, SegmentationFrame(), nav, rng, ctx)
        ticks += 1
        kinds = [k for k, _ in out.events]
        if "pickup_success" in kinds or "pickup_failure" in kinds:
            attempts += 1
            successes += "pickup_success" in kinds
            gaps.add(ticks)
            ticks = 0
        nav = out.nav
        if nav.mode != Mode.PICKUP:
            # object taken or given up: put it back and start a fresh grasp
            world.objects[0].picked = False
            nav = NavState(mode=Mode.PICKUP, tracked_object_id="g", pickup_ticks_left=params.pickup_ticks)
    rate = successes / attempts
    seconds = {Fraction(g) * Fraction(1, 10) for g in gaps}
    ok = abs(rate - 0.96) <= 0.006 and seconds == {Fraction(7, 5)}
    verdict(5, ok, f"success rate {rate:.4f} over {attempts} attempts; every attempt took {sorted(map(float, seconds))} s", t0)


@pytest.mark.slow
def test_criterion_06_planned_vs_random_trend():
    t0 = time.time()
    low, high = 2, 5  # density-equivalent of 20 on the playground, then scaled 2.5x
    rep = run_experiment(desk_scale(), (low, high), ("planned", "random"), range(40))
    wins = rep.planned_win_fraction(low)
    r_low, r_high = rep.ratio(low), rep.ratio(high)
    planned_faster = rep.mean_completion(low, "planned") < rep.mean_completion(low, "random")
    ok = wins >= 0.8 and planned_faster and r_high < r_low and time.time() - t0 < 300
    verdict(6, ok, f"planned wins {wins:.2f} of 40 paired seeds; ratio {r_low:.3f} -> {r_high:.3f}", t0)


@pytest.mark.slow
def test_criterion_07_termination_and_conservation():
    t0 = time.time()
    unfinished, broken = [], []
    for mode in ("planned", "random"):
        for seed in range(50):
            trace = run_episode(desk_scale(mode=mode), budget=math.inf, seed=seed)
            picked, remaining, failed = (trace.column(c) for c in ("picked", "remaining", "failed"))
            if not (trace.finished and remaining[-1] == 0):
                unfinished.append((mode, seed))
            if not np.all(picked + remaining + failed == trace.initial_garbage):
                broken.append((mode, seed))
    ok = not unfinished and not broken
    verdict(7, ok, f"{100 - len(unfinished)}/100 episodes finished; conservation broken in {len(broken)}", t0)


@pytest.mark.slow
def test_criterion_08_ekf_beats_dead_reckoning():
    t0 = time.time()
    cfg = desk_scale(garbage_count=0, mode="random")
    ekf, dr = [], []
    for seed in range(20):
        trace = run_episode(cfg, budget=600, seed=seed)
        assert trace.column("t")[-1] == pytest.approx(600.0)
        ekf.append(trace.position_rmse("est"))
        dr.append(trace.position_rmse("dr"))
    wins = sum(e < d for e, d in zip(ekf, dr))
    ok = wins == 20 and np.mean(ekf) <= 1.5 * cfg.noise.sigma_gps
    verdict(8, ok, f"EKF better on {wins}/20 seeds; mean RMSE {np.mean(ekf):.3f} m vs DR {np.mean(dr):.3f} m", t0)


@pytest.mark.slow
def test_criterion_09_determinism(tmp_path):
    t0 = time.time()
    digests = []
    for run in ("a", "b"):
        files = []
        for mode in ("planned", "random"):
            trace = run_episode(desk_scale(mode=mode), budget=400, seed=11)
            files += write_trace(trace, tmp_path / run, mode)
        rep = run_experiment(desk_scale(), (2,), ("planned", "random"), range(4), budget=300, workers=2,
                             trace_dir=tmp_path / run / "parallel")
        rep.save(tmp_path / run / "report.json")
        files += sorted((tmp_path / run / "parallel").iterdir()) + [tmp_path / run / "report.json"]
        digests.append([(p.name, sha(p)) for p in files])
    serial = run_experiment(desk_scale(), (2,), ("planned", "random"), range(4), budget=300, workers=1)
    serial.save(tmp_path / "serial.json")
    ok = digests[0] == digests[1] and sha(tmp_path / "serial.json") == sha(tmp_path / "a" / "report.json")
    verdict(9, ok, f"{len(digests[0])} files hash-identical across runs; parallel report equals serial", t0)


def test_criterion_10_timing_and_training_out_of_scope():
    """Inference timing and network training are not modeled: recognition costs one tick of simulated time."""
    t0 = time.time()
    grid = OccupancyGrid.from_polygon([(0, 0), (10, 0), (10, 10), (0, 10)], 0.25)
    world = World(np.array([(0, 0), (10, 0), (10, 10), (0, 10)], float), grid,
                  [WorldObject.of_class("g", "can", 5.3, 5.0)], RobotState(Pose2D(5, 5, 0)))
    ctx = NavContext(CAM, HOM, grid, NavParams(), ConfusionModel(), [], 1)
    out = navigation_step(world, world.robot.pose, SegmentationFrame(), NavState(mode=Mode.RECOGNIZE, tracked_object_id="g"),
                          np.random.default_rng(0), ctx)
    model = ConfusionModel()
    fixed_tables = np.allclose(model.garbage_matrix.sum(axis=1), 1) and np.allclose(model.nongarbage_matrix.sum(axis=1), 1)
    ok = out.nav.mode != Mode.RECOGNIZE and fixed_tables
    verdict(10, ok, "not reproduced by design: recognition resolves in one tick from fixed confusion tables", t0)


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion"):
            try:
                if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                pass
    sys.exit(0 if all(" PASS " in line for line in ACCEPTANCE_LINES) else 1)
