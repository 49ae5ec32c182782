"""Closed-loop episode runner, trace files and planned-vs-random experiments."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import build_homography
from .localization import Localizer
from .navigation import (
    Mode,
    NavContext,
    NavParams,
    NavState,
    coverage_waypoints,
    footprint_width,
    lane_end_margin,
    navigation_step,
)
from .perception import render_segmentation
from .scenario import ScenarioConfig
from .world import Pose2D

EVENT_KINDS = (
    "pickup_success", "pickup_failure", "avoid", "boundary_exit", "emergency_stop", "collision", "wrong_pickup",
)

# stands in for an unbounded budget: six simulated hours
UNBOUNDED_BUDGET_S = 6 * 3600.0

TRACE_COLUMNS = (
    "t", "x", "y", "theta", "est_x", "est_y", "est_theta", "dr_x", "dr_y", "dr_theta",
    "mode", "v", "omega", "picked", "remaining", "failed",
)


class InvariantViolation(RuntimeError):
    pass


@dataclass
class EpisodeTrace:
    rows: list[tuple] = field(default_factory=list)
    events: list[tuple[float, str, str]] = field(default_factory=list)
    initial_garbage: int = 0
    completion_time: float = 0.0
    finished: bool = False
    seed: int = 0
    mode: str = "planned"

    def column(self, name: str) -> np.ndarray:
        k = TRACE_COLUMNS.index(name)
        return np.array([r[k] for r in self.rows])

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e[1] == kind)

    def position_rmse(self, estimate: str = "est") -> float:
        """RMS position error of the EKF ("est") or dead-reckoning ("dr") estimate."""
        dx = self.column(f"{estimate}_x") - self.column("x")
        dy = self.column(f"{estimate}_y") - self.column("y")
        return float(np.sqrt(np.mean(dx * dx + dy * dy)))

    def remaining_curve(self, period: float = 600.0) -> list[tuple[float, int]]:
        """Remaining garbage sampled at t = 0, period, 2*period, ... up to the end."""
        ts = self.column("t") if self.rows else np.zeros(0)
        rem = self.column("remaining") if self.rows else np.zeros(0)
        end = float(ts[-1]) if len(ts) else 0.0
        out = []
        k = 0
        while k * period <= end + 1e-9:
            t = float(k * period)
            i = int(np.searchsorted(ts, t + 1e-9, side="right")) - 1
            out.append((t, self.initial_garbage if i < 0 else int(rem[i])))
            k += 1
        if not out or out[-1][0] < end:
            out.append((end, int(rem[-1]) if len(rem) else self.initial_garbage))
        return out


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("placement", "sensors", "localization", "navigation")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, children)}


def nav_params_for(cfg: ScenarioConfig) -> NavParams:
    return NavParams(mode=cfg.mode, v_max=cfg.v_max, omega_max=cfg.omega_max, dt=cfg.dt)


def run_episode(config: ScenarioConfig, budget: float | None = None, seed: int | None = None,
                check_invariants: bool = True) -> EpisodeTrace:
    """Run one closed-loop episode until all garbage is resolved or the budget runs out.

    Tick order: localization (odometry of the last executed command, GPS when
    due), rendering from the true pose, navigation on the estimated pose,
    world step, bookkeeping.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    budget = UNBOUNDED_BUDGET_S if budget is None or math.isinf(budget) else float(budget)
    if budget <= 0:
        raise ValueError("budget must be > 0")
    rngs = seed_streams(seed)
    placement = (
        np.random.default_rng(config.placement_seed) if config.placement_seed is not None else rngs["placement"]
    )
    world = config.build_world(placement, rngs["sensors"])
    cam = config.camera
    hom = build_homography(cam)
    params = nav_params_for(config)
    garbage_ids = [o.id for o in world.objects if o.is_garbage]
    total = len(garbage_ids)
    waypoints = []
    if params.mode == "planned":
        spacing = config.lane_spacing or footprint_width(cam, cam.max_range / 2.0)
        waypoints = coverage_waypoints(world.grid, spacing, lane_end_margin(cam, spacing))
    ctx = NavContext(cam, hom, world.grid, params, config.confusion_model(), waypoints, total)
    loc = Localizer(config.start, config.noise, rngs["localization"])
    nav_rng = rngs["navigation"]
    nav = NavState()
    trace = EpisodeTrace(initial_garbage=total, seed=seed, mode=config.mode)
    executed = (0.0, 0.0)
    dt = config.dt
    n_ticks = int(math.ceil(budget / dt - 1e-9))
    prev_t = -1.0
    for k in range(n_ticks):
        t = k * dt
        if k > 0:
            loc.predict(executed[0], executed[1], dt)
        loc.maybe_fix(t, (world.robot.pose.x, world.robot.pose.y))
        est = Pose2D(*loc.estimate)
        frame = render_segmentation(world, world.robot.pose, cam, hom)
        out = navigation_step(world, est, frame, nav, nav_rng, ctx)
        nav = out.nav
        executed, hit = world.step(out.command, dt)
        t_now = (k + 1) * dt
        for kind, oid in out.events:
            trace.events.append((t_now, kind, oid or ""))
        if hit is not None:
            trace.events.append((t_now, "collision", hit.id))

        picked = sum(1 for o in world.objects if o.picked and o.is_garbage)
        failed = sum(1 for oid in garbage_ids if oid in nav.ignored and not world.object_by_id(oid).picked)
        remaining = total - picked - failed
        r = world.robot.pose
        dr = loc.dead_reckoning
        trace.rows.append((
            t_now, r.x, r.y, r.theta, est.x, est.y, est.theta,
            float(dr[0]), float(dr[1]), float(dr[2]),
            nav.mode.value, executed[0], executed[1], picked, remaining, failed,
        ))
        if check_invariants:
            if t_now <= prev_t:
                raise InvariantViolation(f"time not increasing at tick {k}")
            if picked + remaining + failed != total or remaining < 0:
                raise InvariantViolation(f"garbage count not conserved at t={t_now!r}")
            if trace.count("pickup_success") > total and total > 0:
                raise InvariantViolation("more pickups than garbage")
        prev_t = t_now
        if remaining == 0 and (total > 0 or nav.coverage_complete):
            trace.finished = True
            trace.completion_time = t_now
            return trace
    trace.completion_time = n_ticks * dt
    return trace


def write_trace(trace: EpisodeTrace, out_dir: str | Path, stem: str = "trace") -> tuple[Path, Path]:
    """One row per tick plus a separate events file; floats are written exactly."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tp, ep = out / f"{stem}.csv", out / f"{stem}_events.csv"
    with open(tp, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in trace.rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    with open(ep, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("t", "kind", "object_id"))
        for t, kind, oid in trace.events:
            w.writerow((repr(t), kind, oid))
    return tp, ep


def read_trace(trace_path: str | Path, events_path: str | Path | None = None) -> EpisodeTrace:
    trace_path = Path(trace_path)
    if events_path is None:
        events_path = trace_path.with_name(trace_path.stem + "_events.csv")
    ints = {"picked", "remaining", "failed"}
    rows = []
    with open(trace_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{trace_path}: unexpected header")
        for rec in reader:
            rows.append(tuple(
                rec[i] if name == "mode" else int(rec[i]) if name in ints else float(rec[i])
                for i, name in enumerate(TRACE_COLUMNS)
            ))
    events = []
    with open(events_path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for t, kind, oid in reader:
            events.append((float(t), kind, oid))
    tr = EpisodeTrace(rows, events)
    if rows:
        tr.initial_garbage = rows[0][TRACE_COLUMNS.index("picked")] + rows[0][TRACE_COLUMNS.index("remaining")] \
            + rows[0][TRACE_COLUMNS.index("failed")]
        tr.completion_time = rows[-1][0]
        tr.finished = rows[-1][TRACE_COLUMNS.index("remaining")] == 0
    return tr


def write_curve(curve: list[tuple[float, int]], path: str | Path) -> None:
    with open(path, "w") as f:
        f.write("# t_s remaining\n")
        for t, r in curve:
            f.write(f"{t!r} {r}\n")


def read_curve(path: str | Path) -> list[tuple[float, int]]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        t, r = line.split()
        out.append((float(t), int(r)))
    return out


# --- experiments -------------------------------------------------------------

@dataclass
class EpisodeSummary:
    seed: int
    mode: str
    garbage_count: int
    completion_time: float
    finished: bool
    pickups: int
    failures: int
    curve: list[tuple[float, int]]


@dataclass
class ExperimentReport:
    cells: dict[str, list[EpisodeSummary]]
    budget: float
    sample_period: float
    insufficient_for_aggregate: bool = False

    @staticmethod
    def cell_key(garbage_count: int, mode: str) -> str:
        return f"{garbage_count}/{mode}"

    def cell(self, garbage_count: int, mode: str) -> list[EpisodeSummary]:
        return self.cells[self.cell_key(garbage_count, mode)]

    def mean_completion(self, garbage_count: int, mode: str) -> float:
        return float(np.mean([e.completion_time for e in self.cell(garbage_count, mode)]))

    def ratio(self, garbage_count: int) -> float:
        """Mean random completion over mean planned completion."""
        return self.mean_completion(garbage_count, "random") / self.mean_completion(garbage_count, "planned")

    def planned_win_fraction(self, garbage_count: int) -> float:
        planned = {e.seed: e.completion_time for e in self.cell(garbage_count, "planned")}
        random = {e.seed: e.completion_time for e in self.cell(garbage_count, "random")}
        seeds = sorted(set(planned) & set(random))
        return sum(planned[s] < random[s] for s in seeds) / len(seeds) if seeds else 0.0

    def garbage_counts(self) -> list[int]:
        return sorted({int(k.split("/")[0]) for k in self.cells})

    def to_dict(self) -> dict:
        agg = {}
        for g in self.garbage_counts():
            entry = {}
            for m in ("planned", "random"):
                if self.cell_key(g, m) in self.cells:
                    entry[f"mean_completion_{m}_s"] = self.mean_completion(g, m)
            if len(entry) == 2:
                entry["ratio_random_over_planned"] = self.ratio(g)
                entry["planned_win_fraction"] = self.planned_win_fraction(g)
            agg[str(g)] = entry
        return {
            "budget_s": self.budget,
            "sample_period_s": self.sample_period,
            "insufficient_for_aggregate": self.insufficient_for_aggregate,
            "cells": {k: [asdict(e) for e in v] for k, v in self.cells.items()},
            "aggregate": agg,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentReport:
        cells = {
            k: [EpisodeSummary(**{**e, "curve": [tuple(p) for p in e["curve"]]}) for e in v]
            for k, v in d["cells"].items()
        }
        return cls(cells, d["budget_s"], d["sample_period_s"], d["insufficient_for_aggregate"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> ExperimentReport:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def table(self) -> str:
        lines = [f"{'garbage':>8} {'planned_s':>10} {'random_s':>10} {'ratio':>7} {'planned_wins':>13}"]
        for g in self.garbage_counts():
            try:
                p, r = self.mean_completion(g, "planned"), self.mean_completion(g, "random")
            except KeyError:
                continue
            lines.append(f"{g:>8} {p:>10.1f} {r:>10.1f} {r / p:>7.3f} {self.planned_win_fraction(g):>13.2f}")
        if self.insufficient_for_aggregate:
            lines.append("insufficient for aggregate claims (fewer than 20 seeds)")
        return "\n".join(lines)


def _run_job(job) -> EpisodeSummary:
    config, seed, budget, period, trace_dir = job
    trace = run_episode(config, budget, seed)
    if trace_dir is not None:
        write_trace(trace, trace_dir, f"g{config.garbage_count}_{config.mode}_s{seed}")
    return EpisodeSummary(
        seed, config.mode, config.garbage_count, trace.completion_time, trace.finished,
        trace.count("pickup_success"), trace.count("pickup_failure"), trace.remaining_curve(period),
    )


def run_experiment(base: ScenarioConfig, garbage_counts=(20, 50), modes=("planned", "random"), seeds=range(20),
                   budget: float | None = None, sample_period: float = 600.0, workers: int = 1,
                   trace_dir: str | Path | None = None) -> ExperimentReport:
    """Every (garbage count, mode) cell over the same seeds; paired seeds share object layouts."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    jobs = []
    for g in garbage_counts:
        for m in modes:
            cfg = replace(base, garbage_count=int(g), mode=m, objects=None, distractor_count=None)
            cfg.validate()
            for s in seeds:
                jobs.append((cfg, s, budget, sample_period, None if trace_dir is None else str(trace_dir)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    cells: dict[str, list[EpisodeSummary]] = {}
    for r in results:
        cells.setdefault(ExperimentReport.cell_key(r.garbage_count, r.mode), []).append(r)
    for v in cells.values():
        v.sort(key=lambda e: e.seed)
    return ExperimentReport(
        cells, UNBOUNDED_BUDGET_S if budget is None else float(budget), sample_period,
        insufficient_for_aggregate=len(seeds) < 20,
    )


__all__ = [
    "EVENT_KINDS", "EpisodeSummary", "EpisodeTrace", "ExperimentReport", "InvariantViolation", "Mode",
    "TRACE_COLUMNS", "UNBOUNDED_BUDGET_S", "read_curve", "read_trace", "run_episode", "run_experiment",
    "seed_streams", "write_curve", "write_trace",
]
