"""Command-line front end.

Exit codes: 0 ok, 2 bad configuration, 3 runtime invariant violation,
4 no feasible direction. The default output directory comes from
$GRASSBOT_OUT (falling back to ./out).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from .camera import CameraModel, DirectionError, build_homography
from .harness import InvariantViolation, run_episode, run_experiment, write_curve, write_trace
from .navigation import optimal_direction
from .perception import load_frame, select_closest_object
from .scenario import ScenarioError, load_scenario
from .tracker import compute_offsets, tracking_command

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_NO_DIRECTION = 4

OUT_ENV = "GRASSBOT_OUT"


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _budget(text: str | None) -> float | None:
    if text is None or text.lower() in ("inf", "infinite", "none"):
        return None
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("budget must be > 0")
    return value


def _scenario(args):
    cfg = load_scenario(args.scenario)
    if getattr(args, "mode", None):
        cfg = replace(cfg, mode=args.mode)
    return cfg


def cmd_run(args) -> int:
    cfg = _scenario(args)
    trace = run_episode(cfg, _budget(args.budget), args.seed)
    out = _out_dir(args)
    write_trace(trace, out, "trace")
    write_curve(trace.remaining_curve(args.period), out / "remaining.dat")
    status = "finished" if trace.finished else "budget"
    print(
        f"{status} t={trace.completion_time:.1f}s pickups={trace.count('pickup_success')} "
        f"failures={trace.count('pickup_failure')} garbage={trace.initial_garbage}"
    )
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _scenario(args)
    counts = [int(g) for g in args.garbage.split(",")] if args.garbage else [cfg.garbage_count]
    seeds = range(args.seed, args.seed + args.seeds)
    out = _out_dir(args)
    report = run_experiment(
        cfg, counts, ("planned", "random"), seeds, _budget(args.budget), args.period, args.workers,
        out / "traces" if args.traces else None,
    )
    report.save(out / "report.json")
    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    for key, eps in report.cells.items():
        g, m = key.split("/")
        for e in eps:
            write_curve(e.curve, curves / f"g{g}_{m}_s{e.seed}.dat")
    print(report.table())
    return EXIT_OK


def _camera(args) -> CameraModel:
    return CameraModel.default() if args.scenario is None else load_scenario(args.scenario).camera


def cmd_direction(args) -> int:
    frame = load_frame(args.frame)
    cam = _camera(args)
    if (frame.width, frame.height) != (cam.width, cam.height):
        cam = CameraModel.default(width=frame.width, height=frame.height)
    try:
        res = optimal_direction(frame, build_homography(cam), cam)
    except DirectionError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NO_DIRECTION
    print("cent_set:")
    for u, v in res.cent:
        print(f"  {u:g} {v:g}")
    print(f"line: rho={res.line.rho:g} theta={math.degrees(res.line.theta_img):g}deg")
    print(f"heading: {math.degrees(res.heading):.3f}deg")
    return EXIT_OK


def cmd_track(args) -> int:
    frame = load_frame(args.frame)
    cam = _camera(args)
    box = frame.box_for(args.object) if args.object else select_closest_object(frame)
    if box is None:
        print("error: no object to track", file=sys.stderr)
        return EXIT_CONFIG
    du, dv = compute_offsets(box, cam)
    cmd = tracking_command(du, dv, args.v_max, args.omega_max, cam)
    print(f"object: {box.object_id}")
    print(f"offsets: du={du} dv={dv}")
    print(f"command: v={cmd.v!r} omega={cmd.omega!r} arrived={cmd.arrived}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_scenario(args.scenario)
    n = len(cfg.objects) if cfg.objects is not None else cfg.garbage_count + cfg.n_distractors
    print(f"ok: mode={cfg.mode} objects={n} boundary_vertices={len(cfg.boundary)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grassbot", description="Lawn garbage-collecting robot simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required: bool):
        sp.add_argument("--scenario", required=True, help="scenario file")
        sp.add_argument("--seed", type=int, required=seed_required)
        sp.add_argument("--mode", choices=("planned", "random"))
        sp.add_argument("--budget", help="simulated seconds, or 'inf'")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
        sp.add_argument("--period", type=float, default=600.0, help="remaining-curve sampling period in s")

    r = sub.add_parser("run", help="run one episode")
    common(r, True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("experiment", help="planned vs random over many seeds")
    common(e, True)
    e.add_argument("--seeds", type=int, default=20, help="number of consecutive seeds")
    e.add_argument("--garbage", help="comma-separated garbage counts (default: scenario count)")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--traces", action="store_true", help="also write per-episode traces")
    e.set_defaults(func=cmd_experiment)

    d = sub.add_parser("direction", help="optimal direction for one frame file")
    d.add_argument("frame")
    d.add_argument("--scenario", help="take camera parameters from a scenario")
    d.set_defaults(func=cmd_direction)

    t = sub.add_parser("track", help="servo command for one frame file")
    t.add_argument("frame")
    t.add_argument("--object", help="object id (default: closest)")
    t.add_argument("--scenario")
    t.add_argument("--v-max", type=float, default=0.5)
    t.add_argument("--omega-max", type=float, default=1.0)
    t.set_defaults(func=cmd_track)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seeds", 1) < 1:
        print("error: --seeds must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, argparse.ArgumentTypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
