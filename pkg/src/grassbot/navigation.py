"""Segmentation-driven navigation: the per-tick mode machine, optimal-direction
search over the ground contour, random-rotation boundary return, obstacle
escape and the boustrophedon baseline.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import (
    CameraModel,
    DirectionError,
    GroundHomography,
    InsufficientPoints,
    PolarLine,
    hough_line,
    image_line_to_ground_heading,
)
from .perception import ConfusionModel, SegmentationFrame, select_closest_object
from .tracker import LOST_FRAMES_LIMIT, track_step
from .world import OccupancyGrid, Pose2D, World, is_inside_map, ray_cells, ultrasonic_range, wrap_angle


class NoFeasibleDirection(DirectionError):
    def __init__(self, msg: str = "no feasible direction"):
        super().__init__(msg)


class Mode(str, enum.Enum):
    COVERAGE = "Coverage"
    RETURN = "Return"
    TRACK = "Track"
    RECOGNIZE = "Recognize"
    PICKUP = "Pickup"
    AVOID = "Avoid"


# --- optimal direction -------------------------------------------------------

def _row_crossings(contour: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Even-odd crossing abscissae per row, sorted, inf-padded."""
    x1, y1 = contour[:, 0], contour[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    V = rows[:, None].astype(float)
    cond = (y1 > V) != (y2 > V)
    with np.errstate(divide="ignore", invalid="ignore"):
        # multiply before dividing: exact whenever the true crossing is an integer
        xs = x1 + ((V - y1) * (x2 - x1)) / (y2 - y1)
    xs = np.where(cond, xs, np.inf)
    xs.sort(axis=1)
    return xs


def _subtract(runs: list[list[int]], lo: int, hi: int) -> list[list[int]]:
    out = []
    for a, b in runs:
        if hi < a or lo > b:
            out.append([a, b])
            continue
        if a < lo:
            out.append([a, lo - 1])
        if b > hi:
            out.append([hi + 1, b])
    return out


def _widest_center(runs) -> float | None:
    """Midpoint of the first run wider than every earlier one (width = last - first > 0)."""
    best_w, center = 0, None
    for a, b in runs:
        if b - a > best_w:
            best_w, center = b - a, (a + b) / 2.0
    return center


def cent_set(frame: SegmentationFrame) -> np.ndarray:
    """Per-row centers of the widest passable interval over rows h/2 .. h-1.

    A pixel is passable when it is strictly inside the ground contour and
    outside every object box (box pixels are inclusive). Returns (n, 2) (u, v).
    """
    w, h = frame.width, frame.height
    contour = frame.ground_contour
    if len(contour) < 3:
        return np.zeros((0, 2))
    rows = np.arange(h // 2, h)
    xs = _row_crossings(contour, rows)
    ncross = np.isfinite(xs).sum(axis=1)

    y1, y2 = contour[:, 1], np.roll(contour[:, 1], -1)
    x1, x2 = contour[:, 0], np.roll(contour[:, 0], -1)
    # boundary pieces lying exactly on a pixel row: horizontal edges and single vertices
    flat_edges = [(min(a, b), max(a, b), y) for a, b, y, yy in zip(x1, x2, y1, y2) if y == yy and y == int(y)]
    flat_edges += [(x, x, y) for x, y in zip(x1, y1) if y == int(y)]
    special = np.zeros(len(rows), dtype=bool)
    for _, _, y in flat_edges:
        if rows[0] <= y <= rows[-1]:
            special[int(y) - rows[0]] = True
    for b in frame.object_boxes:
        lo, hi = max(b.v_tl, rows[0]), min(b.v_br, rows[-1])
        if lo <= hi:
            special[lo - rows[0]:hi - rows[0] + 1] = True
    special |= ncross != 2

    out = []
    simple = ~special
    if simple.any():
        first = np.floor(xs[simple, 0]) + 1
        last = np.ceil(xs[simple, 1]) - 1
        first = np.maximum(first, 0)
        last = np.minimum(last, w - 1)
        ok = last - first > 0
        vs = rows[simple][ok]
        us = (first[ok] + last[ok]) / 2.0
        out.extend(zip(vs.tolist(), us.tolist()))

    for k in np.nonzero(special)[0]:
        v = int(rows[k])
        runs = []
        cx = xs[k, : ncross[k]]
        for i in range(0, len(cx) - 1, 2):
            a = max(int(math.floor(cx[i])) + 1, 0)
            b = min(int(math.ceil(cx[i + 1])) - 1, w - 1)
            if a > b:
                continue
            if runs and a <= runs[-1][1] + 1:
                runs[-1][1] = max(runs[-1][1], b)
            else:
                runs.append([a, b])
        for lo, hi, y in flat_edges:
            if y == v:
                runs = _subtract(runs, int(math.ceil(lo)), int(math.floor(hi)))
        for b in frame.object_boxes:
            if b.v_tl <= v <= b.v_br:
                runs = _subtract(runs, b.u_tl, b.u_br)
        c = _widest_center(runs)
        if c is not None:
            out.append((v, c))

    out.sort()
    return np.array([(u, v) for v, u in out], dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class DirectionResult:
    cent: np.ndarray
    line: PolarLine
    heading: float


def optimal_direction(frame: SegmentationFrame, hom: GroundHomography, cam: CameraModel) -> DirectionResult:
    cent = cent_set(frame)
    if len(cent) < 2:
        raise NoFeasibleDirection()
    try:
        line = hough_line(cent, image_size=(cam.width, cam.height))
    except InsufficientPoints:
        raise NoFeasibleDirection() from None
    return DirectionResult(cent, line, image_line_to_ground_heading(line, hom, cam))


def find_optimal_direction(frame: SegmentationFrame, hom: GroundHomography, cam: CameraModel) -> float:
    """Robot-frame heading (rad, CCW) of the widest passable corridor."""
    return optimal_direction(frame, hom, cam).heading


# --- return mechanism --------------------------------------------------------

def reentry_ray_free(grid: OccupancyGrid, pose: Pose2D, lookahead: float) -> bool:
    """All cells under the heading ray are free once the ray has entered the map.

    From inside the map this is the plain all-free check. From outside, the
    occupied cells the ray crosses before reaching free ground are skipped, so
    headings back into the map can be accepted.
    """
    if lookahead <= 0:
        raise ValueError("lookahead must be > 0")
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    cells = ray_cells(grid, pose, lookahead)

    def along(cell):
        cx, cy = grid.cell_center(*cell)
        return (cx - pose.x) * c + (cy - pose.y) * s

    values = [grid.value(i, j) for i, j in sorted(cells, key=along)]
    if is_inside_map(grid, pose):
        return all(v == 1 for v in values)
    k = 0
    while k < len(values) and values[k] == 0:
        k += 1
    return k < len(values) and all(v == 1 for v in values[k:])


def sample_return_heading(grid: OccupancyGrid, pose: Pose2D, rng: np.random.Generator,
                          lookahead: float = 2.0, max_attempts: int = 64) -> tuple[float, int, bool]:
    """Rotate by uniform random angles until the heading ray is all free.

    Returns (absolute heading, attempts used, fell back to centroid).
    """
    heading = pose.theta
    for k in range(1, max_attempts + 1):
        heading = wrap_angle(heading + rng.uniform(-math.pi, math.pi))
        if reentry_ray_free(grid, Pose2D(pose.x, pose.y, heading), lookahead):
            return heading, k, False
    cx, cy = grid.free_centroid()
    return math.atan2(cy - pose.y, cx - pose.x), max_attempts, True


def return_heading(grid: OccupancyGrid, estimated_pose: Pose2D, rng: np.random.Generator,
                   lookahead: float = 2.0) -> float:
    return sample_return_heading(grid, estimated_pose, rng, lookahead)[0]


# --- boustrophedon baseline --------------------------------------------------

def coverage_waypoints(grid: OccupancyGrid, spacing: float, end_margin: float = 1.0,
                       entry_margin: float = 1.0) -> list[Pose2D]:
    """Serpentine lanes along x, stacked in y at most ``spacing`` apart.

    Lane ends stop ``end_margin`` short of the free run's edge. The very first
    lane end is never approached along its lane, so it uses ``entry_margin``.
    """
    if spacing <= 0:
        raise ValueError("spacing must be > 0")
    free_rows = np.nonzero(grid.cells.any(axis=1))[0]
    if len(free_rows) == 0:
        return []
    res = grid.resolution
    ox, oy = grid.origin
    y_lo = oy + free_rows[0] * res
    y_hi = oy + (free_rows[-1] + 1) * res
    extent = y_hi - y_lo
    n_lanes = max(1, math.ceil(extent / spacing - 1e-9))
    band = extent / n_lanes

    def trimmed(margin, xa, xb):
        return math.floor(min(margin, (xb - xa) / 2.0) / res) * res

    pts: list[tuple[float, float]] = []
    for k in range(n_lanes):
        y = y_lo + (k + 0.5) * band
        j = int(math.floor((y - oy) / res))
        row = grid.cells[j]
        segs = []
        padded = np.concatenate([[0], row, [0]])
        edges = np.diff(padded.astype(np.int8))
        for i0, i1 in zip(np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0] - 1):
            xa = ox + (i0 + 0.5) * res
            xb = ox + (i1 + 0.5) * res
            trim = trimmed(end_margin, xa, xb)
            lead = trimmed(entry_margin, xa, xb) if not pts and not segs else trim
            segs.append((xa + lead, xb - trim))
        if k % 2 == 1:
            segs = [(b, a) for a, b in reversed(segs)]
        for a, b in segs:
            pts.append((a, y))
            if b != a:
                pts.append((b, y))
    out = []
    for i, (x, y) in enumerate(pts):
        if i + 1 < len(pts):
            th = math.atan2(pts[i + 1][1] - y, pts[i + 1][0] - x)
        else:
            th = out[-1].theta if out else 0.0
        out.append(Pose2D(x, y, th))
    return out


def footprint_width(cam: CameraModel, distance: float) -> float:
    """Lateral width of the visible ground at a forward distance."""
    from .perception import Renderer

    view = Renderer(cam).view
    import shapely

    cut = shapely.Polygon(view).intersection(shapely.LineString([(distance, -1e3), (distance, 1e3)]))
    if cut.is_empty:
        return 0.0
    ys = np.asarray(cut.coords)[:, 1]
    return float(ys.max() - ys.min())


def lane_end_margin(cam: CameraModel, spacing: float) -> float:
    """How early a lane may stop: the strip ahead is already in view once the
    half-spacing fits inside the horizontal field of view."""
    return min((spacing / 2.0) / math.tan(cam.hfov / 2.0), cam.max_range / 2.0)


# --- state machine -----------------------------------------------------------

@dataclass
class NavParams:
    mode: str = "planned"
    v_max: float = 0.5
    omega_max: float = 1.0
    dt: float = 0.1
    heading_gain: float = 2.0
    align_tolerance: float = 0.1
    lookahead: float = 2.0
    escape_distance: float = 1.5
    estop_distance: float = 0.3
    max_avoid_replans: int = 8
    replan_ticks: int = 5
    waypoint_tolerance: float = 0.5
    waypoint_skip_after: int = 3
    return_travel_limit: float = 3.0
    lost_frames_limit: int = LOST_FRAMES_LIMIT
    pickup_time: float = 1.4
    pickup_success: float = 0.96
    pickup_attempts: int = 3
    pickup_reach: float = 0.35
    max_pickup_mass: float = 1.0

    def __post_init__(self):
        if self.mode not in ("planned", "random"):
            raise ValueError(f"mode must be planned or random, got {self.mode!r}")
        ticks = round(self.pickup_time / self.dt)
        if ticks < 1 or abs(ticks * self.dt - self.pickup_time) > 1e-9:
            raise ValueError("pickup_time must be a whole number of timesteps")

    @property
    def pickup_ticks(self) -> int:
        return round(self.pickup_time / self.dt)


@dataclass(frozen=True)
class PickupModel:
    success_prob: float = 0.96
    reach: float = 0.35
    max_mass: float = 1.0

    def attempt(self, world: World, obj_id: str, rng: np.random.Generator) -> bool:
        """One grasp; needs the object within reach of the front and light enough."""
        draw = rng.random()
        obj = world.object_by_id(obj_id)
        if obj is None or obj.picked:
            return False
        fx, fy = world.front_point()
        reachable = math.hypot(obj.center[0] - fx, obj.center[1] - fy) <= self.reach
        return reachable and obj.mass <= self.max_mass and draw < self.success_prob


@dataclass
class NavState:
    mode: Mode = Mode.COVERAGE
    tracked_object_id: str | None = None
    committed_heading: float | None = None
    avoid_distance_remaining: float = 0.0
    waypoint_index: int = 0
    lost_frames: int = 0
    pickup_ticks_left: int = 0
    pickup_attempts: int = 0
    avoid_replans: int = 0
    replan_countdown: int = 0
    waypoint_estops: int = 0
    sweeps: int = 0
    coverage_complete: bool = False
    ignored: frozenset = frozenset()

    def copy(self) -> NavState:
        return replace(self)


@dataclass
class NavContext:
    cam: CameraModel
    hom: GroundHomography
    grid: OccupancyGrid
    params: NavParams = field(default_factory=NavParams)
    confusion: ConfusionModel = field(default_factory=ConfusionModel)
    waypoints: list[Pose2D] = field(default_factory=list)
    total_garbage: int = 0

    @property
    def pickup(self) -> PickupModel:
        p = self.params
        return PickupModel(p.pickup_success, p.pickup_reach, p.max_pickup_mass)


@dataclass
class NavOutput:
    nav: NavState
    command: tuple[float, float]
    events: list[tuple[str, str | None]]


def heading_command(target: float, theta: float, params: NavParams) -> tuple[float, float]:
    err = wrap_angle(target - theta)
    omega = max(-params.omega_max, min(params.omega_max, params.heading_gain * err))
    if abs(err) > params.align_tolerance * 5:
        return 0.0, omega
    return params.v_max * math.cos(err), omega


def avoid_step(nav: NavState, estimated_pose: Pose2D, us_range: float,
               params: NavParams) -> tuple[tuple[float, float], bool]:
    """Turn toward the committed heading, then advance; returns (command, emergency_stop)."""
    if nav.committed_heading is None:
        raise ValueError("avoid_step needs a committed heading")
    err = wrap_angle(nav.committed_heading - estimated_pose.theta)
    omega = max(-params.omega_max, min(params.omega_max, params.heading_gain * err))
    if abs(err) > params.align_tolerance:
        return (0.0, omega), False
    if us_range < params.estop_distance:
        return (0.0, 0.0), True
    return (params.v_max, omega), False


def _plan_escape(frame, est: Pose2D, ctx: NavContext, rng) -> float:
    try:
        return wrap_angle(est.theta + find_optimal_direction(frame, ctx.hom, ctx.cam))
    except DirectionError:
        return sample_return_heading(ctx.grid, est, rng, ctx.params.lookahead)[0]


def _enter_avoid(nav: NavState, frame, est: Pose2D, ctx: NavContext, rng) -> None:
    nav.mode = Mode.AVOID
    nav.tracked_object_id = None
    nav.committed_heading = _plan_escape(frame, est, ctx, rng)
    nav.avoid_distance_remaining = ctx.params.escape_distance
    nav.avoid_replans = 0


def _enter_coverage(nav: NavState) -> None:
    nav.mode = Mode.COVERAGE
    nav.tracked_object_id = None
    nav.committed_heading = None
    nav.replan_countdown = 0
    nav.lost_frames = 0


def _coverage_command(world, est, frame, nav, rng, ctx, events) -> tuple[float, float]:
    p = ctx.params
    if p.mode == "planned":
        wps = ctx.waypoints
        if not wps or nav.coverage_complete:
            nav.coverage_complete = True
            return 0.0, 0.0
        wp = wps[nav.waypoint_index]
        if math.hypot(wp.x - est.x, wp.y - est.y) < p.waypoint_tolerance or nav.waypoint_estops > p.waypoint_skip_after:
            nav.waypoint_estops = 0
            nav.waypoint_index += 1
            if nav.waypoint_index >= len(wps):
                nav.waypoint_index = 0
                nav.sweeps += 1
                if ctx.total_garbage == 0:
                    nav.coverage_complete = True
                    return 0.0, 0.0
            wp = wps[nav.waypoint_index]
        return heading_command(math.atan2(wp.y - est.y, wp.x - est.x), est.theta, p)

    # random wander: follow the free-corridor heading, re-planned once aligned
    aligned = nav.committed_heading is not None and abs(wrap_angle(nav.committed_heading - est.theta)) <= p.align_tolerance
    nav.replan_countdown -= 1
    if nav.committed_heading is None or (aligned and nav.replan_countdown <= 0):
        try:
            nav.committed_heading = wrap_angle(est.theta + find_optimal_direction(frame, ctx.hom, ctx.cam))
        except DirectionError:
            nav.committed_heading = sample_return_heading(ctx.grid, est, rng, p.lookahead)[0]
        nav.replan_countdown = p.replan_ticks
    return heading_command(nav.committed_heading, est.theta, p)


def navigation_step(world: World, estimated_pose: Pose2D, frame: SegmentationFrame, nav: NavState,
                    rng: np.random.Generator, ctx: NavContext) -> NavOutput:
    """One control tick of the navigation flow; returns the new state, command and events."""
    nav = nav.copy()
    est = estimated_pose
    p = ctx.params
    events: list[tuple[str, str | None]] = []
    inside = is_inside_map(ctx.grid, est)
    bumped = world.last_contact is not None

    def obstacle_range() -> float:
        return ultrasonic_range(world, world.robot.pose, include_boundary=False)

    # Step 1/2: leaving the map preempts everything except a grasp in progress
    if not inside and nav.mode not in (Mode.RETURN, Mode.RECOGNIZE, Mode.PICKUP):
        events.append(("boundary_exit", nav.tracked_object_id))
        nav.mode = Mode.RETURN
        nav.tracked_object_id = None
        nav.committed_heading = sample_return_heading(ctx.grid, est, rng, p.lookahead)[0]
        nav.avoid_distance_remaining = p.return_travel_limit
        err = wrap_angle(nav.committed_heading - est.theta)
        omega = max(-p.omega_max, min(p.omega_max, p.heading_gain * err))
        return NavOutput(nav, (0.0, omega), events)

    if nav.mode == Mode.RETURN:
        if inside:
            _enter_coverage(nav)
        else:
            err = wrap_angle(nav.committed_heading - est.theta)
            omega = max(-p.omega_max, min(p.omega_max, p.heading_gain * err))
            if abs(err) > p.align_tolerance:
                return NavOutput(nav, (0.0, omega), events)
            if bumped or obstacle_range() < p.estop_distance:
                events.append(("emergency_stop", None))
                _enter_avoid(nav, frame, est, ctx, rng)
                return NavOutput(nav, (0.0, 0.0), events)
            nav.avoid_distance_remaining -= p.v_max * p.dt
            if nav.avoid_distance_remaining <= 0:
                nav.committed_heading = sample_return_heading(ctx.grid, est, rng, p.lookahead)[0]
                nav.avoid_distance_remaining = p.return_travel_limit
            return NavOutput(nav, (p.v_max, omega), events)

    if nav.mode == Mode.COVERAGE:
        box = select_closest_object(frame, nav.ignored)
        if box is not None:
            nav.mode = Mode.TRACK
            nav.tracked_object_id = box.object_id
            nav.committed_heading = None
            nav.lost_frames = 0
        else:
            cmd = _coverage_command(world, est, frame, nav, rng, ctx, events)
            if cmd[0] > 0 and (bumped or obstacle_range() < p.estop_distance):
                events.append(("emergency_stop", None))
                nav.waypoint_estops += 1
                _enter_avoid(nav, frame, est, ctx, rng)
                return NavOutput(nav, (0.0, 0.0), events)
            return NavOutput(nav, cmd, events)

    if nav.mode == Mode.TRACK:
        if bumped:
            events.append(("emergency_stop", nav.tracked_object_id))
            _enter_avoid(nav, frame, est, ctx, rng)
            return NavOutput(nav, (0.0, 0.0), events)
        st = track_step(frame, nav.tracked_object_id, nav.lost_frames, ctx.cam, p.v_max, p.omega_max,
                        exclude=nav.ignored, lost_limit=p.lost_frames_limit)
        nav.lost_frames = st.lost_frames
        nav.tracked_object_id = st.object_id
        if st.aborted:
            _enter_coverage(nav)
            return NavOutput(nav, (0.0, 0.0), events)
        if st.command.arrived:
            nav.mode = Mode.RECOGNIZE
            return NavOutput(nav, (0.0, 0.0), events)
        return NavOutput(nav, (st.command.v, st.command.omega), events)

    if nav.mode == Mode.RECOGNIZE:
        obj = world.object_by_id(nav.tracked_object_id)
        if obj is None or obj.picked:
            _enter_coverage(nav)
            return NavOutput(nav, (0.0, 0.0), events)
        result = ctx.confusion.classify(obj.true_class, rng)
        if result.is_garbage:
            nav.mode = Mode.PICKUP
            nav.pickup_ticks_left = p.pickup_ticks
            nav.pickup_attempts = 0
            return NavOutput(nav, (0.0, 0.0), events)
        events.append(("avoid", obj.id))
        nav.ignored = nav.ignored | {obj.id}
        _enter_avoid(nav, frame, est, ctx, rng)
        return NavOutput(nav, (0.0, 0.0), events)

    if nav.mode == Mode.PICKUP:
        nav.pickup_ticks_left -= 1
        if nav.pickup_ticks_left > 0:
            return NavOutput(nav, (0.0, 0.0), events)
        obj_id = nav.tracked_object_id
        nav.pickup_attempts += 1
        if ctx.pickup.attempt(world, obj_id, rng):
            world.pick(obj_id)
            # a distractor that slipped past the classifier is still removed, but not counted as garbage
            events.append(("pickup_success" if world.object_by_id(obj_id).is_garbage else "wrong_pickup", obj_id))
            _enter_coverage(nav)
        else:
            events.append(("pickup_failure", obj_id))
            if nav.pickup_attempts < p.pickup_attempts:
                nav.pickup_ticks_left = p.pickup_ticks
            else:
                nav.ignored = nav.ignored | {obj_id}
                events.append(("avoid", obj_id))
                _enter_avoid(nav, frame, est, ctx, rng)
        return NavOutput(nav, (0.0, 0.0), events)

    # Mode.AVOID
    (v, omega), estop = avoid_step(nav, est, obstacle_range(), p)
    if estop or (bumped and v > 0):
        events.append(("emergency_stop", None))
        nav.avoid_replans += 1
        if nav.avoid_replans > p.max_avoid_replans:
            nav.committed_heading = wrap_angle(est.theta + rng.uniform(-math.pi, math.pi))
        else:
            nav.committed_heading = _plan_escape(frame, est, ctx, rng)
        return NavOutput(nav, (0.0, 0.0), events)
    nav.avoid_distance_remaining -= v * p.dt
    if nav.avoid_distance_remaining <= 0:
        _enter_coverage(nav)
    return NavOutput(nav, (v, omega), events)
