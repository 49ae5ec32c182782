"""Metric world: lawn occupancy grid, objects and the robot's kinematic state.

Frames: world x/y in meters, angles CCW. The robot frame has x forward, y left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import shapely

GARBAGE_CLASSES = ("bottle", "can", "carton", "plastic_bag", "waste_paper")
NONGARBAGE_CLASSES = ("cup", "book", "shoes", "phone", "bag", "wallet")
OBJECT_CLASSES = GARBAGE_CLASSES + NONGARBAGE_CLASSES

# radius m, height m, mass kg
CLASS_SHAPES = {
    "bottle": (0.04, 0.25, 0.5),
    "can": (0.035, 0.12, 0.05),
    "carton": (0.08, 0.2, 0.3),
    "plastic_bag": (0.12, 0.1, 0.02),
    "waste_paper": (0.08, 0.04, 0.01),
    "cup": (0.045, 0.1, 0.2),
    "book": (0.12, 0.04, 0.6),
    "shoes": (0.14, 0.12, 0.8),
    "phone": (0.08, 0.02, 0.2),
    "bag": (0.2, 0.3, 1.5),
    "wallet": (0.06, 0.03, 0.1),
}


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = math.remainder(theta, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def to_robot_frame(self, px, py):
        """World coordinates -> robot frame (x forward, y left)."""
        dx = np.asarray(px, dtype=float) - self.x
        dy = np.asarray(py, dtype=float) - self.y
        c, s = math.cos(self.theta), math.sin(self.theta)
        return c * dx + s * dy, -s * dx + c * dy

    def to_world_frame(self, rx, ry):
        rx = np.asarray(rx, dtype=float)
        ry = np.asarray(ry, dtype=float)
        c, s = math.cos(self.theta), math.sin(self.theta)
        return self.x + c * rx - s * ry, self.y + s * rx + c * ry


@dataclass
class WorldObject:
    id: str
    center: tuple[float, float]
    footprint_radius: float
    height: float
    true_class: str
    mass: float = 0.1
    picked: bool = False

    def __post_init__(self):
        if self.footprint_radius <= 0:
            raise ValueError(f"object {self.id}: footprint_radius must be > 0")
        if self.true_class not in OBJECT_CLASSES:
            raise ValueError(f"object {self.id}: unknown class {self.true_class!r}")

    @property
    def is_garbage(self) -> bool:
        return self.true_class in GARBAGE_CLASSES

    @classmethod
    def of_class(cls, obj_id: str, true_class: str, x: float, y: float) -> WorldObject:
        radius, height, mass = CLASS_SHAPES[true_class]
        return cls(obj_id, (x, y), radius, height, true_class, mass)


@dataclass(frozen=True)
class RobotState:
    pose: Pose2D
    v: float = 0.0
    omega: float = 0.0
    carried_count: int = 0


def step_kinematics(state: RobotState, cmd: tuple[float, float], dt: float) -> RobotState:
    """Advance the unicycle by ``dt`` under a constant (v, omega) command.

    Integrates the arc exactly, so ten steps of dt compose to the same pose as
    one step of 10*dt.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    v, omega = float(cmd[0]), float(cmd[1])
    p = state.pose
    dx, dy = arc_displacement(p.theta, v, omega, dt)
    pose = Pose2D(p.x + dx, p.y + dy, p.theta + omega * dt)
    return replace(state, pose=pose, v=v, omega=omega)


def arc_displacement(theta: float, v: float, omega: float, dt: float) -> tuple[float, float]:
    dtheta = omega * dt
    if abs(dtheta) < 1e-6:
        # second-order series of sin(x)/x and (1-cos x)/x
        k_par = 1.0 - dtheta * dtheta / 6.0
        k_perp = dtheta / 2.0
    else:
        k_par = math.sin(dtheta) / dtheta
        # 1 - cos x written as 2 sin^2(x/2) to avoid cancellation at small x
        k_perp = 2.0 * math.sin(dtheta / 2.0) ** 2 / dtheta
    s = v * dt
    c, sn = math.cos(theta), math.sin(theta)
    return s * (k_par * c - k_perp * sn), s * (k_par * sn + k_perp * c)


class OccupancyGrid:
    """Binary raster of the cleaning area: 1 = free/inside, 0 = occupied/outside.

    Cell (col i, row j) covers [ox + i*res, ox + (i+1)*res] x [oy + j*res, ...].
    ``cells`` is indexed ``cells[j, i]``.
    """

    def __init__(self, cells: np.ndarray, resolution: float, origin: tuple[float, float]):
        self.cells = np.asarray(cells, dtype=np.uint8)
        if self.cells.ndim != 2 or self.cells.size == 0:
            raise ValueError("grid must be a nonempty 2-D array")
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @classmethod
    def from_polygon(cls, boundary: Sequence[tuple[float, float]], resolution: float = 0.25) -> OccupancyGrid:
        """Rasterize a boundary polygon; cells touched by an edge are stamped 0."""
        poly = np.asarray(boundary, dtype=float)
        if poly.ndim != 2 or len(poly) < 3:
            raise ValueError("boundary needs at least 3 vertices")
        res = float(resolution)
        # axis-aligned edges at the bbox then run through cell centers
        ox, oy = poly.min(axis=0) - 1.5 * res
        xmax, ymax = poly.max(axis=0)
        width = int(math.ceil((xmax - ox) / res)) + 2
        height = int(math.ceil((ymax - oy) / res)) + 2
        ii, jj = np.meshgrid(np.arange(width), np.arange(height))
        cx = ox + (ii + 0.5) * res
        cy = oy + (jj + 0.5) * res
        inside = shapely.contains_xy(shapely.Polygon(poly), cx, cy)
        cells = inside.astype(np.uint8)
        grid = cls(cells, res, (ox, oy))
        n = len(poly)
        for k in range(n):
            (x0, y0), (x1, y1) = poly[k], poly[(k + 1) % n]
            for i, j in grid.segment_cells(x0, y0, x1, y1):
                if 0 <= i < width and 0 <= j < height:
                    cells[j, i] = 0
        return grid

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (
            int(math.floor((x - self.origin[0]) / self.resolution)),
            int(math.floor((y - self.origin[1]) / self.resolution)),
        )

    def value(self, i: int, j: int) -> int:
        if 0 <= i < self.width and 0 <= j < self.height:
            return int(self.cells[j, i])
        return 0

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        r = self.resolution
        return self.origin[0] + (i + 0.5) * r, self.origin[1] + (j + 0.5) * r

    def segment_cells(self, x0: float, y0: float, x1: float, y1: float) -> list[tuple[int, int]]:
        """Every cell whose closed square meets the closed segment (supercover)."""
        r = self.resolution
        gx0, gy0 = (x0 - self.origin[0]) / r, (y0 - self.origin[1]) / r
        gx1, gy1 = (x1 - self.origin[0]) / r, (y1 - self.origin[1]) / r
        if gx0 > gx1:
            gx0, gy0, gx1, gy1 = gx1, gy1, gx0, gy0
        out = []
        if gx0 == gx1:
            ylo, yhi = min(gy0, gy1), max(gy0, gy1)
            for i in range(math.ceil(gx0) - 1, math.floor(gx0) + 1):
                for j in range(math.ceil(ylo) - 1, math.floor(yhi) + 1):
                    out.append((i, j))
            return out
        slope = (gy1 - gy0) / (gx1 - gx0)
        for i in range(math.ceil(gx0) - 1, math.floor(gx1) + 1):
            xa = max(float(i), gx0)
            xb = min(float(i + 1), gx1)
            ya = gy0 if xa == gx0 else gy0 + (xa - gx0) * slope
            yb = gy1 if xb == gx1 else gy0 + (xb - gx0) * slope
            if ya > yb:
                ya, yb = yb, ya
            for j in range(math.ceil(ya) - 1, math.floor(yb) + 1):
                out.append((i, j))
        return out

    def free_centroid(self) -> tuple[float, float]:
        jj, ii = np.nonzero(self.cells)
        if len(ii) == 0:
            raise ValueError("grid has no free cells")
        r = self.resolution
        return (
            float(self.origin[0] + (ii.mean() + 0.5) * r),
            float(self.origin[1] + (jj.mean() + 0.5) * r),
        )

    def to_pgm(self) -> str:
        """ASCII PGM (P2) dump, top row = max y."""
        lines = ["P2", f"{self.width} {self.height}", "1"]
        for row in self.cells[::-1]:
            lines.append(" ".join(str(int(c)) for c in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_pgm(cls, text: str, resolution: float, origin: tuple[float, float]) -> OccupancyGrid:
        tokens = [t for line in text.splitlines() if not line.startswith("#") for t in line.split()]
        if tokens[0] != "P2":
            raise ValueError("not an ASCII PGM")
        w, h = int(tokens[1]), int(tokens[2])
        vals = np.array([int(t) for t in tokens[4 : 4 + w * h]], dtype=np.uint8)
        return cls(vals.reshape(h, w)[::-1], resolution, origin)


def is_inside_map(grid: OccupancyGrid, pose: Pose2D) -> bool:
    i, j = grid.cell_of(pose.x, pose.y)
    return grid.value(i, j) == 1


def ray_cells(grid: OccupancyGrid, pose: Pose2D, lookahead: float) -> list[tuple[int, int]]:
    """Cells under the heading ray, excluding the cell the robot stands in."""
    x1 = pose.x + lookahead * math.cos(pose.theta)
    y1 = pose.y + lookahead * math.sin(pose.theta)
    start = grid.cell_of(pose.x, pose.y)
    return [c for c in grid.segment_cells(pose.x, pose.y, x1, y1) if c != start]


def ray_free(grid: OccupancyGrid, pose: Pose2D, lookahead: float) -> bool:
    if lookahead <= 0:
        raise ValueError("lookahead must be > 0")
    return all(grid.value(i, j) == 1 for i, j in ray_cells(grid, pose, lookahead))


def _ray_polygon_distance(px: float, py: float, theta: float, poly: np.ndarray) -> float:
    """Distance along the ray to the first polygon edge crossing (inf if none)."""
    dx, dy = math.cos(theta), math.sin(theta)
    a = poly
    b = np.roll(poly, -1, axis=0)
    ex, ey = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    denom = dx * ey - dy * ex
    wx, wy = a[:, 0] - px, a[:, 1] - py
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (wx * ey - wy * ex) / denom
        u = (wx * dy - wy * dx) / denom
    ok = (denom != 0) & (t >= 0) & (u >= 0) & (u <= 1)
    return float(t[ok].min()) if ok.any() else math.inf


@dataclass
class World:
    """Ground-truth simulation state."""

    boundary: np.ndarray
    grid: OccupancyGrid
    objects: list[WorldObject]
    robot: RobotState
    v_max: float = 0.5
    omega_max: float = 1.0
    robot_radius: float = 0.2
    us_max_range: float = 3.0
    us_sigma: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    time: float = 0.0
    last_contact: str | None = None

    def __post_init__(self):
        self.boundary = np.asarray(self.boundary, dtype=float)
        self._boundary_poly = shapely.Polygon(self.boundary)
        shapely.prepare(self._boundary_poly)

    @property
    def boundary_polygon(self) -> shapely.Polygon:
        return self._boundary_poly

    def contains(self, x: float, y: float) -> bool:
        return bool(shapely.contains_xy(self._boundary_poly, x, y))

    def active_objects(self) -> list[WorldObject]:
        return [o for o in self.objects if not o.picked]

    def object_by_id(self, obj_id: str) -> WorldObject | None:
        for o in self.objects:
            if o.id == obj_id:
                return o
        return None

    def front_point(self, pose: Pose2D | None = None) -> tuple[float, float]:
        p = pose or self.robot.pose
        return (p.x + self.robot_radius * math.cos(p.theta), p.y + self.robot_radius * math.sin(p.theta))

    def clamp(self, cmd: tuple[float, float]) -> tuple[float, float]:
        v = min(max(float(cmd[0]), -self.v_max), self.v_max)
        w = min(max(float(cmd[1]), -self.omega_max), self.omega_max)
        return v, w

    def _contact(self, pose: Pose2D) -> WorldObject | None:
        for o in self.objects:
            if o.picked:
                continue
            d = math.hypot(o.center[0] - pose.x, o.center[1] - pose.y)
            if d < self.robot_radius + o.footprint_radius:
                return o
        return None

    def step(self, cmd: tuple[float, float], dt: float) -> tuple[tuple[float, float], WorldObject | None]:
        """Apply a clamped command; translation is refused on footprint contact.

        Returns the executed command and the contacted object (if any).
        """
        v, w = self.clamp(cmd)
        nxt = step_kinematics(self.robot, (v, w), dt)
        hit = self._contact(nxt.pose) if v != 0.0 else None
        if hit is not None:
            before = math.hypot(hit.center[0] - self.robot.pose.x, hit.center[1] - self.robot.pose.y)
            after = math.hypot(hit.center[0] - nxt.pose.x, hit.center[1] - nxt.pose.y)
            if after < before:
                v = 0.0
                nxt = step_kinematics(self.robot, (0.0, w), dt)
            else:
                hit = None
        self.robot = nxt
        self.time += dt
        self.last_contact = hit.id if hit is not None else None
        return (v, w), hit

    def pick(self, obj_id: str) -> None:
        obj = self.object_by_id(obj_id)
        if obj is None or obj.picked:
            raise KeyError(f"no pickable object {obj_id!r}")
        obj.picked = True
        self.robot = replace(self.robot, carried_count=self.robot.carried_count + 1)


def ultrasonic_range(world: World, pose: Pose2D | None = None, *, include_boundary: bool = True) -> float:
    """Free straight-line travel before the robot body touches something, saturated, plus noise.

    An object counts when the robot body, moving straight along its heading,
    would touch the object's footprint; the boundary counts (when inside it)
    at the point where the heading ray leaves the polygon.
    """
    p = pose or world.robot.pose
    best = world.us_max_range
    rr = world.robot_radius
    c, s = math.cos(p.theta), math.sin(p.theta)
    for o in world.objects:
        if o.picked:
            continue
        dx, dy = o.center[0] - p.x, o.center[1] - p.y
        along = c * dx + s * dy
        lateral = -s * dx + c * dy
        reach = rr + o.footprint_radius
        if abs(lateral) >= reach or along <= 0:
            continue
        travel = along - math.sqrt(reach * reach - lateral * lateral)
        best = min(best, max(travel, 0.0))
    if include_boundary and world.contains(p.x, p.y):
        d = _ray_polygon_distance(p.x, p.y, p.theta, world.boundary) - rr
        best = min(best, max(d, 0.0))
    if world.us_sigma > 0:
        best += float(world.rng.normal(0.0, world.us_sigma))
    return min(max(best, 0.0), world.us_max_range)


def points_in_polygon(poly: Iterable[tuple[float, float]], xs, ys) -> np.ndarray:
    return shapely.contains_xy(shapely.Polygon(list(poly)), xs, ys)
