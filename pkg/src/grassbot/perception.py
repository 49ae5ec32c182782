"""Segmentation oracle and stochastic garbage classifier.

The ground contour and object boxes are rendered from world geometry through
the camera; recognition samples a confusion matrix built from measured
per-class error rates.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import shapely

from .camera import CameraModel, GroundHomography, build_homography
from .world import GARBAGE_CLASSES, NONGARBAGE_CLASSES, Pose2D, World

NON_GARBAGE = "non_garbage"
PREDICTED_CLASSES = GARBAGE_CLASSES + (NON_GARBAGE,)


@dataclass(frozen=True)
class ObjectBox:
    object_id: str
    u_tl: int
    v_tl: int
    u_br: int
    v_br: int

    def __post_init__(self):
        if self.u_tl > self.u_br or self.v_tl > self.v_br:
            raise ValueError(f"box {self.object_id}: corners out of order")


@dataclass
class SegmentationFrame:
    ground_contour: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    object_boxes: list[ObjectBox] = field(default_factory=list)
    width: int = 640
    height: int = 480

    def __post_init__(self):
        self.ground_contour = np.asarray(self.ground_contour, dtype=float).reshape(-1, 2)

    def box_for(self, object_id: str) -> ObjectBox | None:
        for b in self.object_boxes:
            if b.object_id == object_id:
                return b
        return None


class RenderedFrame(SegmentationFrame):
    """Frame whose ground contour is only rasterized when first read."""

    def __init__(self, contour_fn, object_boxes: list[ObjectBox], width: int, height: int):
        self._contour_fn = contour_fn
        self._contour = None
        self.object_boxes = object_boxes
        self.width = width
        self.height = height

    @property
    def ground_contour(self) -> np.ndarray:
        if self._contour is None:
            self._contour = np.asarray(self._contour_fn(), dtype=float).reshape(-1, 2)
        return self._contour


def locate_garbage(box: ObjectBox) -> tuple[int, int]:
    """Box center with integer division, (u_co, v_co)."""
    return (box.u_tl + box.u_br) // 2, (box.v_tl + box.v_br) // 2


def select_closest_object(frame: SegmentationFrame, exclude: Iterable[str] = ()) -> ObjectBox | None:
    """Box with the lowest bottom edge; ties by horizontal distance to u_cl."""
    skip = set(exclude)
    u_cl = frame.width // 2 - 1
    candidates = [b for b in frame.object_boxes if b.object_id not in skip]
    if not candidates:
        return None
    return min(candidates, key=lambda b: (-b.v_br, abs(locate_garbage(b)[0] - u_cl), b.object_id))


class Renderer:
    """Caches the camera's ground footprint in the robot frame."""

    def __init__(self, cam: CameraModel, hom: GroundHomography | None = None, arc_segments: int = 32):
        self.cam = cam
        self.hom = hom or build_homography(cam)
        w, h = cam.width, cam.height
        corners = [(-0.5, -0.5), (w - 0.5, -0.5), (w - 0.5, h - 0.5), (-0.5, h - 0.5)]
        footprint = shapely.Polygon(self.hom.backproject(corners))
        half = cam.hfov / 2.0
        arc = np.linspace(-half, half, arc_segments + 1)
        sector = shapely.Polygon(
            [(0.0, 0.0)] + [(cam.max_range * math.cos(a), cam.max_range * math.sin(a)) for a in arc]
        )
        view = footprint.intersection(sector)
        self.view = np.asarray(view.exterior.coords)[:-1]
        self._circle = np.linspace(0.0, 2.0 * math.pi, 24, endpoint=False)

    def view_polygon(self, pose: Pose2D) -> np.ndarray:
        """Visible ground region (ignoring the map) in world coordinates."""
        x, y = pose.to_world_frame(self.view[:, 0], self.view[:, 1])
        return np.column_stack([x, y])

    def ground_contour(self, world: World, pose: Pose2D) -> np.ndarray:
        view = shapely.Polygon(self.view_polygon(pose))
        poly = world.boundary_polygon
        if poly.contains(view):
            region = view
        else:
            region = view.intersection(poly)
            if region.is_empty:
                return np.zeros((0, 2))
            if region.geom_type != "Polygon":
                parts = [g for g in getattr(region, "geoms", []) if g.geom_type == "Polygon"]
                if not parts:
                    return np.zeros((0, 2))
                region = max(parts, key=lambda g: g.area)
        pts = np.asarray(region.exterior.coords)[:-1]
        rx, ry = pose.to_robot_frame(pts[:, 0], pts[:, 1])
        uv = self.hom.project(np.column_stack([rx, ry]))
        uv[:, 0] = np.clip(uv[:, 0], -0.5, self.cam.width - 0.5)
        uv[:, 1] = np.clip(uv[:, 1], -0.5, self.cam.height - 0.5)
        return uv

    def object_box(self, obj, pose: Pose2D) -> ObjectBox | None:
        cam = self.cam
        a, b = pose.to_robot_frame(obj.center[0], obj.center[1])
        a, b = float(a), float(b)
        if a <= 0.0 or math.hypot(a, b) > cam.max_range or abs(math.atan2(b, a)) > cam.hfov / 2.0:
            return None
        r = obj.footprint_radius
        ring_x = a + r * np.cos(self._circle)
        ring_y = b + r * np.sin(self._circle)
        n = len(self._circle)
        pts = np.column_stack([
            np.concatenate([ring_x, ring_x]),
            np.concatenate([ring_y, ring_y]),
            np.concatenate([np.zeros(n), np.full(n, obj.height)]),
        ])
        u, v, zc = cam.project_points(pts)
        if np.any(zc <= 1e-6):
            return None
        u0 = int(math.floor(u.min() + 0.5))
        u1 = int(math.floor(u.max() + 0.5))
        v0 = int(math.floor(v.min() + 0.5))
        v1 = int(math.floor(v.max() + 0.5))
        if u0 > cam.width - 1 or u1 < 0 or v0 > cam.height - 1 or v1 < 0:
            return None
        return ObjectBox(
            obj.id,
            max(u0, 0), max(v0, 0),
            min(u1, cam.width - 1), min(v1, cam.height - 1),
        )

    def render(self, world: World, pose: Pose2D) -> SegmentationFrame:
        cam = self.cam
        if not world.contains(pose.x, pose.y):
            return SegmentationFrame(np.zeros((0, 2)), [], cam.width, cam.height)
        boxes = []
        for obj in world.objects:
            if obj.picked:
                continue
            box = self.object_box(obj, pose)
            if box is not None:
                boxes.append(box)
        return RenderedFrame(lambda: self.ground_contour(world, pose), boxes, cam.width, cam.height)


@lru_cache(maxsize=8)
def _renderer(cam: CameraModel) -> Renderer:
    return Renderer(cam)


def render_segmentation(world: World, robot_pose: Pose2D, cam: CameraModel,
                        hom: GroundHomography | None = None) -> SegmentationFrame:
    """Ideal segmentation of the scene seen from ``robot_pose``.

    The homography always follows from ``cam``; ``hom`` is accepted for callers
    that already hold one.
    """
    return _renderer(cam).render(world, robot_pose)


# Per-class top-1 error (%) on the garbage test set.
GARBAGE_ERROR_PCT = {
    "bottle": 8.13,
    "can": 9.89,
    "carton": 9.06,
    "plastic_bag": 14.32,
    "waste_paper": 22.3,
}

# Probability that each non-garbage object is predicted as each garbage class.
NONGARBAGE_CONFUSION = {
    "cup": (0.153, 0.184, 0.012, 0.009, 0.003),
    "book": (0.002, 0.010, 0.136, 0.005, 0.012),
    "shoes": (0.005, 0.023, 0.038, 0.009, 0.003),
    "phone": (0.007, 0.011, 0.065, 0.004, 0.008),
    "bag": (0.007, 0.013, 0.009, 0.032, 0.004),
    "wallet": (0.010, 0.023, 0.089, 0.012, 0.009),
}


def default_garbage_matrix() -> np.ndarray:
    m = np.zeros((5, 6))
    for i, cls in enumerate(GARBAGE_CLASSES):
        err = GARBAGE_ERROR_PCT[cls] / 100.0
        m[i, :] = err / 5.0
        m[i, i] = 1.0 - err
    return m


def default_nongarbage_matrix() -> np.ndarray:
    m = np.zeros((6, 6))
    for i, cls in enumerate(NONGARBAGE_CLASSES):
        m[i, :5] = NONGARBAGE_CONFUSION[cls]
        m[i, 5] = 1.0 - sum(NONGARBAGE_CONFUSION[cls])
    return m


@dataclass(frozen=True)
class Classification:
    predicted_class: str
    confidence: float
    is_garbage: bool


@dataclass
class ConfusionModel:
    garbage_matrix: np.ndarray = field(default_factory=default_garbage_matrix)
    nongarbage_matrix: np.ndarray = field(default_factory=default_nongarbage_matrix)
    threshold: float = 0.5
    match_band: tuple[float, float] = (0.6, 1.0)
    mismatch_band: tuple[float, float] = (0.3, 0.9)

    def __post_init__(self):
        self.garbage_matrix = np.asarray(self.garbage_matrix, dtype=float)
        self.nongarbage_matrix = np.asarray(self.nongarbage_matrix, dtype=float)
        if self.garbage_matrix.shape != (5, 6) or self.nongarbage_matrix.shape != (6, 6):
            raise ValueError("confusion matrices must be 5x6 (garbage) and 6x6 (non-garbage)")
        for name, m in (("garbage", self.garbage_matrix), ("non-garbage", self.nongarbage_matrix)):
            if np.any(m < 0):
                raise ValueError(f"{name} matrix has negative entries")
            if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError(f"{name} matrix rows must sum to 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be a probability")
        self._cum = {}
        for i, cls in enumerate(GARBAGE_CLASSES):
            self._cum[cls] = np.cumsum(self.garbage_matrix[i])
        for i, cls in enumerate(NONGARBAGE_CLASSES):
            self._cum[cls] = np.cumsum(self.nongarbage_matrix[i])

    @classmethod
    def identity(cls, threshold: float = 0.5) -> ConfusionModel:
        g = np.zeros((5, 6))
        g[:, :5] = np.eye(5)
        n = np.zeros((6, 6))
        n[:, 5] = 1.0
        return cls(g, n, threshold)

    def row(self, true_class: str) -> np.ndarray:
        if true_class in GARBAGE_CLASSES:
            return self.garbage_matrix[GARBAGE_CLASSES.index(true_class)]
        if true_class in NONGARBAGE_CLASSES:
            return self.nongarbage_matrix[NONGARBAGE_CLASSES.index(true_class)]
        raise ValueError(f"unknown class {true_class!r}")

    def classify(self, true_class: str, rng: np.random.Generator) -> Classification:
        cum = self._cum.get(true_class)
        if cum is None:
            raise ValueError(f"unknown class {true_class!r}")
        k = int(np.searchsorted(cum, rng.random(), side="right"))
        predicted = PREDICTED_CLASSES[min(k, 5)]
        if true_class in GARBAGE_CLASSES:
            match = predicted == true_class
        else:
            match = predicted == NON_GARBAGE
        lo, hi = self.match_band if match else self.mismatch_band
        confidence = float(rng.uniform(lo, hi))
        is_garbage = predicted != NON_GARBAGE and confidence >= self.threshold
        return Classification(predicted, confidence, is_garbage)


def classify(true_class: str, rng: np.random.Generator, model: ConfusionModel | None = None) -> Classification:
    return (model or ConfusionModel()).classify(true_class, rng)


def _parse_pairs(text: str) -> list[tuple[float, float]]:
    out = []
    for chunk in text.replace(";", ",").split(","):
        chunk = chunk.strip()
        if chunk:
            a, b = chunk.split()
            out.append((float(a), float(b)))
    return out


def load_frame(path: str | Path) -> SegmentationFrame:
    """Read a frame file: [frame] width_px/height_px/contour_px, [boxes] id = u_tl v_tl u_br v_br."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(Path(path).read_text())
        sec = cp["frame"]
        width = sec.getint("width_px", 640)
        height = sec.getint("height_px", 480)
        contour = _parse_pairs(sec.get("contour_px", ""))
        boxes = []
        if cp.has_section("boxes"):
            for obj_id, val in cp["boxes"].items():
                u0, v0, u1, v1 = (int(t) for t in val.split())
                boxes.append(ObjectBox(obj_id, u0, v0, u1, v1))
    except (configparser.Error, KeyError, ValueError) as e:
        raise ValueError(f"{path}: malformed frame file ({e})") from None
    return SegmentationFrame(np.array(contour).reshape(-1, 2), boxes, width, height)


def save_frame(frame: SegmentationFrame, path: str | Path) -> None:
    lines = [
        "[frame]",
        f"width_px = {frame.width}",
        f"height_px = {frame.height}",
        "# ground contour vertices as 'u v' pixel pairs",
        "contour_px = " + ", ".join(f"{u!r} {v!r}" for u, v in frame.ground_contour.tolist()),
        "",
        "[boxes]",
        "# object_id = u_tl v_tl u_br v_br (pixels)",
    ]
    lines += [f"{b.object_id} = {b.u_tl} {b.v_tl} {b.u_br} {b.v_br}" for b in frame.object_boxes]
    Path(path).write_text("\n".join(lines) + "\n")
