"""Scenario configuration: field, robot, camera, noise and objects.

Scenario files are INI-style with the unit in every key name::

    [scenario]
    mode = planned
    seed = 7
    dt_s = 0.1
    resolution_m = 0.25
    boundary_m = 0 0, 30 0, 30 25, 0 25
    start_x_m = 2.0
    start_y_m = 2.0
    start_theta_rad = 0.0

    [objects]
    g1 = bottle 5.0 4.0

Missing sections fall back to defaults. Without an [objects] section the
objects are placed at random from ``garbage_count`` and ``distractor_count``
in [placement].
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import shapely

from .camera import CameraModel
from .localization import SensorNoise
from .perception import ConfusionModel
from .world import (
    CLASS_SHAPES,
    GARBAGE_CLASSES,
    NONGARBAGE_CLASSES,
    OBJECT_CLASSES,
    OccupancyGrid,
    Pose2D,
    RobotState,
    World,
    WorldObject,
)

PLAYGROUND = [(0.0, 0.0), (85.4, 0.0), (85.4, 73.0), (0.0, 73.0)]
DESK_FIELD = [(0.0, 0.0), (30.0, 0.0), (30.0, 25.0), (0.0, 25.0)]


class ScenarioError(ValueError):
    """Invalid scenario; the message names the offending field."""


def polygon_area(boundary) -> float:
    return float(shapely.Polygon(boundary).area)


def density_equivalent(count: int, boundary, reference=PLAYGROUND) -> int:
    """Object count giving the same density on ``boundary`` as ``count`` on ``reference``."""
    return max(1, round(count * polygon_area(boundary) / polygon_area(reference)))


@dataclass
class ScenarioConfig:
    boundary: list[tuple[float, float]] = field(default_factory=lambda: list(DESK_FIELD))
    resolution: float = 0.25
    objects: list[WorldObject] | None = None
    garbage_count: int = 2
    distractor_count: int | None = None
    placement_seed: int | None = None
    placement_margin: float = 1.0
    start: tuple[float, float, float] = (2.0, 2.0, 0.0)
    v_max: float = 0.5
    omega_max: float = 1.0
    camera: CameraModel = field(default_factory=CameraModel.default)
    classifier: str = "default"
    threshold: float = 0.5
    # per-class confusion rows overriding the chosen model, six probabilities each
    confusion_rows: dict[str, tuple[float, ...]] = field(default_factory=dict)
    match_band: tuple[float, float] = (0.6, 1.0)
    mismatch_band: tuple[float, float] = (0.3, 0.9)
    noise: SensorNoise = field(default_factory=SensorNoise)
    sigma_us: float = 0.0
    dt: float = 0.1
    mode: str = "planned"
    seed: int = 0
    lane_spacing: float | None = None

    @property
    def n_distractors(self) -> int:
        if self.distractor_count is not None:
            return self.distractor_count
        return round(self.garbage_count * 0.1 / 0.9)

    def with_overrides(self, **kw) -> ScenarioConfig:
        return replace(self, **kw)

    def confusion_model(self) -> ConfusionModel:
        base = ConfusionModel.identity(self.threshold) if self.classifier == "identity" else ConfusionModel()
        g, n = base.garbage_matrix.copy(), base.nongarbage_matrix.copy()
        for cls, row in self.confusion_rows.items():
            if cls in GARBAGE_CLASSES:
                g[GARBAGE_CLASSES.index(cls)] = row
            else:
                n[NONGARBAGE_CLASSES.index(cls)] = row
        return ConfusionModel(g, n, self.threshold, tuple(self.match_band), tuple(self.mismatch_band))

    def validate(self) -> None:
        if len(self.boundary) < 3:
            raise ScenarioError("boundary_m: need at least 3 vertices")
        poly = shapely.Polygon(self.boundary)
        if not poly.is_valid or poly.area <= 0:
            raise ScenarioError("boundary_m: polygon is not simple")
        if self.resolution <= 0:
            raise ScenarioError("resolution_m must be > 0")
        if self.dt <= 0:
            raise ScenarioError("dt_s must be > 0")
        if self.v_max <= 0 or self.omega_max <= 0:
            raise ScenarioError("v_max_mps and omega_max_radps must be > 0")
        if self.mode not in ("planned", "random"):
            raise ScenarioError(f"mode: expected planned or random, got {self.mode!r}")
        if self.classifier not in ("default", "identity"):
            raise ScenarioError(f"classifier.model: expected default or identity, got {self.classifier!r}")
        if not 0 <= self.threshold <= 1:
            raise ScenarioError("classifier.threshold must lie in [0, 1]")
        for cls, row in self.confusion_rows.items():
            if cls not in OBJECT_CLASSES:
                raise ScenarioError(f"classifier.row.{cls}: unknown class")
            if len(row) != 6:
                raise ScenarioError(f"classifier.row.{cls}: expected 6 probabilities")
        for name, (lo, hi) in (("match_band", self.match_band), ("mismatch_band", self.mismatch_band)):
            if not 0 <= lo <= hi <= 1:
                raise ScenarioError(f"classifier.{name}: need 0 <= low <= high <= 1")
        try:
            self.confusion_model()
        except ValueError as e:
            raise ScenarioError(f"classifier: {e}") from None
        if self.garbage_count < 0 or (self.distractor_count or 0) < 0:
            raise ScenarioError("placement counts must be >= 0")
        if self.sigma_us < 0:
            raise ScenarioError("sigma_us_m must be >= 0")
        ticks = round(1.4 / self.dt)
        if abs(ticks * self.dt - 1.4) > 1e-9:
            raise ScenarioError("dt_s must divide the 1.4 s pickup time")
        try:
            self.camera.validate()
        except ValueError as e:
            raise ScenarioError(f"camera: {e}") from None
        if not poly.contains(shapely.Point(self.start[0], self.start[1])):
            raise ScenarioError("start_x_m/start_y_m: start pose lies outside the boundary")
        if self.objects is not None:
            seen = set()
            for o in self.objects:
                if o.id in seen:
                    raise ScenarioError(f"objects: duplicate object id {o.id}")
                seen.add(o.id)
                if not poly.contains(shapely.Point(*o.center)):
                    raise ScenarioError(f"objects: object {o.id} lies outside the boundary")

    def place_objects(self, rng: np.random.Generator) -> list[WorldObject]:
        """Uniform placement inside the boundary shrunk by the margin, kept apart from each other and the start."""
        poly = shapely.Polygon(self.boundary)
        inner = poly.buffer(-self.placement_margin)
        if inner.is_empty:
            inner = poly
        shapely.prepare(inner)
        x0, y0, x1, y1 = inner.bounds
        classes = [GARBAGE_CLASSES[int(rng.integers(len(GARBAGE_CLASSES)))] for _ in range(self.garbage_count)]
        classes += [NONGARBAGE_CLASSES[int(rng.integers(len(NONGARBAGE_CLASSES)))] for _ in range(self.n_distractors)]
        placed: list[WorldObject] = []
        for k, cls in enumerate(classes):
            prefix = "g" if cls in GARBAGE_CLASSES else "d"
            for _ in range(10000):
                x, y = float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1))
                if not shapely.contains_xy(inner, x, y):
                    continue
                if math.hypot(x - self.start[0], y - self.start[1]) < 1.5:
                    continue
                if any(math.hypot(x - o.center[0], y - o.center[1]) < 1.0 for o in placed):
                    continue
                break
            else:
                raise ScenarioError("placement: field too crowded for the requested object count")
            placed.append(WorldObject.of_class(f"{prefix}{k + 1}", cls, x, y))
        return placed

    def build_world(self, placement_rng: np.random.Generator, sensor_rng: np.random.Generator) -> World:
        self.validate()
        objects = (
            [replace(o, picked=False) for o in self.objects]
            if self.objects is not None
            else self.place_objects(placement_rng)
        )
        grid = OccupancyGrid.from_polygon(self.boundary, self.resolution)
        return World(
            np.asarray(self.boundary, dtype=float), grid, objects,
            RobotState(Pose2D(*self.start)), self.v_max, self.omega_max,
            us_sigma=self.sigma_us, rng=sensor_rng,
        )


def _pairs(text: str, key: str) -> list[tuple[float, float]]:
    out = []
    for chunk in text.split(","):
        parts = chunk.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise ScenarioError(f"{key}: expected 'a b' pairs, got {chunk.strip()!r}")
        out.append((float(parts[0]), float(parts[1])))
    return out


def _band(text: str) -> tuple[float, float]:
    lo, hi = (float(x) for x in text.split())
    return lo, hi


def _get(section, key, conv, default):
    if section is None or key not in section:
        return default
    try:
        return conv(section[key])
    except ValueError:
        raise ScenarioError(f"{key}: cannot parse {section[key]!r}") from None


def parse_scenario(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ScenarioError(f"syntax: {e}") from None
    s = cp["scenario"] if cp.has_section("scenario") else None
    d = ScenarioConfig()
    cfg = ScenarioConfig(
        boundary=_get(s, "boundary_m", lambda t: _pairs(t, "boundary_m"), d.boundary),
        resolution=_get(s, "resolution_m", float, d.resolution),
        start=(
            _get(s, "start_x_m", float, d.start[0]),
            _get(s, "start_y_m", float, d.start[1]),
            _get(s, "start_theta_rad", float, d.start[2]),
        ),
        v_max=_get(s, "v_max_mps", float, d.v_max),
        omega_max=_get(s, "omega_max_radps", float, d.omega_max),
        dt=_get(s, "dt_s", float, d.dt),
        mode=_get(s, "mode", str.strip, d.mode),
        seed=_get(s, "seed", int, d.seed),
        lane_spacing=_get(s, "lane_spacing_m", float, d.lane_spacing),
    )
    if cp.has_section("camera"):
        c = cp["camera"]
        tilt = _get(c, "tilt_deg", float, None)
        cfg.camera = CameraModel.default(
            width=_get(c, "width_px", int, 640),
            height=_get(c, "height_px", int, 480),
            mount_height=_get(c, "mount_height_m", float, 0.4),
            hfov_deg=_get(c, "hfov_deg", float, 60.0),
            max_range=_get(c, "max_range_m", float, 10.0),
            tilt=None if tilt is None else math.radians(tilt),
        )
    if cp.has_section("noise"):
        n = cp["noise"]
        dn = SensorNoise()
        try:
            cfg.noise = SensorNoise(
                sigma_v=_get(n, "sigma_v_mps", float, dn.sigma_v),
                sigma_omega=_get(n, "sigma_omega_radps", float, dn.sigma_omega),
                sigma_gps=_get(n, "sigma_gps_m", float, dn.sigma_gps),
                gps_period=_get(n, "gps_period_s", float, dn.gps_period),
                outages=_get(n, "outages_s", lambda t: _pairs(t, "outages_s"), []),
            )
        except ValueError as e:
            raise ScenarioError(f"noise: {e}") from None
        cfg.sigma_us = _get(n, "sigma_us_m", float, 0.0)
    if cp.has_section("classifier"):
        c = cp["classifier"]
        cfg.classifier = _get(c, "model", str.strip, "default")
        cfg.threshold = _get(c, "threshold", float, 0.5)
        cfg.match_band = _get(c, "match_band", _band, cfg.match_band)
        cfg.mismatch_band = _get(c, "mismatch_band", _band, cfg.mismatch_band)
        for key in c:
            if key.startswith("row."):
                cfg.confusion_rows[key[4:]] = _get(c, key, lambda t: tuple(float(x) for x in t.split()), ())
    if cp.has_section("placement"):
        p = cp["placement"]
        cfg.garbage_count = _get(p, "garbage_count", int, d.garbage_count)
        cfg.distractor_count = _get(p, "distractor_count", int, None)
        cfg.placement_seed = _get(p, "placement_seed", int, None)
        cfg.placement_margin = _get(p, "margin_m", float, d.placement_margin)
    if cp.has_section("objects"):
        objs = []
        for oid, entry in cp["objects"].items():
            parts = entry.split()
            if len(parts) != 3:
                raise ScenarioError(f"objects: object {oid} needs 'class x_m y_m'")
            if parts[0] not in OBJECT_CLASSES:
                raise ScenarioError(f"objects: object {oid} has unknown class {parts[0]!r}")
            try:
                x, y = float(parts[1]), float(parts[2])
            except ValueError:
                raise ScenarioError(f"objects: object {oid} has a bad position") from None
            objs.append(WorldObject.of_class(oid, parts[0], x, y))
        cfg.objects = objs
        cfg.garbage_count = sum(o.is_garbage for o in objs)
        cfg.distractor_count = len(objs) - cfg.garbage_count
    cfg.validate()
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ScenarioError(f"scenario: cannot read {path}: {e.strerror}") from None
    return parse_scenario(text)


def format_scenario(cfg: ScenarioConfig) -> str:
    cam = cfg.camera
    lines = [
        "[scenario]",
        f"mode = {cfg.mode}",
        f"seed = {cfg.seed}",
        f"dt_s = {cfg.dt!r}",
        f"resolution_m = {cfg.resolution!r}",
        "boundary_m = " + ", ".join(f"{x!r} {y!r}" for x, y in cfg.boundary),
        f"start_x_m = {cfg.start[0]!r}",
        f"start_y_m = {cfg.start[1]!r}",
        f"start_theta_rad = {cfg.start[2]!r}",
        f"v_max_mps = {cfg.v_max!r}",
        f"omega_max_radps = {cfg.omega_max!r}",
    ]
    if cfg.lane_spacing is not None:
        lines.append(f"lane_spacing_m = {cfg.lane_spacing!r}")
    lines += [
        "",
        "[camera]",
        f"width_px = {cam.width}",
        f"height_px = {cam.height}",
        f"hfov_deg = {math.degrees(cam.hfov)!r}",
        f"mount_height_m = {cam.mount_height!r}",
        f"max_range_m = {cam.max_range!r}",
        f"tilt_deg = {math.degrees(cam.tilt)!r}",
        "",
        "[noise]",
        f"sigma_v_mps = {cfg.noise.sigma_v!r}",
        f"sigma_omega_radps = {cfg.noise.sigma_omega!r}",
        f"sigma_gps_m = {cfg.noise.sigma_gps!r}",
        f"gps_period_s = {cfg.noise.gps_period!r}",
        "outages_s = " + ", ".join(f"{a!r} {b!r}" for a, b in cfg.noise.outages),
        f"sigma_us_m = {cfg.sigma_us!r}",
        "",
        "[classifier]",
        f"model = {cfg.classifier}",
        f"threshold = {cfg.threshold!r}",
        f"match_band = {cfg.match_band[0]!r} {cfg.match_band[1]!r}",
        f"mismatch_band = {cfg.mismatch_band[0]!r} {cfg.mismatch_band[1]!r}",
    ]
    lines += [f"row.{cls} = " + " ".join(repr(float(p)) for p in row) for cls, row in cfg.confusion_rows.items()]
    lines += [
        "",
        "[placement]",
        f"garbage_count = {cfg.garbage_count}",
        f"distractor_count = {cfg.n_distractors}",
        f"margin_m = {cfg.placement_margin!r}",
    ]
    if cfg.placement_seed is not None:
        lines.append(f"placement_seed = {cfg.placement_seed}")
    if cfg.objects is not None:
        lines += ["", "[objects]"]
        lines += [f"{o.id} = {o.true_class} {o.center[0]!r} {o.center[1]!r}" for o in cfg.objects]
    return "\n".join(lines) + "\n"


def save_scenario(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(format_scenario(cfg))


def desk_scale(garbage_count: int | None = None, mode: str = "planned", seed: int = 0, **kw) -> ScenarioConfig:
    """30 x 25 m field; default garbage count is density-equivalent to 20 on the playground."""
    if garbage_count is None:
        garbage_count = density_equivalent(20, DESK_FIELD)
    return ScenarioConfig(boundary=list(DESK_FIELD), garbage_count=garbage_count, mode=mode, seed=seed, **kw)


def playground(garbage_count: int = 20, mode: str = "planned", seed: int = 0, **kw) -> ScenarioConfig:
    return ScenarioConfig(boundary=list(PLAYGROUND), garbage_count=garbage_count, mode=mode, seed=seed, **kw)


__all__ = [
    "CLASS_SHAPES", "DESK_FIELD", "PLAYGROUND", "ScenarioConfig", "ScenarioError",
    "density_equivalent", "desk_scale", "format_scenario", "load_scenario", "parse_scenario",
    "playground", "save_scenario",
]
