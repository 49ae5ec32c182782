"""Pinhole camera over a flat ground plane, Hough line fitting and the
image-line -> ground-heading conversion.

Robot/ground frame: x forward, y left, z up, angles CCW. Camera frame: x right,
y down, z along the optical axis. Pixel (u, v) has its center at integer
coordinates and covers [u - 0.5, u + 0.5].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class DirectionError(ValueError):
    """No usable heading could be derived from the image."""


class InsufficientPoints(DirectionError):
    def __init__(self, msg: str = "insufficient points"):
        super().__init__(msg)


class NoForwardDirection(DirectionError):
    def __init__(self, msg: str = "no forward direction"):
        super().__init__(msg)


@dataclass(frozen=True)
class CameraModel:
    width: int = 640
    height: int = 480
    fx: float = 0.0
    fy: float = 0.0
    cx: float = 0.0
    cy: float = 0.0
    mount_height: float = 0.4
    tilt: float = 0.0
    hfov: float = math.radians(60.0)
    max_range: float = 10.0

    @classmethod
    def default(cls, width: int = 640, height: int = 480, mount_height: float = 0.4,
                hfov_deg: float = 60.0, max_range: float = 10.0, tilt: float | None = None) -> CameraModel:
        """Centered pinhole with fx = fy from the horizontal FOV.

        Without an explicit tilt, the camera is pitched so the top image row
        meets the ground at ``max_range`` on the optical axis.
        """
        hfov = math.radians(hfov_deg)
        fx = (width / 2.0) / math.tan(hfov / 2.0)
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        if tilt is None:
            tilt = math.atan2(mount_height, max_range) + math.atan2(cy, fx)
        return cls(width, height, fx, fx, cx, cy, mount_height, tilt, hfov, max_range)

    @property
    def bottom_center(self) -> tuple[int, int]:
        """(u_cl, v_cl) = (w/2 - 1, h - 1)."""
        return self.width // 2 - 1, self.height - 1

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not 0.0 < self.tilt < math.pi / 2:
            raise ValueError("tilt must lie in (0, pi/2); a camera parallel to the ground has no ground homography")
        if self.mount_height <= 0:
            raise ValueError("mount height must be positive")
        expected = 2.0 * math.atan((self.width / 2.0) / self.fx)
        if abs(expected - self.hfov) > 1e-6:
            raise ValueError("horizontal FOV inconsistent with fx and width")

    def project_points(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Project robot-frame 3-D points (N, 3); returns u, v and camera depth."""
        pts = np.asarray(pts, dtype=float)
        X, Y, Z = pts[:, 0], pts[:, 1], pts[:, 2] - self.mount_height
        st, ct = math.sin(self.tilt), math.cos(self.tilt)
        xc = -Y
        yc = -X * st - Z * ct
        zc = X * ct - Z * st
        return self.fx * xc / zc + self.cx, self.fy * yc / zc + self.cy, zc


@dataclass(frozen=True)
class GroundHomography:
    H: np.ndarray
    H_inv: np.ndarray

    def project(self, ground_xy) -> np.ndarray:
        """Ground (x, y) points -> pixel (u, v)."""
        p = np.atleast_2d(np.asarray(ground_xy, dtype=float))
        q = np.column_stack([p, np.ones(len(p))]) @ self.H.T
        return q[:, :2] / q[:, 2:3]

    def backproject(self, pixels) -> np.ndarray:
        """Pixel (u, v) -> ground (x, y) in the robot frame."""
        p = np.atleast_2d(np.asarray(pixels, dtype=float))
        q = np.column_stack([p, np.ones(len(p))]) @ self.H_inv.T
        return q[:, :2] / q[:, 2:3]


def build_homography(cam: CameraModel) -> GroundHomography:
    cam.validate()
    st, ct = math.sin(cam.tilt), math.cos(cam.tilt)
    h = cam.mount_height
    H = np.array([
        [cam.cx * ct, -cam.fx, cam.cx * h * st],
        [cam.cy * ct - cam.fy * st, 0.0, cam.fy * h * ct + cam.cy * h * st],
        [ct, 0.0, h * st],
    ])
    if abs(np.linalg.det(H)) < 1e-12:
        raise ValueError("degenerate homography")
    H_inv = np.linalg.inv(H)
    if not np.allclose(H @ H_inv, np.eye(3), atol=1e-9, rtol=0):
        raise ValueError("homography inverse is ill-conditioned")
    return GroundHomography(H, H_inv)


@dataclass(frozen=True)
class PolarLine:
    """u*cos(theta) + v*sin(theta) = rho, theta in [0, pi)."""

    rho: float
    theta_img: float

    def u_at(self, v: float) -> float:
        c = math.cos(self.theta_img)
        if abs(c) < 1e-12:
            raise NoForwardDirection()
        return (self.rho - v * math.sin(self.theta_img)) / c


THETA_STEP = math.radians(1.0)
RHO_STEP = 2.0


@lru_cache(maxsize=8)
def _trig_table(theta_step: float) -> tuple[np.ndarray, np.ndarray]:
    n = int(round(math.pi / theta_step))
    thetas = np.arange(n) * theta_step
    return thetas, np.vstack([np.cos(thetas), np.sin(thetas)])


def hough_line(points, weights=None, *, image_size: tuple[int, int] = (640, 480),
               theta_step: float = THETA_STEP, rho_step: float = RHO_STEP) -> PolarLine:
    """Strongest line through ``points`` by accumulator voting.

    Ties go to the smallest theta, then the smallest rho.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if weights is None:
        pts = np.unique(pts, axis=0)
        w = np.ones(len(pts))
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if len(w) != len(pts):
            raise ValueError("one weight per point")
        pts, inv = np.unique(pts, axis=0, return_inverse=True)
        w = np.bincount(inv.reshape(-1), weights=w, minlength=len(pts))
    if len(pts) < 2:
        raise InsufficientPoints()
    thetas, trig = _trig_table(theta_step)
    n_theta = len(thetas)
    # rho bins are centered on multiples of rho_step
    rho_max = max(math.hypot(*image_size), float(np.abs(pts).sum(axis=1).max()))
    offset = int(math.ceil(rho_max / rho_step)) + 1
    n_rho = 2 * offset + 1
    rhos = pts @ trig
    idx = np.floor(rhos / rho_step + 0.5).astype(np.int64) + offset
    flat = (np.arange(n_theta) * n_rho + idx).reshape(-1)
    acc = np.bincount(flat, weights=np.broadcast_to(w[:, None], idx.shape).reshape(-1), minlength=n_theta * n_rho)
    best = int(np.argmax(acc))
    ti, ri = divmod(best, n_rho)
    return PolarLine((ri - offset) * rho_step, float(thetas[ti]))


def line_endpoints(line: PolarLine, cam: CameraModel) -> tuple[tuple[float, float], tuple[float, float]]:
    """Near point A on row h-1 and far point B on row h/2."""
    v_near = cam.height - 1
    v_far = cam.height // 2
    ua, ub = line.u_at(v_near), line.u_at(v_far)
    if not (0.0 <= ua <= cam.width - 1 and 0.0 <= ub <= cam.width - 1):
        raise NoForwardDirection()
    return (ua, float(v_near)), (ub, float(v_far))


def image_line_to_ground_heading(line: PolarLine, hom: GroundHomography, cam: CameraModel) -> float:
    """Ground heading (robot frame, CCW from forward) of an image line."""
    a, b = line_endpoints(line, cam)
    (xa, ya), (xb, yb) = hom.backproject([a, b])
    if xb <= xa:
        raise NoForwardDirection()
    return math.atan2(yb - ya, xb - xa)
