"""Planar EKF over (x, y, theta): odometry dead reckoning plus GPS position fixes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .world import arc_displacement, wrap_angle


@dataclass(frozen=True)
class EkfState:
    mean: np.ndarray
    covariance: np.ndarray

    @classmethod
    def at(cls, x: float, y: float, theta: float, sigma_xy: float = 0.0, sigma_theta: float = 0.0) -> EkfState:
        return cls(np.array([x, y, theta], dtype=float), np.diag([sigma_xy**2, sigma_xy**2, sigma_theta**2]))


@dataclass
class SensorNoise:
    sigma_v: float = 0.05
    sigma_omega: float = 0.05
    sigma_gps: float = 0.5
    gps_period: float = 1.0
    outages: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if min(self.sigma_v, self.sigma_omega, self.sigma_gps) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.gps_period <= 0:
            raise ValueError("GPS period must be > 0")

    def in_outage(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.outages)


def ekf_predict(state: EkfState, odom: tuple[float, float], dt: float,
                sigma_v: float = 0.0, sigma_omega: float = 0.0) -> EkfState:
    if dt <= 0:
        raise ValueError("dt must be > 0")
    v, w = float(odom[0]), float(odom[1])
    x, y, th = state.mean
    dx, dy = arc_displacement(th, v, w, dt)
    mean = np.array([x + dx, y + dy, wrap_angle(th + w * dt)])
    F = np.array([[1.0, 0.0, -dy], [0.0, 1.0, dx], [0.0, 0.0, 1.0]])
    thm = th + 0.5 * w * dt
    c, s = math.cos(thm), math.sin(thm)
    G = np.array([
        [dt * c, -0.5 * v * dt * dt * s],
        [dt * s, 0.5 * v * dt * dt * c],
        [0.0, dt],
    ])
    M = np.diag([sigma_v**2, sigma_omega**2])
    P = F @ state.covariance @ F.T + G @ M @ G.T
    return EkfState(mean, 0.5 * (P + P.T))


_H = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def ekf_update_gps(state: EkfState, fix: tuple[float, float], sigma_gps: float) -> EkfState:
    """Position-only update (Joseph form)."""
    if not math.isfinite(sigma_gps):
        return state
    P = state.covariance
    R = np.eye(2) * sigma_gps**2
    S = _H @ P @ _H.T + R
    K = P @ _H.T @ np.linalg.inv(S)
    innov = np.asarray(fix, dtype=float) - state.mean[:2]
    mean = state.mean + K @ innov
    mean[2] = wrap_angle(mean[2])
    A = np.eye(3) - K @ _H
    P = A @ P @ A.T + K @ R @ K.T
    return EkfState(mean, 0.5 * (P + P.T))


class Localizer:
    """Runs the EKF and a dead-reckoning-only shadow estimate off the same odometry."""

    def __init__(self, start: tuple[float, float, float], noise: SensorNoise, rng: np.random.Generator,
                 initial_sigma_xy: float = 0.1, initial_sigma_theta: float = 0.05):
        self.noise = noise
        self.rng = rng
        self.ekf = EkfState.at(*start, initial_sigma_xy, initial_sigma_theta)
        self.dead_reckoning = np.array(start, dtype=float)
        self._next_fix = 0.0

    def odometry(self, v: float, omega: float) -> tuple[float, float]:
        n = self.noise
        return (
            v + (float(self.rng.normal(0.0, n.sigma_v)) if n.sigma_v > 0 else 0.0),
            omega + (float(self.rng.normal(0.0, n.sigma_omega)) if n.sigma_omega > 0 else 0.0),
        )

    def predict(self, v: float, omega: float, dt: float) -> None:
        ov, ow = self.odometry(v, omega)
        self.ekf = ekf_predict(self.ekf, (ov, ow), dt, self.noise.sigma_v, self.noise.sigma_omega)
        x, y, th = self.dead_reckoning
        dx, dy = arc_displacement(th, ov, ow, dt)
        self.dead_reckoning = np.array([x + dx, y + dy, wrap_angle(th + ow * dt)])

    def maybe_fix(self, t: float, true_xy: tuple[float, float]) -> bool:
        """Fuse a GPS fix when one is due; returns whether a fix was used."""
        if t + 1e-9 < self._next_fix:
            return False
        self._next_fix += self.noise.gps_period
        if self.noise.in_outage(t):
            return False
        sg = self.noise.sigma_gps
        fix = (
            true_xy[0] + (float(self.rng.normal(0.0, sg)) if sg > 0 else 0.0),
            true_xy[1] + (float(self.rng.normal(0.0, sg)) if sg > 0 else 0.0),
        )
        # a zero-sigma GPS is treated as very precise rather than exact
        self.ekf = ekf_update_gps(self.ekf, fix, max(sg, 1e-3))
        return True

    @property
    def estimate(self) -> tuple[float, float, float]:
        x, y, th = self.ekf.mean
        return float(x), float(y), float(th)
