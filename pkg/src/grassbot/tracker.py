"""Image-space visual servoing toward the tracked object's box.

The robot drives so the box bottom-center lands on the image bottom-center
(u_cl, v_cl); both speeds are proportional to the pixel offsets outside a
small deadband.
"""

from __future__ import annotations

from dataclasses import dataclass

from .camera import CameraModel
from .perception import ObjectBox, SegmentationFrame, locate_garbage, select_closest_object

V_DEADBAND_PX = 10
U_DEADBAND_PX = 5
LOST_FRAMES_LIMIT = 10


@dataclass(frozen=True)
class TrackerCommand:
    v: float
    omega: float
    arrived: bool

    def __post_init__(self):
        if self.arrived and (self.v != 0.0 or self.omega != 0.0):
            raise ValueError("arrived commands must be zero")


def compute_offsets(box: ObjectBox, cam: CameraModel) -> tuple[int, int]:
    u_cl, v_cl = cam.bottom_center
    u_co, _ = locate_garbage(box)
    du = u_cl - u_co
    dv = v_cl - box.v_br
    assert dv >= 0, "box bottom below the last image row"
    return du, dv


def tracking_command(du: float, dv: float, v_max: float, omega_max: float, cam: CameraModel) -> TrackerCommand:
    v = dv / cam.height * v_max if abs(dv) > V_DEADBAND_PX else 0.0
    omega = du / (cam.width / 2) * omega_max if abs(du) > U_DEADBAND_PX else 0.0
    arrived = abs(dv) <= V_DEADBAND_PX and abs(du) <= U_DEADBAND_PX
    return TrackerCommand(v, omega, arrived)


@dataclass
class TrackStatus:
    command: TrackerCommand
    object_id: str | None
    lost_frames: int
    aborted: bool = False


def track_step(frame: SegmentationFrame, tracked_id: str | None, lost_frames: int, cam: CameraModel,
               v_max: float, omega_max: float, exclude=(), lost_limit: int = LOST_FRAMES_LIMIT) -> TrackStatus:
    """One servo cycle: find the tracked box (or re-acquire the closest one) and command.

    Tracking aborts once no target has been seen for more than ``lost_limit``
    consecutive frames.
    """
    box = frame.box_for(tracked_id) if tracked_id is not None else None
    if box is None:
        box = select_closest_object(frame, exclude)
    if box is None:
        lost = lost_frames + 1
        return TrackStatus(TrackerCommand(0.0, 0.0, False), tracked_id, lost, aborted=lost > lost_limit)
    du, dv = compute_offsets(box, cam)
    return TrackStatus(tracking_command(du, dv, v_max, omega_max, cam), box.object_id, 0)
