import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grassbot.camera import (
    CameraModel,
    InsufficientPoints,
    NoForwardDirection,
    PolarLine,
    build_homography,
    hough_line,
    image_line_to_ground_heading,
    line_endpoints,
)

CAM = CameraModel.default()
HOM = build_homography(CAM)


def pinhole_oracle(cam, X, Y):
    """Project a ground point by building the camera pose explicitly."""
    t = cam.tilt
    # camera axes expressed in the robot frame
    forward = np.array([math.cos(t), 0.0, -math.sin(t)])
    right = np.array([0.0, -1.0, 0.0])
    down = np.cross(forward, right)
    rel = np.array([X, Y, -cam.mount_height])
    xc, yc, zc = rel @ right, rel @ down, rel @ forward
    return cam.fx * xc / zc + cam.cx, cam.fy * yc / zc + cam.cy


def hough_oracle(points, theta_step=math.radians(1.0), rho_step=2.0):
    """Dictionary accumulator over unique points."""
    pts = sorted(set(map(tuple, points)))
    acc = {}
    for k in range(int(round(math.pi / theta_step))):
        th = k * theta_step
        for u, v in pts:
            r = math.floor((u * math.cos(th) + v * math.sin(th)) / rho_step + 0.5)
            acc[(k, r)] = acc.get((k, r), 0) + 1
    best = max(acc.values())
    k, r = min(key for key, n in acc.items() if n == best)
    return r * rho_step, k * theta_step


class TestCamera:
    def test_default_geometry(self):
        assert CAM.fx == pytest.approx(320 / math.tan(math.radians(30)))
        assert CAM.bottom_center == (319, 479)
        CAM.validate()

    def test_top_row_meets_max_range(self):
        x, y = HOM.backproject([(CAM.cx, -0.0)])[0]
        assert x == pytest.approx(10.0, rel=1e-9) and y == pytest.approx(0.0, abs=1e-9)

    def test_invalid_tilt(self):
        with pytest.raises(ValueError):
            build_homography(CameraModel.default(tilt=0.0))
        with pytest.raises(ValueError):
            build_homography(CameraModel.default(tilt=math.pi / 2))

    def test_projection_matches_explicit_pose(self):
        rng = np.random.default_rng(0)
        pts = np.column_stack([rng.uniform(0.5, 10, 200), rng.uniform(-4, 4, 200)])
        uv = HOM.project(pts)
        for (X, Y), (u, v) in zip(pts, uv):
            uo, vo = pinhole_oracle(CAM, X, Y)
            assert u == pytest.approx(uo, abs=1e-9) and v == pytest.approx(vo, abs=1e-9)
        u3, v3, _ = CAM.project_points(np.column_stack([pts, np.zeros(len(pts))]))
        assert np.allclose(u3, uv[:, 0], atol=1e-9) and np.allclose(v3, uv[:, 1], atol=1e-9)

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        r = rng.uniform(0.4, 10, 10000)
        a = rng.uniform(-math.pi / 6, math.pi / 6, 10000)
        pts = np.column_stack([r * np.cos(a), r * np.sin(a)])
        back = HOM.backproject(HOM.project(pts))
        assert np.max(np.hypot(*(back - pts).T)) < 1e-9

    def test_left_is_small_u(self):
        (u_left, _), (u_right, _) = HOM.project([(3.0, 1.0), (3.0, -1.0)])
        assert u_left < CAM.cx < u_right


class TestHough:
    def test_vertical_line(self):
        pts = [(320.0, v) for v in range(240, 480)]
        line = hough_line(pts)
        assert line.theta_img == 0.0 and line.rho == 320.0

    def test_horizontal_line(self):
        line = hough_line([(u, 300.0) for u in range(0, 640, 3)])
        assert line.theta_img == pytest.approx(math.pi / 2) and line.rho == 300.0

    def test_insufficient(self):
        with pytest.raises(InsufficientPoints, match="insufficient points"):
            hough_line([(10.0, 10.0)])
        with pytest.raises(InsufficientPoints):
            hough_line([(10.0, 10.0), (10.0, 10.0)])

    def test_matches_accumulator_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            n = int(rng.integers(2, 40))
            pts = np.column_stack([rng.integers(0, 640, n), rng.integers(240, 480, n)]).astype(float)
            line = hough_line(pts)
            rho, th = hough_oracle(pts)
            assert line.theta_img == pytest.approx(th, abs=1e-12)
            assert line.rho == rho

    def test_weights_equivalent_to_duplicates(self):
        pts = [(100.0, 300.0), (120.0, 350.0), (400.0, 300.0)]
        a = hough_line(pts, weights=[5, 5, 1])
        assert a == hough_line(pts, weights=[10, 10, 2])

    def test_bad_weights(self):
        with pytest.raises(ValueError):
            hough_line([(0.0, 0.0), (1.0, 1.0)], weights=[1.0])


class TestHeading:
    def test_center_line_is_straight_ahead(self):
        line = PolarLine(319.5, 0.0)
        assert image_line_to_ground_heading(line, HOM, CAM) == pytest.approx(0.0, abs=1e-12)

    def test_hough_center_line_within_tolerance(self):
        line = hough_line([(319.5, float(v)) for v in range(240, 480)])
        assert abs(image_line_to_ground_heading(line, HOM, CAM)) <= 0.02

    def test_sign(self):
        # far end leaning left in the image -> turn left (positive)
        left = hough_line([(319.5 - 0.3 * (479 - v), float(v)) for v in range(240, 480)])
        assert image_line_to_ground_heading(left, HOM, CAM) > 0
        right = hough_line([(319.5 + 0.3 * (479 - v), float(v)) for v in range(240, 480)])
        assert image_line_to_ground_heading(right, HOM, CAM) < 0

    def test_ground_line_recovered(self):
        x0, y0 = HOM.backproject([(319.5, 479.0)])[0]
        for heading in (-0.4, -0.1, 0.2, 0.5):
            g = np.array([(x0 + s * math.cos(heading), y0 + s * math.sin(heading)) for s in np.linspace(0, 3, 5)])
            uv = HOM.project(g)
            d = uv[-1] - uv[0]
            th = math.atan2(-d[0], d[1]) % math.pi
            rho = uv[0, 0] * math.cos(th) + uv[0, 1] * math.sin(th)
            got = image_line_to_ground_heading(PolarLine(rho, th), HOM, CAM)
            assert got == pytest.approx(heading, abs=1e-9)

    def test_horizontal_line_has_no_forward_direction(self):
        with pytest.raises(NoForwardDirection, match="no forward direction"):
            image_line_to_ground_heading(PolarLine(300.0, math.pi / 2), HOM, CAM)

    def test_line_leaving_image(self):
        with pytest.raises(NoForwardDirection):
            line_endpoints(PolarLine(700.0, 0.0), CAM)

    @given(st.floats(1, 638), st.floats(1, 638))
    def test_endpoints_on_rows(self, ua, ub):
        # line through (ua, 479) and (ub, 240)
        th = math.atan2(ub - ua, 479 - 240) % math.pi
        rho = ua * math.cos(th) + 479 * math.sin(th)
        a, b = line_endpoints(PolarLine(rho, th), CAM)
        assert a[1] == 479 and b[1] == 240
        assert a[0] == pytest.approx(ua, abs=1e-6) and b[0] == pytest.approx(ub, abs=1e-6)
