import math

import numpy as np
import pytest

from tc_core.angular import angle_diff
from tc_core.errors import CameraFormatError, NoIntersectionError
from tc_core.geometry import (
    CameraModel, actor_pose, bbox_foot_pixel, camera_to_text, ground_to_pixel, image_heading_to_world,
    load_camera, look_rotation, nadir_rotation, parse_camera, pixel_to_ground,
)


def _camera(rotation, translation=(0.0, 0.0, 10.0), fx=500.0, fy=500.0, cx=320.0, cy=240.0):
    return CameraModel(fx=fx, fy=fy, cx=cx, cy=cy, rotation=rotation, translation=np.array(translation))


def test_nadir_camera():
    cam = _camera(nadir_rotation())
    assert pixel_to_ground(cam, (320.0, 240.0)) == pytest.approx((0.0, 0.0), abs=1e-12)
    assert pixel_to_ground(cam, (820.0, 240.0)) == pytest.approx((10.0, 0.0), abs=1e-12)
    # image up is world +y
    assert pixel_to_ground(cam, (320.0, -260.0)) == pytest.approx((0.0, 10.0), abs=1e-12)
    assert image_heading_to_world(cam, (320.0, 240.0), 0.0) == pytest.approx(0.0, abs=1e-12)
    assert image_heading_to_world(cam, (320.0, 240.0), math.pi / 2) == pytest.approx(math.pi / 2, abs=1e-12)


def test_tilted_camera_principal_ray():
    cam = _camera(look_rotation(yaw=0.0, pitch=math.pi / 4))
    x, y = pixel_to_ground(cam, (320.0, 240.0))
    assert x == pytest.approx(10.0, abs=1e-9)
    assert y == pytest.approx(0.0, abs=1e-9)


def test_horizon_and_camera_below_ground():
    level = _camera(look_rotation(yaw=0.3, pitch=0.0))
    with pytest.raises(NoIntersectionError):
        pixel_to_ground(level, (320.0, 240.0))
    with pytest.raises(NoIntersectionError):
        pixel_to_ground(level, (320.0, 100.0))
    below = _camera(nadir_rotation(), translation=(0.0, 0.0, -1.0))
    with pytest.raises(NoIntersectionError):
        pixel_to_ground(below, (320.0, 240.0))
    tilted = _camera(look_rotation(yaw=0.0, pitch=0.5))
    with pytest.raises(NoIntersectionError):
        ground_to_pixel(tilted, (-50.0, 0.0))


def test_bbox_foot_pixel():
    assert bbox_foot_pixel((90, 50, 110, 100)) == (100.0, 100.0)
    assert bbox_foot_pixel((0.0, 0.0, 1.0, 3.5)) == (0.5, 3.5)
    with pytest.raises(ValueError):
        bbox_foot_pixel((10, 10, 10, 20))
    with pytest.raises(ValueError):
        bbox_foot_pixel((10, 30, 20, 20))


def test_yaw_shifts_world_heading():
    rng = np.random.default_rng(0)
    for _ in range(20):
        yaw, theta = rng.uniform(-math.pi, math.pi, size=2)
        cam = _camera(nadir_rotation(yaw))
        got = image_heading_to_world(cam, (300.0, 250.0), theta)
        assert angle_diff(got, theta + yaw) < 1e-9
        assert -math.pi < got <= math.pi


def test_project_then_raycast_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        yaw = rng.uniform(-math.pi, math.pi)
        pitch = rng.uniform(0.3, 1.2)
        height = rng.uniform(5.0, 20.0)
        cam = _camera(look_rotation(yaw, pitch), translation=(rng.uniform(-5, 5), rng.uniform(-5, 5), height))
        pixel = (rng.uniform(0.0, 640.0), rng.uniform(240.0, 480.0))
        point = pixel_to_ground(cam, pixel)
        back = ground_to_pixel(cam, point)
        assert back == pytest.approx(pixel, abs=1e-6)
        again = pixel_to_ground(cam, back)
        assert again == pytest.approx(point, rel=1e-9, abs=1e-9)


def test_epsilon_invariance():
    nadir = _camera(nadir_rotation(0.4))
    base = image_heading_to_world(nadir, (100.0, 400.0), 1.1, epsilon=1.0)
    for eps in (0.01, 0.5, 5.0):
        assert angle_diff(image_heading_to_world(nadir, (100.0, 400.0), 1.1, epsilon=eps), base) < 1e-9

    # image lines map to ground lines, so only the direction of the displacement matters
    tilted = _camera(look_rotation(yaw=0.2, pitch=0.8))
    base = image_heading_to_world(tilted, (320.0, 240.0), 0.7, epsilon=1.0)
    for eps in (0.25, 0.5, 2.0, 4.0):
        assert angle_diff(image_heading_to_world(tilted, (320.0, 240.0), 0.7, epsilon=eps), base) < 1e-3

    with pytest.raises(ValueError):
        image_heading_to_world(nadir, (100.0, 400.0), 1.1, epsilon=0.0)


def test_oblique_camera_two_point_heading():
    cam = _camera(look_rotation(yaw=0.0, pitch=math.pi / 4))
    start = np.array([10.0, 0.0])
    for heading in (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4, -math.pi / 3, math.pi):
        end = start + 0.5 * np.array([math.cos(heading), math.sin(heading)])
        u0, v0 = ground_to_pixel(cam, start)
        u1, v1 = ground_to_pixel(cam, end)
        theta_img = math.atan2(-(v1 - v0), u1 - u0)
        assert angle_diff(image_heading_to_world(cam, (u0, v0), theta_img), heading) < 1e-9


def test_translation_equivariance():
    rotation = look_rotation(yaw=1.0, pitch=0.7)
    a = _camera(rotation, translation=(0.0, 0.0, 8.0))
    b = _camera(rotation, translation=(3.0, -2.0, 8.0))
    bbox = (300.0, 200.0, 340.0, 300.0)
    pose_a = actor_pose(a, bbox, 0.4)
    pose_b = actor_pose(b, bbox, 0.4)
    assert pose_b.x == pytest.approx(pose_a.x + 3.0, abs=1e-9)
    assert pose_b.y == pytest.approx(pose_a.y - 2.0, abs=1e-9)
    assert angle_diff(pose_a.theta_w, pose_b.theta_w) < 1e-9


def test_actor_pose_nadir():
    cam = _camera(nadir_rotation(), cx=100.0, cy=100.0)
    pose = actor_pose(cam, (90.0, 60.0, 110.0, 100.0), 0.0)
    assert (pose.x, pose.y) == pytest.approx((0.0, 0.0), abs=1e-12)
    assert pose.theta_w == pytest.approx(0.0, abs=1e-12)


def test_camera_validation():
    with pytest.raises(ValueError):
        _camera(np.diag([1.0, 1.0, 2.0]))
    with pytest.raises(ValueError):
        _camera(nadir_rotation(), fx=0.0)


def test_camera_text_round_trip(tmp_path):
    cam = _camera(look_rotation(0.3, 0.9), translation=(1.5, -2.0, 12.0))
    path = tmp_path / "camera.txt"
    path.write_text(camera_to_text(cam))
    loaded = load_camera(path)
    assert (loaded.fx, loaded.fy, loaded.cx, loaded.cy) == (cam.fx, cam.fy, cam.cx, cam.cy)
    np.testing.assert_array_equal(loaded.rotation, cam.rotation)
    np.testing.assert_array_equal(loaded.translation, cam.translation)

    garbled = tmp_path / "garbled.txt"
    garbled.write_bytes(path.read_bytes().replace(b"\n", b"\n\x80", 2))
    with pytest.raises(CameraFormatError, match=":2:"):
        load_camera(garbled)


def test_parse_camera_errors():
    text = camera_to_text(_camera(nadir_rotation()))
    with pytest.raises(CameraFormatError):
        parse_camera("\n".join(line for line in text.splitlines() if not line.startswith("tz")))
    with pytest.raises(CameraFormatError):
        parse_camera(text + "skew=0\n")
    with pytest.raises(CameraFormatError):
        parse_camera(text.replace("fx=500.0", "fx=abc"))
    with pytest.raises(CameraFormatError):
        parse_camera(text.replace("r00=1.0", "r00=2.0"))
    with pytest.raises(CameraFormatError):
        parse_camera(text + "not a key value line\n")
