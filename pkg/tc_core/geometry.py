"""
Pinhole ray casting onto the ground plane z = 0.

Camera frame: +z along the optical axis, +x right, +y down in the image.
CameraModel.rotation maps camera-frame directions to world-frame directions and
CameraModel.translation is the camera centre in world metres.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from tc_core.angular import wrap_angle
from tc_core.errors import CameraFormatError, NoIntersectionError
from utils.formatting import LineDecodeError, PathLike, parse_key_values, read_text

logger = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-9
PARALLEL_TOL = 1e-12
DEFAULT_EPSILON_PX = 1.0

CAMERA_KEYS = ["fx", "fy", "cx", "cy",
               "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
               "tx", "ty", "tz"]

Pixel = Tuple[float, float]


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be > 0, got fx={self.fx} fy={self.fy}")
        error = np.max(np.abs(rotation @ rotation.T - np.eye(3)))
        if error > ORTHONORMAL_TOL:
            raise ValueError(f"rotation is not orthonormal (max |R R^T - I| = {error:.3g})")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)


@dataclass(frozen=True)
class ActorPose:
    x: float
    y: float
    theta_w: float


def _rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def nadir_rotation(yaw: float = 0.0) -> np.ndarray:
    """
    Straight-down camera. At yaw 0 image right is world +x and image up is world +y;
    a positive yaw turns the image axes counterclockwise about world +z.
    """
    return _rot_z(yaw) @ np.diag([1.0, -1.0, -1.0])


def look_rotation(yaw: float, pitch: float) -> np.ndarray:
    """
    Camera looking along azimuth `yaw`, tilted `pitch` radians below the horizon, no roll.

    Returns:
        3x3 world-from-camera rotation with columns (right, down, forward)
    """
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    forward = np.array([cp * cy, cp * sy, -sp])
    right = np.array([sy, -cy, 0.0])
    down = np.cross(forward, right)
    return np.column_stack([right, down, forward])


def pixel_ray(camera: CameraModel, pixel: Pixel) -> np.ndarray:
    """World-frame direction of the back-projected ray through `pixel`."""
    u, v = pixel
    ray_cam = np.array([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0])
    return camera.rotation @ ray_cam


def pixel_to_ground(camera: CameraModel, pixel: Pixel) -> Tuple[float, float]:
    """
    Intersect the ray through `pixel` with the ground plane.

    Raises:
        NoIntersectionError: camera not above the ground, or the ray is parallel to /
            points away from the ground
    """
    height = camera.translation[2]
    if height <= 0:
        raise NoIntersectionError(f"camera must be above the ground plane (z = {height})")
    direction = pixel_ray(camera, pixel)
    if direction[2] > -PARALLEL_TOL:
        raise NoIntersectionError(
            f"ray through pixel ({pixel[0]}, {pixel[1]}) does not hit the ground (direction z = {direction[2]:.3g})"
        )
    t = -height / direction[2]
    point = camera.translation + t * direction
    return float(point[0]), float(point[1])


def ground_to_pixel(camera: CameraModel, point: Sequence[float]) -> Pixel:
    """Project a ground point (x, y, 0) into the image."""
    world = np.array([point[0], point[1], 0.0], dtype=np.float64)
    local = camera.rotation.T @ (world - camera.translation)
    if local[2] <= 0:
        raise NoIntersectionError(f"ground point ({point[0]}, {point[1]}) is behind the camera")
    return (camera.fx * local[0] / local[2] + camera.cx,
            camera.fy * local[1] / local[2] + camera.cy)


def bbox_foot_pixel(bbox: Sequence[float]) -> Pixel:
    """Bottom-centre pixel of (u_min, v_min, u_max, v_max)."""
    u_min, v_min, u_max, v_max = (float(b) for b in bbox)
    if not (u_min < u_max and v_min < v_max):
        raise ValueError(f"degenerate bounding box {tuple(bbox)}")
    return (u_min + u_max) / 2.0, v_max


def image_heading_to_world(camera: CameraModel, foot_pixel: Pixel, theta_img: float,
                           epsilon: float = DEFAULT_EPSILON_PX) -> float:
    """
    Convert an image-plane heading into a world-frame heading by projecting the foot
    pixel and a pixel displaced `epsilon` along the heading onto the ground.

    Image y points down, so the displacement is epsilon * (cos, -sin).
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    u, v = foot_pixel
    x0, y0 = pixel_to_ground(camera, (u, v))
    x1, y1 = pixel_to_ground(camera, (u + epsilon * math.cos(theta_img), v - epsilon * math.sin(theta_img)))
    return wrap_angle(math.atan2(y1 - y0, x1 - x0))


def actor_pose(camera: CameraModel, bbox: Sequence[float], theta_img: float) -> ActorPose:
    foot = bbox_foot_pixel(bbox)
    x, y = pixel_to_ground(camera, foot)
    theta_w = image_heading_to_world(camera, foot, theta_img)
    return ActorPose(x, y, theta_w)


# ---- Camera files ----

def parse_camera(text: str, source: str = "<string>") -> CameraModel:
    """
    Build a CameraModel from flat key=value text with keys fx, fy, cx, cy, r00..r22, tx, ty, tz.

    Raises:
        CameraFormatError for missing, unknown or non-numeric keys and invalid cameras
    """
    try:
        values = parse_key_values(text, source)
    except ValueError as e:
        raise CameraFormatError(str(e)) from e
    missing = [k for k in CAMERA_KEYS if k not in values]
    if missing:
        raise CameraFormatError(f"{source}: missing camera keys {missing}")
    unknown = sorted(set(values) - set(CAMERA_KEYS))
    if unknown:
        raise CameraFormatError(f"{source}: unknown camera keys {unknown}")
    try:
        nums = {k: float(values[k]) for k in CAMERA_KEYS}
    except ValueError as e:
        raise CameraFormatError(f"{source}: {e}") from e
    rotation = np.array([[nums[f"r{i}{j}"] for j in range(3)] for i in range(3)])
    try:
        return CameraModel(
            fx=nums["fx"], fy=nums["fy"], cx=nums["cx"], cy=nums["cy"],
            rotation=rotation,
            translation=np.array([nums["tx"], nums["ty"], nums["tz"]]),
        )
    except ValueError as e:
        raise CameraFormatError(f"{source}: {e}") from e


def load_camera(path: PathLike) -> CameraModel:
    try:
        text = read_text(path)
    except LineDecodeError as e:
        raise CameraFormatError(str(e)) from e
    camera = parse_camera(text, source=str(path))
    logger.debug(f"Loaded camera from {path}")
    return camera


def camera_to_text(camera: CameraModel) -> str:
    """Inverse of parse_camera (17 significant digits)."""
    lines = [f"fx={camera.fx!r}", f"fy={camera.fy!r}", f"cx={camera.cx!r}", f"cy={camera.cy!r}"]
    for i in range(3):
        for j in range(3):
            lines.append(f"r{i}{j}={float(camera.rotation[i, j])!r}")
    for name, value in zip(("tx", "ty", "tz"), camera.translation):
        lines.append(f"{name}={float(value)!r}")
    return "\n".join(lines) + "\n"
