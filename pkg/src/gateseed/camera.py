"""Equidistant (Kannala-Brandt, 4 coefficient) fish-eye camera and the
back-projection of a gate detection into a world-frame pose.

Frames: the camera frame is the optical one (x right, y down, z forward);
the drone body frame is x forward, y left, z up; the world frame is z up.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# camera optical axes -> body axes (forward, left, up)
CAMERA_TO_BODY = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 20


class CameraError(ValueError):
    pass


class BehindCameraError(CameraError):
    pass


class UnprojectError(ArithmeticError):
    """Distortion inversion failed to converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    r = math.remainder(float(a), 2.0 * math.pi)
    return math.pi if r <= -math.pi else r


def wrap_angles(a: np.ndarray) -> np.ndarray:
    r = np.remainder(np.asarray(a, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(r <= -np.pi, np.pi, r)


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def quat_to_matrix(w: float, x: float, y: float, z: float) -> np.ndarray:
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if n == 0.0:
        raise CameraError("zero quaternion")
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(r: np.ndarray) -> tuple[float, float, float, float]:
    tr = np.trace(r)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        return (0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s)
    i = int(np.argmax(np.diag(r)))
    if i == 0:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        return ((r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s)
    if i == 1:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        return ((r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s)
    s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
    return ((r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s)


@dataclass(frozen=True)
class Pose:
    """Position in metres and yaw in radians, yaw normalised to (-pi, pi]."""

    position: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3:
            raise CameraError("pose position must be a 3-vector")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def xyz(self) -> np.ndarray:
        return np.array(self.position)

    def rotation(self) -> np.ndarray:
        """Body -> world rotation (upright: roll and pitch are zero)."""
        return rot_z(self.yaw)


@dataclass(frozen=True)
class FrameTransform:
    """Camera mount: rotation ``R^D_C`` and camera position in the body frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise CameraError("rotation must be 3x3")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0.0):
            raise CameraError("rotation is not orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "FrameTransform":
        return cls()


@dataclass(frozen=True)
class GateObservation:
    """Decoded detection: pixel centre, distance (m), relative yaw (rad)."""

    u: float
    v: float
    distance: float
    yaw: float
    confidence: float = 1.0

    def to_dict(self) -> dict:
        return {"u": self.u, "v": self.v, "d": self.distance, "theta": self.yaw, "confidence": self.confidence}


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    dist: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    width: int = 160
    height: int = 120

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise CameraError("principal point must lie inside the image")
        d = tuple(float(k) for k in self.dist)
        if len(d) != 4:
            raise CameraError("fish-eye model needs exactly four coefficients")
        object.__setattr__(self, "dist", d)

    # -- distortion polynomial ------------------------------------------------
    def distort_angle(self, theta):
        k1, k2, k3, k4 = self.dist
        t2 = theta * theta
        return theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))

    def _distort_derivative(self, theta):
        k1, k2, k3, k4 = self.dist
        t2 = theta * theta
        return 1.0 + t2 * (3 * k1 + t2 * (5 * k2 + t2 * (7 * k3 + t2 * 9 * k4)))

    def undistort_angle(self, theta_d):
        """Newton inversion of the distortion polynomial (vectorised)."""
        theta_d = np.asarray(theta_d, dtype=np.float64)
        theta = theta_d.copy()
        for _ in range(NEWTON_MAX_ITER):
            resid = self.distort_angle(theta) - theta_d
            if np.all(np.abs(resid) < NEWTON_TOL):
                return theta
            theta = theta - resid / self._distort_derivative(theta)
        resid = self.distort_angle(theta) - theta_d
        worst = float(np.max(np.abs(resid)))
        if worst >= NEWTON_TOL:
            raise UnprojectError("fish-eye undistortion did not converge", worst)
        return theta

    # -- projection -----------------------------------------------------------
    def project(self, points) -> np.ndarray:
        """Project camera-frame points ``(..., 3)`` to pixels ``(..., 2)``."""
        p = np.asarray(points, dtype=np.float64)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        if np.any(z <= 0):
            raise BehindCameraError("point is behind the camera (z <= 0)")
        r = np.hypot(x, y)
        theta = np.arctan2(r, z)
        theta_d = self.distort_angle(theta)
        safe_r = np.where(r > 0, r, 1.0)
        scale = np.where(r > 0, theta_d / safe_r, 0.0)
        return np.stack([self.fx * scale * x + self.cx, self.fy * scale * y + self.cy], axis=-1)

    def unproject(self, pixels) -> np.ndarray:
        """Pixels ``(..., 2)`` to unit rays ``(..., 3)`` in the camera frame."""
        px = np.asarray(pixels, dtype=np.float64)
        if not np.all(np.isfinite(px)):
            raise CameraError("pixel coordinates must be finite")
        mx = (px[..., 0] - self.cx) / self.fx
        my = (px[..., 1] - self.cy) / self.fy
        theta_d = np.hypot(mx, my)
        theta = self.undistort_angle(theta_d)
        safe = np.where(theta_d > 0, theta_d, 1.0)
        s = np.where(theta_d > 0, np.sin(theta) / safe, 0.0)
        return np.stack([s * mx, s * my, np.cos(theta)], axis=-1)

    def pixel_rays(self, supersample: int = 1) -> np.ndarray:
        """Unit rays through every (sub)pixel centre, shape ``(H*ss, W*ss, 3)``."""
        ss = supersample
        us = (np.arange(self.width * ss) + 0.5) / ss - 0.5
        vs = (np.arange(self.height * ss) + 0.5) / ss - 0.5
        grid = np.stack(np.meshgrid(us, vs), axis=-1)
        return self.unproject(grid)

    def in_image(self, uv) -> bool:
        u, v = uv
        return 0.0 <= u < self.width and 0.0 <= v < self.height

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "k1": self.dist[0], "k2": self.dist[1], "k3": self.dist[2], "k4": self.dist[3],
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
            dist=tuple(float(d.get(k, 0.0)) for k in ("k1", "k2", "k3", "k4")),
            width=int(d.get("width", 160)), height=int(d.get("height", 120)),
        )


def default_camera() -> CameraModel:
    """Synthetic 160x120 fish-eye, roughly 130 deg horizontal field of view."""
    return CameraModel(fx=70.0, fy=70.0, cx=80.0, cy=60.0, dist=(-0.02, 0.003, 0.0, 0.0))


def project_fisheye(cam: CameraModel, point) -> np.ndarray:
    return cam.project(point)


def unproject_fisheye(cam: CameraModel, pixel) -> np.ndarray:
    return cam.unproject(pixel)


def camera_point_to_world(point_cam, drone_pose: Pose, mount: FrameTransform | None = None) -> np.ndarray:
    mount = mount or FrameTransform.identity()
    body = mount.rotation.T @ (CAMERA_TO_BODY @ np.asarray(point_cam, dtype=np.float64)) + mount.translation
    return drone_pose.xyz + drone_pose.rotation() @ body


def world_point_to_camera(point_world, drone_pose: Pose, mount: FrameTransform | None = None) -> np.ndarray:
    """Inverse of :func:`camera_point_to_world`; accepts ``(..., 3)``."""
    mount = mount or FrameTransform.identity()
    p = np.asarray(point_world, dtype=np.float64) - drone_pose.xyz
    body = p @ drone_pose.rotation()  # row-vector form of R^T p
    opt = (body - mount.translation) @ mount.rotation.T
    return opt @ CAMERA_TO_BODY


def back_project_gate(
    cam: CameraModel,
    obs: GateObservation,
    drone_pose: Pose,
    mount: FrameTransform | None = None,
) -> Pose:
    """Lift a detection (pixel, distance, relative yaw) to a world-frame pose."""
    if not obs.distance > 0:
        raise CameraError(f"observation distance must be positive, got {obs.distance}")
    ray = cam.unproject((obs.u, obs.v))
    point_cam = obs.distance * ray
    world = camera_point_to_world(point_cam, drone_pose, mount)
    return Pose(tuple(world), drone_pose.yaw + obs.yaw)


def load_camera_config(path: str | Path) -> tuple[CameraModel, FrameTransform]:
    """Read an INI-style camera file.

    ``[camera]`` holds fx, fy, cx, cy, k1..k4 and optionally width/height;
    ``[mount]`` holds the quaternion qw, qx, qy, qz and tx, ty, tz.
    """
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"camera config not found: {path}")
    if "camera" not in parser:
        raise CameraError(f"{path}: missing [camera] section")
    cam = CameraModel.from_dict(dict(parser["camera"]))
    mount = FrameTransform.identity()
    if "mount" in parser:
        m = parser["mount"]
        rot = quat_to_matrix(m.getfloat("qw", 1.0), m.getfloat("qx", 0.0), m.getfloat("qy", 0.0), m.getfloat("qz", 0.0))
        trans = np.array([m.getfloat("tx", 0.0), m.getfloat("ty", 0.0), m.getfloat("tz", 0.0)])
        mount = FrameTransform(rot, trans)
    return cam, mount


def save_camera_config(path: str | Path, cam: CameraModel, mount: FrameTransform | None = None) -> None:
    mount = mount or FrameTransform.identity()
    parser = configparser.ConfigParser()
    parser["camera"] = {k: repr(v) for k, v in cam.to_dict().items()}
    qw, qx, qy, qz = matrix_to_quat(mount.rotation)
    t = mount.translation
    parser["mount"] = {
        "qw": repr(float(qw)), "qx": repr(float(qx)), "qy": repr(float(qy)), "qz": repr(float(qz)),
        "tx": repr(float(t[0])), "ty": repr(float(t[1])), "tz": repr(float(t[2])),
    }
    with open(path, "w") as fh:
        parser.write(fh)
