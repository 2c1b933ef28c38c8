"""Shared geometric types: 2.5-D poses, the pinhole camera and frame chains.

World and body frames are right-handed with z up; the body x axis points
along the gripper arm. The camera optical frame is z forward, x right,
y down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


class NonPositiveDepth(ValueError):
    """Raised when projecting a point on or behind the camera plane."""


def wrap_angle(theta: float) -> float:
    """Map an angle onto (-pi, pi]."""
    if -math.pi < theta <= math.pi:
        return theta
    r = math.fmod(theta + math.pi, TWO_PI)
    if r <= 0.0:
        r += TWO_PI
    return r - math.pi


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class PixelCoord(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class Pose2_5D:
    """Position plus heading. ``yaw`` is normalized on construction."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not all(map(math.isfinite, (self.x, self.y, self.z, self.yaw))):
            raise ValueError(f"non-finite pose {self!r}")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def position(self) -> Point3:
        return Point3(self.x, self.y, self.z)

    def distance_to(self, other: "Pose2_5D") -> float:
        return math.sqrt(
            (self.x - other.x) ** 2 + (self.y - other.y) ** 2 + (self.z - other.z) ** 2
        )

    def horizontal_distance_to(self, other: "Pose2_5D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.z, self.yaw)


def compose(a: Pose2_5D, b: Pose2_5D) -> Pose2_5D:
    """Return ``a * b``: ``b`` expressed in ``a``'s frame, mapped to a's parent."""
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Pose2_5D(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.z + b.z,
        a.yaw + b.yaw,
    )


def inverse(a: Pose2_5D) -> Pose2_5D:
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Pose2_5D(
        -(c * a.x + s * a.y),
        s * a.x - c * a.y,
        -a.z,
        -a.yaw,
    )


def relative(a: Pose2_5D, b: Pose2_5D) -> Pose2_5D:
    """Pose of ``b`` expressed in the frame of ``a``."""
    return compose(inverse(a), b)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True, eq=False)
class CameraExtrinsics:
    """Camera mount on the vehicle body.

    ``translation`` is the camera origin in body coordinates and
    ``rotation`` the mount orientation relative to the body (columns are
    the mount's forward/left/up axes in body coordinates). The fixed
    permutation from a forward/left/up mount frame to the optical frame is
    applied on top, so the identity mount looks straight along body x.
    """

    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal and proper")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        # plain-float copy for the per-detection hot path
        object.__setattr__(self, "_r", tuple(tuple(float(v) for v in row) for row in r))

    @classmethod
    def pitched(cls, pitch_down: float, translation=(0.0, 0.0, 0.0)) -> "CameraExtrinsics":
        c, s = math.cos(pitch_down), math.sin(pitch_down)
        rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        return cls(translation=translation, rotation=rot)


def project(point: Point3, intrinsics: CameraIntrinsics) -> PixelCoord:
    x, y, z = point
    if not z > 0.0:
        raise NonPositiveDepth(f"depth {z} is not positive")
    return PixelCoord(
        (intrinsics.fx * x + intrinsics.cx * z) / z,
        (intrinsics.fy * y + intrinsics.cy * z) / z,
    )


def in_frustum(point: Point3, intrinsics: CameraIntrinsics) -> bool:
    """True when the point projects inside ``[0, width) x [0, height)``."""
    if not point[2] > 0.0:
        return False
    u, v = project(point, intrinsics)
    return 0.0 <= u < intrinsics.width and 0.0 <= v < intrinsics.height


def world_to_body(point, vehicle_pose: Pose2_5D) -> Point3:
    dx = point[0] - vehicle_pose.x
    dy = point[1] - vehicle_pose.y
    c, s = math.cos(vehicle_pose.yaw), math.sin(vehicle_pose.yaw)
    return Point3(c * dx + s * dy, -s * dx + c * dy, point[2] - vehicle_pose.z)


def body_to_world(point, vehicle_pose: Pose2_5D) -> Point3:
    c, s = math.cos(vehicle_pose.yaw), math.sin(vehicle_pose.yaw)
    return Point3(
        vehicle_pose.x + c * point[0] - s * point[1],
        vehicle_pose.y + s * point[0] + c * point[1],
        vehicle_pose.z + point[2],
    )


def body_to_optical(point, extrinsics: CameraExtrinsics) -> Point3:
    r = extrinsics._r
    t = extrinsics.translation
    px, py, pz = point[0] - t[0], point[1] - t[1], point[2] - t[2]
    # mount frame = R^T (p - t)
    fwd = r[0][0] * px + r[1][0] * py + r[2][0] * pz
    left = r[0][1] * px + r[1][1] * py + r[2][1] * pz
    up = r[0][2] * px + r[1][2] * py + r[2][2] * pz
    return Point3(-left, -up, fwd)


def optical_to_body(point, extrinsics: CameraExtrinsics) -> Point3:
    r = extrinsics._r
    t = extrinsics.translation
    fwd, left, up = point[2], -point[0], -point[1]
    return Point3(
        t[0] + r[0][0] * fwd + r[0][1] * left + r[0][2] * up,
        t[1] + r[1][0] * fwd + r[1][1] * left + r[1][2] * up,
        t[2] + r[2][0] * fwd + r[2][1] * left + r[2][2] * up,
    )


def body_to_camera(
    pose_world: Pose2_5D, vehicle_pose: Pose2_5D, extrinsics: CameraExtrinsics
) -> Point3:
    """Express a world-frame pose's position in the camera optical frame."""
    return body_to_optical(world_to_body(pose_world.position, vehicle_pose), extrinsics)


def camera_to_world(
    point: Point3, vehicle_pose: Pose2_5D, extrinsics: CameraExtrinsics
) -> Point3:
    return body_to_world(optical_to_body(point, extrinsics), vehicle_pose)
