"""Fixed-arm two-jaw gripper: geometry, grasp gating and outcome adjudication.

Adjudication always uses the true object pose; filtered estimates only
decide *when* to close.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

from .geometry import Pose2_5D, compose
from .vehicle import SceneObject, Surface, gripper_frame


@dataclass(frozen=True)
class GripperGeometry:
    arm_offset: Pose2_5D = Pose2_5D(0.35, 0.0, -0.02, 0.0)  # body -> gripper centre
    jaw_span_open: float = 0.095
    extension_length: float = 0.22
    tip_extension: float = 0.045  # jaw tips ahead of the gripper centre
    jaw_back: float = 0.03  # jaw roots behind the centre
    jaw_thickness: float = 0.008
    jaw_half_height: float = 0.015
    close_time: float = 0.4  # command to jaws closed [s]
    slip_delay: float = 1.5  # a too-high grip lets go after this long [s]
    h_grip_min: float = 0.25
    h_grip_max: float = 0.75
    cage_radius: float = 0.14
    cage_half_height: float = 0.06

    def __post_init__(self):
        if self.jaw_span_open <= 0:
            raise ValueError("jaw_span_open must be positive")
        if not 0.0 <= self.h_grip_min < self.h_grip_max <= 1.0:
            raise ValueError("grip height bounds must satisfy 0 <= min < max <= 1")

    def capture_radius(self, diameter: float) -> float:
        return 0.5 * (self.jaw_span_open - diameter)


@dataclass(frozen=True)
class GraspTolerances:
    lateral: float = 0.03
    axial: float = 0.02
    vertical: float = 0.02
    yaw_max: float = math.radians(15.0)
    z_fault_max: float = 0.02

    def __post_init__(self):
        if min(self.lateral, self.axial, self.vertical, self.yaw_max, self.z_fault_max) <= 0:
            raise ValueError("tolerances must be positive")


class Jaws(str, enum.Enum):
    OPEN = "Open"
    CLOSING = "Closing"
    CLOSED = "Closed"


@dataclass(frozen=True)
class GripperState:
    jaws: Jaws = Jaws.OPEN
    switch_pressed: bool = False
    held_object: Optional[str] = None

    def __post_init__(self):
        if self.held_object is not None and not self.switch_pressed:
            raise ValueError("a held object must press the switches")


class GraspOutcome(str, enum.Enum):
    SUCCESS = "Success"
    MISSED_EMPTY = "MissedEmpty"
    KNOCK_OVER = "KnockOver"
    TOO_HIGH_SLIP = "TooHighSlip"


class PlaceOutcome(str, enum.Enum):
    SUCCESS = "Success"
    MISSED_TABLE = "MissedTable"
    WRONG_SPOT = "WrongSpot"


class NotHolding(RuntimeError):
    pass


def gripper_center(vehicle_pose: Pose2_5D, geom: GripperGeometry) -> Pose2_5D:
    return compose(vehicle_pose, geom.arm_offset)


def vehicle_for_gripper(gripper_pose: Pose2_5D, geom: GripperGeometry) -> Pose2_5D:
    """Vehicle pose that puts the gripper centre at ``gripper_pose``."""
    a = geom.arm_offset
    yaw = gripper_pose.yaw - a.yaw
    c, s = math.cos(yaw), math.sin(yaw)
    return Pose2_5D(
        gripper_pose.x - (c * a.x - s * a.y),
        gripper_pose.y - (s * a.x + c * a.y),
        gripper_pose.z - a.z,
        yaw,
    )


def grasp_errors(gripper: Pose2_5D, object_estimate: Pose2_5D) -> tuple[float, float, float]:
    """(lateral, axial, vertical) object offset in the gripper's arm-axis frame."""
    axial, lateral, vertical = gripper_frame(object_estimate.position, gripper)
    return lateral, axial, vertical


def in_grasp_region(gripper: Pose2_5D, object_estimate: Pose2_5D, tol: GraspTolerances) -> bool:
    lateral, axial, vertical = grasp_errors(gripper, object_estimate)
    return abs(lateral) <= tol.lateral and abs(axial) <= tol.axial and abs(vertical) <= tol.vertical


def attempt_grasp(gripper: Pose2_5D, obj: Optional[SceneObject], geom: GripperGeometry) -> GraspOutcome:
    """Close the jaws around whatever is there, judged against the true object."""
    if obj is None:
        return GraspOutcome.MISSED_EMPTY
    if obj.toppled:
        return GraspOutcome.KNOCK_OVER
    axial, lateral, _ = gripper_frame(obj.pose.position, gripper)
    if math.hypot(axial, lateral) > geom.capture_radius(obj.diameter):
        return GraspOutcome.MISSED_EMPTY
    frac = (gripper.z - obj.base_z) / obj.height
    if frac > geom.h_grip_max:
        return GraspOutcome.TOO_HIGH_SLIP
    if frac < geom.h_grip_min:
        return GraspOutcome.MISSED_EMPTY
    return GraspOutcome.SUCCESS


def grip_switch(outcome: GraspOutcome, time_since_grasp: float = 0.0, slip_delay: float = 1.5) -> bool:
    """Snap-switch reading: pressed while an object sits in the jaws."""
    if outcome is GraspOutcome.SUCCESS:
        return True
    if outcome is GraspOutcome.TOO_HIGH_SLIP:
        return time_since_grasp < slip_delay
    return False


def release(
    state: GripperState,
    release_point: Pose2_5D,
    intended: Pose2_5D,
    table: Optional[Surface],
    place_radius: float = 0.08,
) -> tuple[PlaceOutcome, GripperState]:
    """Open the jaws at ``release_point`` (true gripper pose).

    Success needs the release point over the table and within ``place_radius``
    (horizontally) of the intended spot.
    """
    if state.held_object is None:
        raise NotHolding("release called with nothing in the gripper")
    opened = replace(state, jaws=Jaws.OPEN, switch_pressed=False, held_object=None)
    if table is None or not table.contains_xy(release_point.x, release_point.y):
        return PlaceOutcome.MISSED_TABLE, opened
    if release_point.horizontal_distance_to(intended) > place_radius:
        return PlaceOutcome.WRONG_SPOT, opened
    return PlaceOutcome.SUCCESS, opened
