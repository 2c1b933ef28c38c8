import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from grasp_sim.geometry import Pose2_5D
from grasp_sim.gripper import (
    GraspOutcome,
    GraspTolerances,
    GripperGeometry,
    GripperState,
    Jaws,
    NotHolding,
    PlaceOutcome,
    attempt_grasp,
    grasp_errors,
    grip_switch,
    gripper_center,
    in_grasp_region,
    release,
    vehicle_for_gripper,
)
from grasp_sim.perception import ObjectClass
from grasp_sim.vehicle import SceneObject, Surface

GEOM = GripperGeometry()
TOL = GraspTolerances()


def obj_at(x=0.0, y=0.0, z=0.0, height=0.08, **kw):
    return SceneObject("o", ObjectClass.TARGET_CAN, Pose2_5D(x, y, z, 0.0), height=height, **kw)


def test_gripper_centre_examples():
    assert gripper_center(Pose2_5D(), GEOM).as_tuple() == pytest.approx((0.35, 0.0, -0.02, 0.0))
    yawed = gripper_center(Pose2_5D(yaw=math.pi / 2), GEOM)
    assert yawed.as_tuple() == pytest.approx((0.0, 0.35, -0.02, math.pi / 2), abs=1e-12)
    bare = GripperGeometry(arm_offset=Pose2_5D())
    p = Pose2_5D(1, 2, 3, 0.4)
    assert gripper_center(p, bare) == p


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-4, 4))
def test_vehicle_for_gripper_inverts_gripper_center(x, y, z, yaw):
    g = Pose2_5D(x, y, z, yaw)
    back = gripper_center(vehicle_for_gripper(g, GEOM), GEOM)
    assert back.as_tuple()[:3] == pytest.approx(g.as_tuple()[:3], abs=1e-9)
    assert math.cos(back.yaw - g.yaw) == pytest.approx(1.0)


def test_capture_radius_for_default_objects():
    assert GEOM.capture_radius(0.065) == pytest.approx(0.015)


def test_grasp_region_examples():
    g = Pose2_5D()
    assert in_grasp_region(g, Pose2_5D(), TOL)
    assert not in_grasp_region(g, Pose2_5D(0.0, 0.031, 0.0, 0.0), TOL)
    assert in_grasp_region(g, Pose2_5D(0.019, 0.029, 0.019, 0.0), TOL)


def test_errors_are_in_the_arm_frame():
    g = Pose2_5D(0, 0, 0, math.pi / 2)
    lateral, axial, vertical = grasp_errors(g, Pose2_5D(0.0, 0.01, 0.005, 0.0))
    assert axial == pytest.approx(0.01) and lateral == pytest.approx(0.0, abs=1e-12)
    assert vertical == pytest.approx(0.005)


@given(st.floats(-0.05, 0.05), st.floats(-0.05, 0.05), st.floats(-0.05, 0.05), st.floats(-3, 3))
def test_grasp_region_is_sign_symmetric(dl, da, dv, yaw):
    g = Pose2_5D(0.3, -0.2, 1.0, yaw)
    c, s = math.cos(yaw), math.sin(yaw)

    def at(a, lat, v):
        return Pose2_5D(g.x + c * a - s * lat, g.y + s * a + c * lat, g.z + v, 0.0)

    base = in_grasp_region(g, at(da, dl, dv), TOL)
    for sa in (1, -1):
        for sl in (1, -1):
            for sv in (1, -1):
                # skip points within rounding of a face of the box
                if min(abs(abs(dl) - TOL.lateral), abs(abs(da) - TOL.axial), abs(abs(dv) - TOL.vertical)) < 1e-9:
                    continue
                assert in_grasp_region(g, at(sa * da, sl * dl, sv * dv), TOL) == base


def test_attempt_grasp_outcomes():
    g = Pose2_5D(0.0, 0.0, 0.0, 0.0)
    assert attempt_grasp(g, obj_at(), GEOM) is GraspOutcome.SUCCESS
    assert attempt_grasp(g, obj_at(y=0.016), GEOM) is GraspOutcome.MISSED_EMPTY
    assert attempt_grasp(g, obj_at(z=0.0 - 0.4 * 0.08), GEOM) is GraspOutcome.TOO_HIGH_SLIP
    assert attempt_grasp(g, obj_at(z=0.0 + 0.4 * 0.08), GEOM) is GraspOutcome.MISSED_EMPTY
    assert attempt_grasp(g, obj_at(toppled=True), GEOM) is GraspOutcome.KNOCK_OVER
    assert attempt_grasp(g, None, GEOM) is GraspOutcome.MISSED_EMPTY


@given(st.floats(0.0151, 0.5), st.floats(-math.pi, math.pi))
def test_no_success_outside_the_envelope(r, bearing):
    o = obj_at(r * math.cos(bearing), r * math.sin(bearing))
    assert attempt_grasp(Pose2_5D(), o, GEOM) is not GraspOutcome.SUCCESS


def test_switch_reading():
    assert grip_switch(GraspOutcome.SUCCESS, 100.0)
    assert not grip_switch(GraspOutcome.MISSED_EMPTY)
    assert not grip_switch(GraspOutcome.KNOCK_OVER)
    assert grip_switch(GraspOutcome.TOO_HIGH_SLIP, 0.5, 1.5)
    assert not grip_switch(GraspOutcome.TOO_HIGH_SLIP, 1.5, 1.5)


def test_held_object_requires_pressed_switch():
    with pytest.raises(ValueError):
        GripperState(Jaws.CLOSED, False, "o")


def test_release_outcomes():
    table = Surface("table", (1.0, 0.0), (0.3, 0.5), 0.7)
    holding = GripperState(Jaws.CLOSED, True, "o")
    spot = Pose2_5D(1.0, -0.15, 0.75, 0.0)
    outcome, after = release(holding, spot, spot, table)
    assert outcome is PlaceOutcome.SUCCESS
    assert after.held_object is None and after.jaws is Jaws.OPEN and not after.switch_pressed
    assert release(holding, Pose2_5D(1.8, -0.15, 0.75, 0.0), spot, table)[0] is PlaceOutcome.MISSED_TABLE
    drift = Pose2_5D(1.0, 0.25, 0.75, 0.0)
    assert release(holding, drift, spot, table)[0] is PlaceOutcome.WRONG_SPOT
    assert release(holding, spot, spot, None)[0] is PlaceOutcome.MISSED_TABLE
    with pytest.raises(NotHolding):
        release(GripperState(), spot, spot, table)


def test_geometry_validation():
    with pytest.raises(ValueError):
        GripperGeometry(jaw_span_open=0.0)
    with pytest.raises(ValueError):
        GripperGeometry(h_grip_min=0.8, h_grip_max=0.7)
    with pytest.raises(ValueError):
        GraspTolerances(lateral=0.0)
