"""Fault-tolerant pick-and-place mission state machine.

``TRANSITIONS`` is the single source of truth for legal moves: ``step``
refuses to take an edge that is not in the table, and the model checker
and trace validator read the same table.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from .geometry import Pose2_5D, compose, wrap_angle
from .gripper import (
    GraspTolerances,
    GripperGeometry,
    gripper_center,
    in_grasp_region,
    vehicle_for_gripper,
)
from .perception import AssociationConfig, ObjectClass, ObjectTrack, TrackStore, closest_target
from .trajectory import PolynomialTrajectory, TrajectoryTiming, derivative, evaluate, plan_trajectory


class Node(str, enum.Enum):
    WAITING_TO_PICK = "WaitingToPick"
    TRACKING_TARGET = "TrackingTarget"
    GO_PRE_PICK = "GoPrePick"
    GO_PICK = "GoPick"
    CLOSE_GRIPPER = "CloseGripper"
    POST_PICK = "PostPick"
    SEARCH_DESTINATION = "SearchDestination"
    GO_PRE_PLACE = "GoPrePlace"
    GO_PLACE = "GoPlace"
    RELEASE_OBJECT = "ReleaseObject"
    INSTANCE_COMPLETE = "InstanceComplete"
    MISSION_COMPLETE = "MissionComplete"
    RESETTING = "Resetting"
    ABORTED = "Aborted"


class Event(str, enum.Enum):
    TARGET_SEEN = "TargetSeen"
    TRACK_READY = "TrackReady"
    ARRIVED = "Arrived"
    IN_GRASP_REGION = "InGraspRegion"
    GRIP_CONFIRMED = "GripConfirmed"
    DESTINATION_SEEN = "DestinationSeen"
    DESTINATION_NOT_FOUND = "DestinationNotFound"
    AT_PLACE = "AtPlace"
    RELEASED = "Released"
    NEXT_INSTANCE = "NextInstance"
    ALL_DONE = "AllDone"
    FAULT = "Fault"
    ABANDON = "Abandon"  # physical failure reported by the simulator


class Fault(str, enum.Enum):
    TRACK_TIMEOUT = "TrackTimeout"
    GRASP_FAILED = "GraspFailed"
    Z_ERROR_EXCEEDED = "ZErrorExceeded"
    YAW_ERROR_EXCEEDED = "YawErrorExceeded"


N = Node
E = Event

PICK_FAULT_NODES = frozenset({N.TRACKING_TARGET, N.GO_PRE_PICK, N.GO_PICK, N.CLOSE_GRIPPER})
PLACE_NODES = frozenset({N.GO_PRE_PLACE, N.GO_PLACE, N.RELEASE_OBJECT})
TERMINAL_NODES = frozenset({N.MISSION_COMPLETE, N.ABORTED})
ABANDONABLE = frozenset(
    {N.WAITING_TO_PICK, N.RESETTING, N.POST_PICK, N.SEARCH_DESTINATION} | PICK_FAULT_NODES
)

TRANSITIONS: dict[tuple[Node, Event], tuple[Node, ...]] = {
    (N.WAITING_TO_PICK, E.TARGET_SEEN): (N.TRACKING_TARGET,),
    (N.TRACKING_TARGET, E.TRACK_READY): (N.GO_PRE_PICK,),
    (N.GO_PRE_PICK, E.ARRIVED): (N.GO_PICK,),
    (N.GO_PICK, E.IN_GRASP_REGION): (N.CLOSE_GRIPPER,),
    (N.CLOSE_GRIPPER, E.GRIP_CONFIRMED): (N.POST_PICK,),
    (N.POST_PICK, E.ARRIVED): (N.SEARCH_DESTINATION,),
    (N.SEARCH_DESTINATION, E.DESTINATION_SEEN): (N.GO_PRE_PLACE,),
    (N.SEARCH_DESTINATION, E.DESTINATION_NOT_FOUND): (N.INSTANCE_COMPLETE,),
    (N.GO_PRE_PLACE, E.ARRIVED): (N.GO_PLACE,),
    (N.GO_PLACE, E.AT_PLACE): (N.RELEASE_OBJECT,),
    (N.RELEASE_OBJECT, E.RELEASED): (N.INSTANCE_COMPLETE,),
    (N.INSTANCE_COMPLETE, E.NEXT_INSTANCE): (N.WAITING_TO_PICK,),
    (N.INSTANCE_COMPLETE, E.ALL_DONE): (N.MISSION_COMPLETE,),
    (N.RESETTING, E.ARRIVED): (N.WAITING_TO_PICK,),
    **{(n, E.FAULT): (N.RESETTING, N.ABORTED) for n in PICK_FAULT_NODES},
    **{(n, E.ABANDON): (N.INSTANCE_COMPLETE,) for n in ABANDONABLE},
}


class IllegalTransition(RuntimeError):
    pass


# -- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class FaultConfig:
    tracking_timeout: float = 2.0
    z_error_max: float = 0.02
    yaw_error_max: float = math.radians(15.0)
    grasp_check_delay: float = 1.0
    max_resets: int = 5
    occlusion_range: float = 0.45  # TrackTimeout suspended closer than this
    grasp_entry_radius: float = 0.08  # z/yaw checked on first crossing

    def __post_init__(self):
        vals = (self.tracking_timeout, self.z_error_max, self.yaw_error_max,
                self.grasp_check_delay, self.max_resets)
        if min(vals) <= 0:
            raise ValueError("fault thresholds must be positive")


@dataclass(frozen=True)
class WaypointScheme:
    pre_pick_offset: float = 0.65
    pick_offset: Pose2_5D = Pose2_5D()  # gripper target in the object frame
    post_pick_offset: Pose2_5D = Pose2_5D(-0.5, 1.0, 0.2, math.pi / 2)  # in the pick frame
    pre_place_offset: float = 0.35
    pre_place_rise: float = 0.05
    place_right_offset: float = 0.15
    place_clearance: float = 0.01
    place_tolerance: float = 0.03
    search_step_down: float = 0.15
    search_dwell: float = 1.5
    min_search_altitude: float = 0.35
    instance_place_increment: float = 0.15

    def __post_init__(self):
        if self.pre_pick_offset <= 0:
            raise ValueError("pre_pick_offset must be positive")


@dataclass(frozen=True)
class MissionConfig:
    faults: FaultConfig = FaultConfig()
    waypoints: WaypointScheme = WaypointScheme()
    tolerances: GraspTolerances = GraspTolerances()
    gripper: GripperGeometry = GripperGeometry()
    timing: TrajectoryTiming = TrajectoryTiming(cruise_speed=0.15)
    association: AssociationConfig = AssociationConfig()
    min_track_steps: int = 10
    dest_min_steps: int = 3
    tracking_dwell: float = 3.0
    plateau_dwell: float = 9.5
    arrive_settle: float = 0.5
    release_delay: float = 0.5
    replan_threshold: float = 0.01


@dataclass(frozen=True)
class TransitionRecord:
    time: float
    src: Node
    dst: Node
    event: Event
    fault: Optional[Fault] = None
    instance: int = 0
    in_grasp_region: Optional[bool] = None

    def to_json(self, **extra) -> str:
        d = {
            **extra,
            "t": round(self.time, 6),
            "from": self.src.value,
            "to": self.dst.value,
            "event": self.event.value,
            "fault": None if self.fault is None else self.fault.value,
            "instance": self.instance,
        }
        if self.in_grasp_region is not None:
            d["in_grasp_region"] = self.in_grasp_region
        return json.dumps(d, sort_keys=True)


@dataclass(frozen=True)
class MissionState:
    node: Node = N.WAITING_TO_PICK
    initial_pose: Pose2_5D = Pose2_5D()
    trajectory: Optional[PolynomialTrajectory] = None
    reset_count: int = 0
    fault_log: tuple[tuple[float, Fault], ...] = ()
    instance_index: int = 0
    instance_count: int = 1
    instance_resets: int = 0
    target_id: Optional[int] = None
    target: Optional[ObjectTrack] = None
    dest_id: Optional[int] = None
    dest: Optional[ObjectTrack] = None
    node_since: float = 0.0
    goal: Optional[Pose2_5D] = None  # vehicle goal of the active trajectory
    region_checked: bool = False
    close_at: Optional[float] = None
    search_descents: int = 0
    search_hold_since: float = 0.0
    release_at: Optional[float] = None
    destination_not_found: bool = False

    @classmethod
    def start(cls, initial_pose: Pose2_5D, now: float = 0.0, instance_count: int = 1) -> "MissionState":
        return cls(initial_pose=initial_pose, node_since=now, instance_count=instance_count)

    @property
    def terminal(self) -> bool:
        return self.node in TERMINAL_NODES


@dataclass(frozen=True)
class FsmInputs:
    tracks: TrackStore
    vehicle: Pose2_5D  # estimated vehicle pose
    now: float
    grip_switch: bool = False
    target_class: ObjectClass = ObjectClass.TARGET_CAN
    dest_class: ObjectClass = ObjectClass.DEST_CAN
    held_height: float = 0.08
    dest_height: float = 0.08


@dataclass(frozen=True)
class FsmOutput:
    trajectory: Optional[PolynomialTrajectory] = None
    gripper: Optional[str] = None  # "open" | "close"
    transitions: tuple[TransitionRecord, ...] = ()
    descended: bool = False


# -- helpers ---------------------------------------------------------------------


def next_nodes(node: Node, event: Event) -> tuple[Node, ...]:
    return TRANSITIONS.get((node, event), ())


def _move(fsm: MissionState, event: Event, dst: Node, now: float, fault=None, **kw) -> tuple[MissionState, TransitionRecord]:
    if dst not in next_nodes(fsm.node, event):
        raise IllegalTransition(f"{fsm.node.value} --{event.value}--> {dst.value}")
    rec = TransitionRecord(
        now, fsm.node, dst, event, fault, fsm.instance_index, kw.pop("in_grasp_region", None)
    )
    return replace(fsm, node=dst, node_since=now, **kw), rec


def _plan(fsm: MissionState, inputs: FsmInputs, goal: Pose2_5D, cfg: MissionConfig,
          duration: Optional[float] = None) -> PolynomialTrajectory:
    """Plan from the current reference (or the estimate when idle) to ``goal``."""
    now = inputs.now
    traj = fsm.trajectory
    if traj is not None and now < traj.end_time():
        t = now - traj.t0
        start = evaluate(traj, t).pose
        derivs = [derivative(traj, t, k) for k in range(1, 5)]
    else:
        start = traj.goal if traj is not None else inputs.vehicle
        derivs = None
    if duration is None:
        duration = cfg.timing.duration_for(start, goal)
    return plan_trajectory(start, goal, duration, derivs, t0=now)


def _arrived(fsm: MissionState, now: float, extra: float) -> bool:
    return fsm.trajectory is None or now >= fsm.trajectory.end_time() + extra


def pick_gripper_goal(target: Pose2_5D, cfg: MissionConfig) -> Pose2_5D:
    return compose(target, cfg.waypoints.pick_offset)


def pre_pick_vehicle_goal(target: Pose2_5D, cfg: MissionConfig) -> Pose2_5D:
    g = compose(pick_gripper_goal(target, cfg), Pose2_5D(-cfg.waypoints.pre_pick_offset, 0.0, 0.0, 0.0))
    return vehicle_for_gripper(g, cfg.gripper)


def pick_vehicle_goal(target: Pose2_5D, cfg: MissionConfig) -> Pose2_5D:
    return vehicle_for_gripper(pick_gripper_goal(target, cfg), cfg.gripper)


def place_gripper_goal(dest: Pose2_5D, instance: int, inputs: FsmInputs, cfg: MissionConfig) -> Pose2_5D:
    w = cfg.waypoints
    right = w.place_right_offset + instance * w.instance_place_increment
    dz = -0.5 * inputs.dest_height + 0.5 * inputs.held_height + w.place_clearance
    return compose(dest, Pose2_5D(0.0, -right, dz, 0.0))


def pre_place_vehicle_goal(dest: Pose2_5D, instance: int, inputs: FsmInputs, cfg: MissionConfig) -> Pose2_5D:
    w = cfg.waypoints
    g = compose(place_gripper_goal(dest, instance, inputs, cfg), Pose2_5D(-w.pre_place_offset, 0.0, w.pre_place_rise, 0.0))
    return vehicle_for_gripper(g, cfg.gripper)


def _refresh(track: Optional[ObjectTrack], track_id: Optional[int], tracks: TrackStore) -> Optional[ObjectTrack]:
    if track_id is None:
        return track
    fresh = tracks.get(track_id)
    return fresh if fresh is not None else track


def _entering_region(fsm: MissionState, inputs: FsmInputs, cfg: MissionConfig) -> bool:
    if fsm.node is not N.GO_PICK or fsm.region_checked or fsm.target is None:
        return False
    g = gripper_center(inputs.vehicle, cfg.gripper)
    goal = pick_gripper_goal(fsm.target.estimate, cfg)
    return g.distance_to(goal) < cfg.faults.grasp_entry_radius


def _suspended(fsm: MissionState, inputs: FsmInputs, cfg: MissionConfig) -> bool:
    if fsm.node is N.CLOSE_GRIPPER:
        return True
    if fsm.target is None:
        return False
    g = gripper_center(inputs.vehicle, cfg.gripper)
    return g.distance_to(fsm.target.estimate) < cfg.faults.occlusion_range


# -- public operations -------------------------------------------------------------


def monitor(fsm: MissionState, inputs: FsmInputs, cfg: MissionConfig) -> list[Fault]:
    faults = []
    now = inputs.now
    fc = cfg.faults
    if fsm.node in (N.TRACKING_TARGET, N.GO_PRE_PICK, N.GO_PICK) and fsm.target is not None:
        if now - fsm.target.last_update > fc.tracking_timeout and not _suspended(fsm, inputs, cfg):
            faults.append(Fault.TRACK_TIMEOUT)
    if _entering_region(fsm, inputs, cfg):
        goal = pick_vehicle_goal(fsm.target.estimate, cfg)
        if abs(inputs.vehicle.z - goal.z) > fc.z_error_max:
            faults.append(Fault.Z_ERROR_EXCEEDED)
        if abs(wrap_angle(inputs.vehicle.yaw - goal.yaw)) > fc.yaw_error_max:
            faults.append(Fault.YAW_ERROR_EXCEEDED)
    if (
        fsm.node is N.CLOSE_GRIPPER
        and fsm.close_at is not None
        and now - fsm.close_at >= fc.grasp_check_delay
        and not inputs.grip_switch
    ):
        faults.append(Fault.GRASP_FAILED)
    return faults


def raise_fault(
    fsm: MissionState, fault: Fault, inputs: FsmInputs, cfg: MissionConfig
) -> tuple[MissionState, FsmOutput]:
    """Log ``fault`` and fly home, or abort once resets are exhausted.

    Faults outside the pick phase are ignored: the place phase never resets.
    """
    if fsm.node not in PICK_FAULT_NODES:
        return fsm, FsmOutput()
    now = inputs.now
    resets = fsm.instance_resets + 1
    common = dict(
        reset_count=fsm.reset_count + 1,
        instance_resets=resets,
        fault_log=fsm.fault_log + ((now, fault),),
        region_checked=False,
        close_at=None,
    )
    if resets > cfg.faults.max_resets:
        new, rec = _move(fsm, E.FAULT, N.ABORTED, now, fault, trajectory=None, goal=None, **common)
        return new, FsmOutput(gripper="open", transitions=(rec,))
    traj = _plan(fsm, inputs, fsm.initial_pose, cfg)
    new, rec = _move(fsm, E.FAULT, N.RESETTING, now, fault, trajectory=traj, goal=fsm.initial_pose, **common)
    return new, FsmOutput(trajectory=traj, gripper="open", transitions=(rec,))


def abandon(fsm: MissionState, inputs: FsmInputs, cfg: MissionConfig) -> tuple[MissionState, FsmOutput]:
    """End the current instance after a physical failure (knock-over, collision, drop)."""
    if fsm.node not in ABANDONABLE:
        return fsm, FsmOutput()
    new, rec = _move(fsm, E.ABANDON, N.INSTANCE_COMPLETE, inputs.now, region_checked=False, close_at=None)
    return _enter_instance_complete(new, inputs, cfg, (rec,), gripper="open")


def _enter_instance_complete(fsm, inputs, cfg, recs, gripper=None):
    if fsm.instance_index + 1 < fsm.instance_count:
        traj = _plan(fsm, inputs, fsm.initial_pose, cfg)
        fsm = replace(fsm, trajectory=traj, goal=fsm.initial_pose)
        return fsm, FsmOutput(trajectory=traj, gripper=gripper, transitions=recs)
    return fsm, FsmOutput(gripper=gripper, transitions=recs)


def search_destination(
    fsm: MissionState, inputs: FsmInputs, cfg: MissionConfig
) -> tuple[MissionState, FsmOutput]:
    """One tick of the downward search for the destination object."""
    now = inputs.now
    w = cfg.waypoints
    dest = closest_target(
        inputs.tracks, inputs.vehicle, inputs.dest_class, now, cfg.association, cfg.dest_min_steps
    )
    if dest is not None:
        goal = pre_place_vehicle_goal(dest.estimate, fsm.instance_index, inputs, cfg)
        traj = _plan(fsm, inputs, goal, cfg)
        new, rec = _move(fsm, E.DESTINATION_SEEN, N.GO_PRE_PLACE, now,
                         dest_id=dest.track_id, dest=dest, trajectory=traj, goal=goal)
        return new, FsmOutput(trajectory=traj, transitions=(rec,))
    if not _arrived(fsm, now, 0.0) or now - fsm.search_hold_since < w.search_dwell:
        return fsm, FsmOutput()
    base = fsm.goal if fsm.goal is not None else inputs.vehicle
    lower = Pose2_5D(base.x, base.y, base.z - w.search_step_down, base.yaw)
    if lower.z >= w.min_search_altitude:
        traj = _plan(fsm, inputs, lower, cfg)
        new = replace(fsm, trajectory=traj, goal=lower, search_descents=fsm.search_descents + 1,
                      search_hold_since=traj.end_time())
        return new, FsmOutput(trajectory=traj, descended=True)
    new, rec = _move(fsm, E.DESTINATION_NOT_FOUND, N.INSTANCE_COMPLETE, now, destination_not_found=True)
    return _enter_instance_complete(new, inputs, cfg, (rec,), gripper="open")


def step(fsm: MissionState, inputs: FsmInputs, cfg: MissionConfig) -> tuple[MissionState, FsmOutput]:
    """Advance the mission by one tick. Pure: returns a new state and commands."""
    if fsm.terminal:
        return fsm, FsmOutput()
    now = inputs.now
    target = _refresh(fsm.target, fsm.target_id, inputs.tracks)
    if target is not fsm.target:
        fsm = replace(fsm, target=target)

    faults = monitor(fsm, inputs, cfg)
    if faults:
        return raise_fault(fsm, faults[0], inputs, cfg)

    node = fsm.node
    if node is N.WAITING_TO_PICK:
        t = closest_target(inputs.tracks, inputs.vehicle, inputs.target_class, now, cfg.association)
        if t is None:
            return fsm, FsmOutput()
        new, rec = _move(fsm, E.TARGET_SEEN, N.TRACKING_TARGET, now, target_id=t.track_id, target=t)
        return new, FsmOutput(transitions=(rec,))

    if node is N.TRACKING_TARGET:
        t = closest_target(inputs.tracks, inputs.vehicle, inputs.target_class, now, cfg.association)
        if t is not None and t.track_id != fsm.target_id:
            fsm = replace(fsm, target_id=t.track_id, target=t)
        t = fsm.target
        if t.step_count < cfg.min_track_steps or now - fsm.node_since < cfg.tracking_dwell:
            return fsm, FsmOutput()
        goal = pre_pick_vehicle_goal(t.estimate, cfg)
        traj = _plan(fsm, inputs, goal, cfg)
        new, rec = _move(fsm, E.TRACK_READY, N.GO_PRE_PICK, now, trajectory=traj, goal=goal)
        return new, FsmOutput(trajectory=traj, transitions=(rec,))

    if node is N.GO_PRE_PICK:
        if not _arrived(fsm, now, cfg.plateau_dwell):
            return fsm, FsmOutput()
        goal = pick_vehicle_goal(fsm.target.estimate, cfg)
        traj = _plan(fsm, inputs, goal, cfg)
        new, rec = _move(fsm, E.ARRIVED, N.GO_PICK, now, trajectory=traj, goal=goal, region_checked=False)
        return new, FsmOutput(trajectory=traj, transitions=(rec,))

    if node is N.GO_PICK:
        if _entering_region(fsm, inputs, cfg):
            fsm = replace(fsm, region_checked=True)
        desired = pick_gripper_goal(fsm.target.estimate, cfg)
        gripper = gripper_center(inputs.vehicle, cfg.gripper)
        inside = in_grasp_region(gripper, desired, cfg.tolerances)
        if inside and fsm.region_checked:
            new, rec = _move(fsm, E.IN_GRASP_REGION, N.CLOSE_GRIPPER, now, close_at=now,
                             in_grasp_region=True)
            return new, FsmOutput(gripper="close", transitions=(rec,))
        goal = pick_vehicle_goal(fsm.target.estimate, cfg)
        if (
            fsm.goal is not None
            and fsm.trajectory is not None
            and now < fsm.trajectory.end_time()
            and fsm.goal.distance_to(goal) > cfg.replan_threshold
        ):
            remaining = max(fsm.trajectory.end_time() - now, 0.3)
            traj = _plan(fsm, inputs, goal, cfg, duration=remaining)
            return replace(fsm, trajectory=traj, goal=goal), FsmOutput(trajectory=traj)
        if fsm.trajectory is not None and now >= fsm.trajectory.end_time() and fsm.goal.distance_to(goal) > cfg.replan_threshold:
            traj = _plan(fsm, inputs, goal, cfg)
            return replace(fsm, trajectory=traj, goal=goal), FsmOutput(trajectory=traj)
        return fsm, FsmOutput()

    if node is N.CLOSE_GRIPPER:
        if now - fsm.close_at < cfg.faults.grasp_check_delay:
            return fsm, FsmOutput()
        # the switch is pressed here, otherwise monitor() raised GraspFailed
        goal = compose(fsm.goal, cfg.waypoints.post_pick_offset)
        traj = _plan(fsm, inputs, goal, cfg)
        new, rec = _move(fsm, E.GRIP_CONFIRMED, N.POST_PICK, now, trajectory=traj, goal=goal)
        return new, FsmOutput(trajectory=traj, transitions=(rec,))

    if node is N.POST_PICK:
        if not _arrived(fsm, now, cfg.arrive_settle):
            return fsm, FsmOutput()
        new, rec = _move(fsm, E.ARRIVED, N.SEARCH_DESTINATION, now, search_hold_since=now)
        return new, FsmOutput(transitions=(rec,))

    if node is N.SEARCH_DESTINATION:
        return search_destination(fsm, inputs, cfg)

    if node is N.GO_PRE_PLACE:
        dest = _refresh(fsm.dest, fsm.dest_id, inputs.tracks)
        fsm = replace(fsm, dest=dest)
        if not _arrived(fsm, now, cfg.arrive_settle):
            return fsm, FsmOutput()
        g = place_gripper_goal(dest.estimate, fsm.instance_index, inputs, cfg)
        goal = vehicle_for_gripper(g, cfg.gripper)
        traj = _plan(fsm, inputs, goal, cfg)
        new, rec = _move(fsm, E.ARRIVED, N.GO_PLACE, now, trajectory=traj, goal=goal)
        return new, FsmOutput(trajectory=traj, transitions=(rec,))

    if node is N.GO_PLACE:
        if not _arrived(fsm, now, 0.0):
            return fsm, FsmOutput()
        g = gripper_center(inputs.vehicle, cfg.gripper)
        want = gripper_center(fsm.goal, cfg.gripper)
        if g.distance_to(want) > cfg.waypoints.place_tolerance:
            return fsm, FsmOutput()
        new, rec = _move(fsm, E.AT_PLACE, N.RELEASE_OBJECT, now, release_at=now)
        return new, FsmOutput(gripper="open", transitions=(rec,))

    if node is N.RELEASE_OBJECT:
        if now - fsm.release_at < cfg.release_delay:
            return fsm, FsmOutput()
        new, rec = _move(fsm, E.RELEASED, N.INSTANCE_COMPLETE, now)
        return _enter_instance_complete(new, inputs, cfg, (rec,))

    if node is N.INSTANCE_COMPLETE:
        if fsm.instance_index + 1 >= fsm.instance_count:
            new, rec = _move(fsm, E.ALL_DONE, N.MISSION_COMPLETE, now)
            return new, FsmOutput(transitions=(rec,))
        if not _arrived(fsm, now, cfg.arrive_settle):
            return fsm, FsmOutput()
        new, rec = _move(
            fsm, E.NEXT_INSTANCE, N.WAITING_TO_PICK, now,
            instance_index=fsm.instance_index + 1, instance_resets=0, target_id=None,
            target=None, dest_id=None, dest=None, destination_not_found=False, search_descents=0,
        )
        return new, FsmOutput(transitions=(rec,))

    if node is N.RESETTING:
        if not _arrived(fsm, now, cfg.arrive_settle):
            return fsm, FsmOutput()
        new, rec = _move(fsm, E.ARRIVED, N.WAITING_TO_PICK, now, target_id=None, target=None)
        return new, FsmOutput(transitions=(rec,))

    raise AssertionError(f"unhandled node {node}")


# -- analysis of the transition table -------------------------------------------------


def transition_graph() -> dict[Node, set[tuple[Event, Node]]]:
    """Enumerate every (node, event) pair through ``next_nodes``."""
    graph: dict[Node, set[tuple[Event, Node]]] = {n: set() for n in Node}
    for n in Node:
        for e in Event:
            for dst in next_nodes(n, e):
                graph[n].add((e, dst))
    return graph


def _reachable(graph, start: Node, blocked: frozenset = frozenset()) -> set[Node]:
    seen = {start}
    queue = deque([start])
    while queue:
        n = queue.popleft()
        if n in blocked and n != start:
            continue
        for _, dst in graph[n]:
            if dst not in seen:
                seen.add(dst)
                queue.append(dst)
    return seen


@dataclass
class ModelCheckReport:
    close_only_via_grasp_region: bool
    no_place_phase_reset: bool
    no_dead_states: bool
    reachable: set = field(default_factory=set)
    details: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.close_only_via_grasp_region and self.no_place_phase_reset and self.no_dead_states


def model_check() -> ModelCheckReport:
    """Exhaustively check safety properties of the transition table.

    * every edge into CloseGripper is labelled InGraspRegion;
    * from a place-phase node, Resetting cannot be reached before the
      instance completes;
    * every reachable non-terminal node can still reach a terminal node.
    """
    graph = transition_graph()
    details = []
    reachable = _reachable(graph, N.WAITING_TO_PICK)

    close_ok = True
    for src, edges in graph.items():
        for ev, dst in edges:
            if dst is N.CLOSE_GRIPPER and ev is not E.IN_GRASP_REGION:
                close_ok = False
                details.append(f"{src.value} --{ev.value}--> CloseGripper")

    place_ok = True
    for src in PLACE_NODES:
        within = _reachable(graph, src, blocked=frozenset({N.INSTANCE_COMPLETE}))
        if N.RESETTING in within:
            place_ok = False
            details.append(f"Resetting reachable from {src.value}")

    dead_ok = True
    for n in reachable:
        if n in TERMINAL_NODES:
            if graph[n]:
                dead_ok = False
                details.append(f"terminal {n.value} has outgoing edges")
            continue
        if not graph[n] or not (_reachable(graph, n) & TERMINAL_NODES):
            dead_ok = False
            details.append(f"dead state {n.value}")
    return ModelCheckReport(close_ok, place_ok, dead_ok, reachable, details)


# -- traces -------------------------------------------------------------------------------


def write_trace(path, records: Iterable[TransitionRecord], **extra) -> None:
    Path(path).write_text("".join(r.to_json(**extra) + "\n" for r in records))


def read_trace(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def validate_trace(rows: Iterable[dict]) -> list[str]:
    """Check a trace (JSON rows, possibly several trials) against the table.

    Returns a list of problems; empty means the trace is a path in the graph.
    """
    problems = []
    current: dict = {}
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            problems.append(f"row {i}: not an object")
            continue
        key = (row.get("scenario"), row.get("trial"))
        try:
            src, dst, ev = Node(row["from"]), Node(row["to"]), Event(row["event"])
        except (KeyError, ValueError, TypeError) as exc:
            problems.append(f"row {i}: malformed ({exc})")
            continue
        expected = current.get(key, N.WAITING_TO_PICK)
        if src is not expected:
            problems.append(f"row {i}: starts at {src.value}, expected {expected.value}")
        if dst not in next_nodes(src, ev):
            problems.append(f"row {i}: illegal edge {src.value} --{ev.value}--> {dst.value}")
        if dst is N.CLOSE_GRIPPER and row.get("in_grasp_region") is not True:
            problems.append(f"row {i}: CloseGripper entered outside the grasp region")
        current[key] = dst
    return problems
