"""Scenario generation, closed-loop trials, Monte Carlo runs and reports."""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import SimConfig
from .fsm import (
    ABANDONABLE,
    Event,
    FsmInputs,
    MissionState,
    Node,
    TransitionRecord,
    abandon,
    pick_vehicle_goal,
    step as fsm_step,
)
from .geometry import Point3, Pose2_5D, body_to_world, compose
from .gripper import (
    GraspOutcome,
    GripperState,
    Jaws,
    PlaceOutcome,
    attempt_grasp,
    gripper_center,
    grip_switch,
    release,
    vehicle_for_gripper,
)
from .perception import ObjectClass, TrackStore, ingest, prune_stale
from .trajectory import ReferenceState, evaluate, track
from .vehicle import (
    ClutterItem,
    DetectionBias,
    EstimatorState,
    MagnetometerHealth,
    Scene,
    SceneObject,
    Surface,
    VehicleState,
    check_knock_over,
    check_surface_contact,
    estimate,
    generate_detections,
    gripper_frame,
    inject_drift,
    step_dynamics,
)


class ScenarioKind(str, enum.Enum):
    SINGLE_BOTTLE = "SingleBottle"
    SINGLE_CAN = "SingleCan"
    CLUTTER_CAN = "ClutterCan"
    OBSTRUCTED_CAN = "ObstructedCan"
    MULTI_INSTANCE_CAN = "MultiInstanceCan"


SCENARIO_ORDER = tuple(ScenarioKind)
DEFAULT_TRIALS = {
    ScenarioKind.SINGLE_BOTTLE: 20,
    ScenarioKind.SINGLE_CAN: 20,
    ScenarioKind.CLUTTER_CAN: 10,
    ScenarioKind.OBSTRUCTED_CAN: 10,
    ScenarioKind.MULTI_INSTANCE_CAN: 5,
}


class FailureMode(str, enum.Enum):
    KNOCK_OVER = "KnockOver"
    LOW_APPROACH = "LowApproach"
    ESTIMATOR_DIVERGED = "EstimatorDiverged"
    DESTINATION_NOT_FOUND = "DestinationNotFound"
    RESET_LIMIT = "ResetLimit"
    TIMEOUT = "Timeout"


PICK_FAILURES = (FailureMode.KNOCK_OVER, FailureMode.LOW_APPROACH)
PLACE_FAILURES = (FailureMode.ESTIMATOR_DIVERGED, FailureMode.DESTINATION_NOT_FOUND)


class SimDiverged(RuntimeError):
    """Non-finite vehicle state: a bug, never a scenario outcome."""


class IoFailure(OSError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind
    trial_count: int
    starting_distance_range: tuple[float, float] = (0.78, 1.11)
    clutter_item_count: int = 0
    occluded_fraction_range: tuple[float, float] = (0.0, 0.0)
    instance_count: int = 1
    seed_base: int = 0

    def __post_init__(self):
        if self.trial_count <= 0:
            raise ValueError("trial_count must be positive")
        lo, hi = self.starting_distance_range
        if not 0 < lo <= hi:
            raise ValueError("bad starting_distance_range")

    @classmethod
    def for_kind(cls, kind, cfg: SimConfig, trials: Optional[int] = None, seed_base: int = 0, **kw) -> "ScenarioSpec":
        kind = ScenarioKind(kind)
        lay = cfg.layout
        args = dict(
            kind=kind,
            trial_count=DEFAULT_TRIALS[kind] if trials is None else trials,
            starting_distance_range=lay.starting_distance_range,
            seed_base=seed_base,
        )
        if kind is ScenarioKind.CLUTTER_CAN:
            args["clutter_item_count"] = lay.clutter_count
        if kind is ScenarioKind.OBSTRUCTED_CAN:
            args["occluded_fraction_range"] = lay.occluded_fraction_range
        if kind is ScenarioKind.MULTI_INSTANCE_CAN:
            args["instance_count"] = 2
        args.update(kw)
        return cls(**args)


@dataclass(frozen=True)
class FaultInjection:
    """Deterministic fault hooks for testing failure handling."""

    grip_switch_failures: int = 0  # first N grasps read an open switch
    target_estimate_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)  # world frame [m]
    drift_jump: tuple[float, float, float] = (0.0, 0.0, 0.0)  # VO step on entering GoPlace
    hide_destination: bool = False
    mag_fault_at: Optional[float] = None


@dataclass
class GeneratedScenario:
    kind: ScenarioKind
    trial_index: int
    seed: int
    scene: Scene
    initial_pose: Pose2_5D
    targets: tuple[str, ...]
    destination: str
    table: str
    target_class: ObjectClass
    dest_class: ObjectClass
    mag_fault_at: Optional[float] = None


@dataclass
class TrialRecord:
    scenario: str
    trial: int
    instance: int
    seed: int
    pick_success: bool
    place_success: Optional[bool]
    reset_count: int
    pick_time: Optional[float]
    starting_distance: float
    failure_mode: Optional[str]
    place_offset: Optional[float] = None  # release point right of the destination [m]
    search_descents: int = 0
    pick_tracks_min: Optional[int] = None
    pick_tracks_max: Optional[int] = None
    # ((label, ((tau, distance), ...)), ...) per approach attempt
    distance_trace: tuple = ()

    def __post_init__(self):
        if self.place_success is not None and not self.pick_success:
            raise ValueError("place_success is only defined after a successful pick")


@dataclass
class TrialResult:
    records: list[TrialRecord]
    transitions: list[TransitionRecord]


# -- scenario generation ----------------------------------------------------------


def trial_seed(seed_base: int, kind: ScenarioKind, trial_index: int) -> int:
    ss = np.random.SeedSequence([int(seed_base), SCENARIO_ORDER.index(kind), int(trial_index)])
    return int(ss.generate_state(1)[0])


def _u(rng, lo_hi) -> float:
    lo, hi = lo_hi
    return float(lo if hi == lo else rng.uniform(lo, hi))


def generate_scenario(spec: ScenarioSpec, trial_index: int, cfg: SimConfig = SimConfig()) -> GeneratedScenario:
    """Sample a scene and an initial vehicle pose for one trial."""
    seed = trial_seed(spec.seed_base, spec.kind, trial_index)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    lay = cfg.layout
    kind = spec.kind
    bottle = kind is ScenarioKind.SINGLE_BOTTLE
    target_class = ObjectClass.TARGET_BOTTLE if bottle else ObjectClass.TARGET_CAN
    dest_class = ObjectClass.DEST_BOTTLE if bottle else ObjectClass.DEST_CAN
    diameter, height = lay.bottle_size if bottle else lay.can_size

    cart_top = _u(rng, lay.cart_top_range)
    tz = cart_top + 0.5 * height
    tx, ty = 0.0, 0.0
    yaw = float(rng.uniform(-lay.target_yaw_jitter, lay.target_yaw_jitter))
    occluded = 0.0
    occluder = None
    if kind is ScenarioKind.OBSTRUCTED_CAN:
        sign = 1.0 if rng.random() < 0.5 else -1.0
        yaw = sign * _u(rng, lay.obstructed_yaw_range)
        occluded = _u(rng, spec.occluded_fraction_range)
        occluder = (math.pi, lay.occluder_half_width)  # blocks the view from the start side

    start_d = _u(rng, spec.starting_distance_range)
    target_poses = [Pose2_5D(tx, ty, tz, yaw)]
    if spec.instance_count > 1:
        sep = _u(rng, lay.instance_separation_range)
        target_poses = [
            Pose2_5D(tx, ty + (i - 0.5 * (spec.instance_count - 1)) * sep, tz, yaw)
            for i in range(spec.instance_count)
        ]
    objects = [
        SceneObject(
            f"target{i}", target_class, p, diameter, height, occluded, cart_top
        )
        for i, p in enumerate(target_poses)
    ]
    span_y = max(abs(p.y) for p in target_poses)
    surfaces = [
        Surface("cart", (tx, ty), (lay.cart_half_extent[0], lay.cart_half_extent[1] + span_y), cart_top)
    ]
    initial = vehicle_for_gripper(Pose2_5D(tx - start_d, ty, tz, 0.0), cfg.mission.gripper)

    clutter = []
    for _ in range(spec.clutter_item_count):
        r = _u(rng, lay.clutter_radius_range)
        a = float(rng.uniform(-1.3, 1.3))
        z = cart_top + float(rng.uniform(0.03, 0.08))
        cls = target_class if rng.random() < 0.7 else dest_class
        clutter.append(ClutterItem(Point3(tx + r * math.cos(a), ty + r * math.sin(a), z), cls))

    # destination: ahead of where the camera points after the post-pick move
    mid = Pose2_5D(tx, sum(p.y for p in target_poses) / len(target_poses), tz, yaw)
    post = compose(pick_vehicle_goal(mid, cfg.mission), cfg.mission.waypoints.post_pick_offset)
    cam = body_to_world(cfg.camera.mount, post)
    pitch, half = cfg.camera.pitch_down, cfg.camera.vertical_half_fov
    r = _u(rng, lay.dest_range)
    u = rng.random()
    p_high = lay.obstructed_dest_high_prob if kind is ScenarioKind.OBSTRUCTED_CAN else lay.dest_high_prob
    if u < p_high:
        dep = -(half - pitch) - float(rng.uniform(0.05, 0.15))  # above the top edge
    elif u < p_high + lay.dest_low_prob:
        dep = pitch + half + float(rng.uniform(0.03, 0.15))  # below the bottom edge
    else:
        dep = float(rng.uniform(pitch - half + 0.12, pitch + half - 0.12))
    lateral = float(rng.uniform(-lay.dest_lateral_jitter, lay.dest_lateral_jitter))
    c, s = math.cos(post.yaw), math.sin(post.yaw)
    dz = cam.z - r * math.tan(dep)
    dest_pose = Pose2_5D(
        cam.x + c * r - s * lateral,
        cam.y + s * r + c * lateral,
        max(dz, 0.5 * height + 0.05),
        post.yaw + float(rng.uniform(-0.05, 0.05)),
    )
    table_top = dest_pose.z - 0.5 * height
    objects.append(SceneObject("destination", dest_class, dest_pose, diameter, height, 0.0, table_top))
    tc = compose(dest_pose, Pose2_5D(0.0, -0.2, 0.0, 0.0))
    surfaces.append(Surface("table", (tc.x, tc.y), lay.table_half_extent, table_top, dest_pose.yaw))

    mag_at = None
    if rng.random() < lay.mag_fault_prob:
        mag_at = float(rng.uniform(5.0, 40.0))
    return GeneratedScenario(
        kind, trial_index, seed, Scene(objects, clutter, surfaces, occluder), initial,
        tuple(o.name for o in objects[:-1]), "destination", "table", target_class, dest_class, mag_at,
    )


# -- closed loop ------------------------------------------------------------------------

_PICK_NODES = frozenset(
    {Node.WAITING_TO_PICK, Node.TRACKING_TARGET, Node.GO_PRE_PICK, Node.GO_PICK, Node.CLOSE_GRIPPER, Node.RESETTING}
)
_NO_PRUNE = frozenset({Node.GO_PRE_PICK, Node.GO_PICK, Node.CLOSE_GRIPPER})
_APPROACH = frozenset(
    {Node.WAITING_TO_PICK, Node.TRACKING_TARGET, Node.GO_PRE_PICK, Node.GO_PICK, Node.CLOSE_GRIPPER}
)


@dataclass
class _Instance:
    index: int
    start: float
    resets: int = 0
    pick_success: bool = False
    pick_time: Optional[float] = None
    place_success: Optional[bool] = None
    failure: Optional[FailureMode] = None
    place_offset: Optional[float] = None
    descents: int = 0
    tracks_min: Optional[int] = None
    tracks_max: Optional[int] = None
    final_target: Optional[Pose2_5D] = None
    segments: list = field(default_factory=list)
    open_segment: Optional[list] = None
    segment_start: float = 0.0

    def fail(self, mode: FailureMode):
        if self.failure is None:
            self.failure = mode


class _Trial:
    def __init__(self, gen: GeneratedScenario, cfg: SimConfig, injection: FaultInjection):
        self.gen = gen
        self.cfg = cfg
        self.inj = injection
        self.geom = cfg.mission.gripper
        self.scene = gen.scene
        streams = np.random.SeedSequence(gen.seed).spawn(4)[1:]
        self.rng_est, self.rng_det, self.rng_dist = (np.random.default_rng(s) for s in streams)
        self.intr = cfg.camera.intrinsics()
        self.extr = cfg.camera.extrinsics()
        self.noise = cfg.noise_by_class()
        self.knock = cfg.knock_by_class()
        self.bias = DetectionBias(self.scene, self.noise)
        for name in gen.targets:
            self.bias.fixed[name] = tuple(injection.target_estimate_bias)
        self.hidden = (gen.destination,) if injection.hide_destination else ()
        self.mag_at = injection.mag_fault_at if injection.mag_fault_at is not None else gen.mag_fault_at

        self.state = VehicleState(gen.initial_pose)
        self.est = EstimatorState.from_truth(gen.initial_pose)
        self.tracks = TrackStore()
        n_inst = len(gen.targets)
        self.fsm = MissionState.start(gen.initial_pose, 0.0, n_inst)
        self.initial_gripper = gripper_center(gen.initial_pose, self.geom)
        self.traj = None
        self.gripper = GripperState()
        self.held: Optional[SceneObject] = None
        self.outcome: Optional[GraspOutcome] = None
        self.grasp_time = 0.0
        self.switch_forced_open = False
        self.grip_failures_left = injection.grip_switch_failures
        self.pending_close: Optional[float] = None
        self.transitions: list[TransitionRecord] = []
        self.records: list[TrialRecord] = []
        self.inst = _Instance(0, 0.0)
        self.inst.open_segment = []
        self.dest_obj = self.scene.find(gen.destination)
        self.table = next(s for s in self.scene.surfaces if s.name == gen.table)
        self.held_height = self.scene.find(gen.targets[0]).height

    # -- helpers -------------------------------------------------------------------

    def _switch(self, t: float) -> bool:
        if self.held is None or self.switch_forced_open:
            return False
        return grip_switch(self.outcome, t - self.grasp_time, self.geom.slip_delay)

    def _set_down(self, obj: SceneObject, at: Pose2_5D):
        obj.held = False
        surf = self.scene.surface_under(at.x, at.y, at.z)
        if surf is None:
            obj.toppled = True
            return
        obj.pose = Pose2_5D(at.x, at.y, surf.top_z + 0.5 * obj.height, obj.pose.yaw)
        obj.standing_surface_z = surf.top_z

    def _close_segment(self, t: float, label: str):
        seg = self.inst.open_segment
        self.inst.open_segment = None
        target = self.fsm.target.estimate if self.fsm.target is not None else None
        if target is not None:
            self.inst.final_target = target
        if not seg or target is None:
            return
        t0, t1 = seg[0][0], max(seg[-1][0], seg[0][0] + 1e-9)
        pts = tuple(
            ((ts - t0) / (t1 - t0), math.dist((x, y, z), target.position)) for ts, x, y, z in seg
        )
        self.inst.segments.append((label, pts))

    def _finish_instance(self, t: float):
        inst = self.inst
        if inst.open_segment is not None:
            self._close_segment(t, "failure")
        if not inst.pick_success and inst.failure is None:
            inst.fail(FailureMode.TIMEOUT)
        ref = inst.final_target
        if ref is None:
            ref = self.scene.find(self.gen.targets[min(inst.index, len(self.gen.targets) - 1)]).pose
        # records carry exactly the precision written to disk, so reports rebuild bit-identically
        self.records.append(
            TrialRecord(
                scenario=self.gen.kind.value,
                trial=self.gen.trial_index,
                instance=inst.index,
                seed=self.gen.seed,
                pick_success=inst.pick_success,
                place_success=inst.place_success if inst.pick_success else None,
                reset_count=inst.resets,
                pick_time=_r6(inst.pick_time),
                starting_distance=_r6(self.initial_gripper.distance_to(ref)),
                failure_mode=None if inst.failure is None else inst.failure.value,
                place_offset=_r6(inst.place_offset),
                search_descents=inst.descents,
                pick_tracks_min=inst.tracks_min,
                pick_tracks_max=inst.tracks_max,
                distance_trace=tuple(
                    (label, tuple((_r6(tau), _r6(d)) for tau, d in pts)) for label, pts in inst.segments
                ),
            )
        )

    def _abandon(self, t: float, mode: FailureMode, inputs: FsmInputs):
        self.inst.fail(mode)
        if self.inst.pick_success and mode in PICK_FAILURES:
            # object lost after a slip: the pick did not hold
            self.inst.pick_success = False
            self.inst.pick_time = None
        if self.inst.open_segment is not None:
            self._close_segment(t, "failure")
        if self.fsm.node in ABANDONABLE:
            self.fsm, out = abandon(self.fsm, inputs, self.cfg.mission)
            self._apply(out, t, inputs)

    # -- command / event handling -------------------------------------------------------

    def _apply(self, out, t: float, inputs: FsmInputs):
        if out.trajectory is not None:
            self.traj = out.trajectory
        if out.descended:
            self.inst.descents += 1
        for rec in out.transitions:
            self.transitions.append(rec)
            self._on_transition(rec, t)
        if out.gripper == "close":
            self.pending_close = t + self.geom.close_time
            self.gripper = GripperState(Jaws.CLOSING)
        elif out.gripper == "open":
            self._open(t)

    def _open(self, t: float):
        self.pending_close = None
        if self.held is None:
            self.gripper = GripperState()
            return
        obj = self.held
        gpose = gripper_center(self.state.pose, self.geom)
        if self.fsm.node is Node.RELEASE_OBJECT:
            k = self.inst.index
            w = self.cfg.mission.waypoints
            right = w.place_right_offset + k * w.instance_place_increment
            intended = compose(self.dest_obj.pose, Pose2_5D(0.0, -right, 0.0, 0.0))
            outcome, self.gripper = release(self.gripper, gpose, intended, self.table)
            self.inst.place_offset = -gripper_frame(gpose.position, self.dest_obj.pose)[1]
            if self.inst.pick_success:
                self.inst.place_success = outcome is PlaceOutcome.SUCCESS
                if outcome is not PlaceOutcome.SUCCESS:
                    self.inst.fail(FailureMode.ESTIMATOR_DIVERGED)
        else:
            self.gripper = GripperState()
        self._set_down(obj, gpose)
        self.held = None
        self.outcome = None
        self.switch_forced_open = False

    def _on_transition(self, rec: TransitionRecord, t: float):
        inst = self.inst
        ev, dst = rec.event, rec.dst
        if ev is Event.FAULT:
            if dst is Node.RESETTING:
                inst.resets += 1
                self._close_segment(t, "reset")
            else:
                inst.fail(FailureMode.RESET_LIMIT)
                self._close_segment(t, "failure")
        elif ev is Event.ARRIVED and dst is Node.WAITING_TO_PICK:
            inst.open_segment = []
        elif ev is Event.GRIP_CONFIRMED:
            if self.outcome is GraspOutcome.SUCCESS:
                inst.pick_success = True
                inst.pick_time = self.grasp_time - inst.start
                self._close_segment(t, "success")
            else:
                self._close_segment(t, "failure")
        elif ev is Event.ARRIVED and dst is Node.GO_PLACE:
            if any(self.inj.drift_jump):
                self.est = inject_drift(self.est, self.inj.drift_jump)
        elif ev is Event.DESTINATION_NOT_FOUND:
            if inst.pick_success:
                inst.place_success = False
            inst.fail(FailureMode.DESTINATION_NOT_FOUND)
        elif ev is Event.NEXT_INSTANCE:
            self._finish_instance(t)
            self.inst = _Instance(inst.index + 1, t)
            self.inst.open_segment = []
            if not any(not o.toppled and not o.held for o in self._targets()):
                self.inst.fail(FailureMode.KNOCK_OVER)
        elif ev is Event.ALL_DONE:
            self._finish_instance(t)

    def _targets(self):
        return [self.scene.find(n) for n in self.gen.targets]

    # -- main loop ---------------------------------------------------------------------

    def run(self) -> TrialResult:
        cfg = self.cfg
        lp = cfg.loop
        dt = lp.dt
        ctrl_every = max(1, round(1.0 / (lp.control_hz * dt)))
        est_every = max(1, round(1.0 / (cfg.estimator.rate_hz * dt)))
        trace_every = max(1, round(1.0 / (lp.trace_hz * dt)))
        det_period = 1.0 / cfg.can_detection.detection_rate_hz
        next_det = 0.0
        mcfg = cfg.mission
        assoc = mcfg.association
        dist = (0.0, 0.0, 0.0)
        block = np.empty((0, 3))
        bi = 0
        cmd = None
        t_est = 0.0
        n_steps = int(math.ceil(lp.max_time / dt))
        target_objs = self._targets()

        for k in range(n_steps + 1):
            t = k * dt
            if self.mag_at is not None and t >= self.mag_at and self.est.magnetometer_health is MagnetometerHealth.HEALTHY:
                self.est = dataclasses.replace(self.est, magnetometer_health=MagnetometerHealth.FAULTED)
            if k % est_every == 0:
                self.est = estimate(self.state, self.est, cfg.estimator, est_every * dt, self.rng_est, t)
                t_est = t
            vest = self.est.estimate
            node = self.fsm.node
            gtrue = gripper_center(self.state.pose, self.geom)

            if t >= next_det - 1e-9:
                next_det += det_period
                biases = self.bias.step(det_period, self.rng_det, (self.state.pose.x, self.state.pose.y))
                dets = generate_detections(
                    self.scene, self.state, self.intr, self.extr, self.noise, self.rng_det, t,
                    gripper_position=gtrue.position, carrying=self.held is not None,
                    biases=biases, hidden=self.hidden,
                )
                # estimate carried forward to the image timestamp
                lag = t - t_est
                v = self.state.velocity
                vdet = Pose2_5D(
                    vest.x + v[0] * lag, vest.y + v[1] * lag, vest.z + v[2] * lag,
                    vest.yaw + self.state.yawrate * lag,
                )
                for d in dets:
                    ingest(d, vdet, self.intr, self.extr, self.tracks, assoc, cfg.filter)
                if node not in _NO_PRUNE:
                    keep = [i for i in (self.fsm.target_id, self.fsm.dest_id) if i is not None]
                    prune_stale(self.tracks, t, assoc, keep)
                elif self.held is None:
                    n = self.tracks.count(self.gen.target_class)
                    inst = self.inst
                    inst.tracks_min = n if inst.tracks_min is None else min(inst.tracks_min, n)
                    inst.tracks_max = n if inst.tracks_max is None else max(inst.tracks_max, n)

            # physical grasp adjudication
            if self.pending_close is not None and t >= self.pending_close - 1e-9:
                self.pending_close = None
                cands = [o for o in target_objs if not o.toppled and not o.held]
                obj = min(cands, key=lambda o: math.dist(o.pose.position, gtrue.position), default=None)
                self.outcome = attempt_grasp(gtrue, obj, self.geom)
                if self.outcome in (GraspOutcome.SUCCESS, GraspOutcome.TOO_HIGH_SLIP):
                    self.held = obj
                    obj.held = True
                    self.grasp_time = t
                    self.gripper = GripperState(Jaws.CLOSED, True, obj.name)
                    if self.grip_failures_left > 0:
                        self.grip_failures_left -= 1
                        self.switch_forced_open = True
                else:
                    self.gripper = GripperState(Jaws.CLOSED)

            inputs = None
            if k % ctrl_every == 0:
                inputs = FsmInputs(
                    self.tracks, vest, t, self._switch(t), self.gen.target_class, self.gen.dest_class,
                    self.held_height, self.dest_obj.height,
                )
                # slip: a too-high grip lets go
                if (
                    self.held is not None
                    and self.outcome is GraspOutcome.TOO_HIGH_SLIP
                    and t - self.grasp_time >= self.geom.slip_delay
                ):
                    obj = self.held
                    self.held = None
                    obj.held = False
                    obj.toppled = True
                    self.gripper = GripperState()
                    self._abandon(t, FailureMode.KNOCK_OVER, inputs)
                if self.fsm.node in _PICK_NODES and self.held is None:
                    vel = self.state.velocity
                    hit = check_knock_over(self.state, gtrue, self.scene, self.geom, self.knock, vel)
                    hit = [o for o in hit if o.name in self.gen.targets]
                    if hit:
                        for o in hit:
                            o.toppled = True
                        self._abandon(t, FailureMode.KNOCK_OVER, inputs)
                    elif check_surface_contact(gtrue, self.scene, self.geom) is not None:
                        self._abandon(t, FailureMode.LOW_APPROACH, inputs)
                self.fsm, out = fsm_step(self.fsm, inputs, mcfg)
                self._apply(out, t, inputs)
                if self.fsm.terminal:
                    break
                if self.traj is None:
                    ref = ReferenceState(self.fsm.initial_pose, (0.0,) * 4, (0.0,) * 4)
                else:
                    ref = evaluate(self.traj, t - self.traj.t0)
                cmd = track(ref, (vest.x, vest.y, vest.z), self.state.velocity, vest.yaw, cfg.controller)

            if k % trace_every == 0 and self.inst.open_segment is not None and self.fsm.node in _APPROACH:
                g = gripper_center(vest, self.geom)
                self.inst.open_segment.append((t, g.x, g.y, g.z))

            if bi >= len(block):
                block = self.rng_dist.standard_normal((4096, 3)).tolist()
                bi = 0
            dist = _ou(dist, cfg.disturbance, dt, block[bi])
            bi += 1
            self.state = step_dynamics(self.state, cmd, dt, cfg.vehicle, dist)
            if not self.state.is_finite():
                raise SimDiverged(f"non-finite state at t={t:.3f}")
            if self.held is not None:
                g = gripper_center(self.state.pose, self.geom)
                self.held.pose = Pose2_5D(g.x, g.y, g.z, self.held.pose.yaw)

        t = k * dt
        if self.fsm.node is Node.ABORTED:
            self._finish_instance(t)
        elif not self.fsm.terminal:
            self._finish_instance(t)
        # instances never started (mission ended early)
        while len(self.records) < len(self.gen.targets):
            idx = len(self.records)
            reason = self.records[-1].failure_mode if self.records else FailureMode.TIMEOUT.value
            if reason not in (FailureMode.RESET_LIMIT.value, FailureMode.TIMEOUT.value):
                reason = FailureMode.TIMEOUT.value
            self.inst = _Instance(idx, t)
            self.inst.fail(FailureMode(reason))
            self._finish_instance(t)
        return TrialResult(self.records, self.transitions)


def _r6(v):
    return None if v is None else round(v, 6)


def _ou(d, cfg, dt, normals):
    rho = math.exp(-dt / cfg.tau)
    k = math.sqrt(1.0 - rho * rho)
    s = cfg.sigma
    return (rho * d[0] + k * s[0] * normals[0], rho * d[1] + k * s[1] * normals[1], rho * d[2] + k * s[2] * normals[2])


def run_trial(
    gen: GeneratedScenario, cfg: SimConfig = SimConfig(), injection: FaultInjection = FaultInjection()
) -> TrialResult:
    """Fly one trial to MissionComplete, Aborted or the time limit."""
    gen = dataclasses.replace(gen, scene=_copy_scene(gen.scene))
    return _Trial(gen, cfg, injection).run()


def _copy_scene(scene: Scene) -> Scene:
    return Scene(
        [dataclasses.replace(o) for o in scene.objects], list(scene.clutter), list(scene.surfaces), scene.occluder
    )


# -- Monte Carlo -------------------------------------------------------------------------


def _run_task(args):
    spec, trial_index, cfg, injection = args
    gen = generate_scenario(spec, trial_index, cfg)
    res = run_trial(gen, cfg, injection)
    lines = [r.to_json(scenario=spec.kind.value, trial=trial_index) for r in res.transitions]
    return res.records, lines


def run_experiment(
    specs: Sequence[ScenarioSpec],
    cfg: SimConfig = SimConfig(),
    workers: int = 1,
    injection: FaultInjection = FaultInjection(),
) -> tuple[list[TrialRecord], list[str]]:
    """Run every trial of every spec; results come back in (spec, trial) order."""
    tasks = [(s, i, cfg, injection) for s in specs for i in range(s.trial_count)]
    if workers <= 1:
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (workers * 8))))
    records, lines = [], []
    for recs, ls in results:
        records.extend(recs)
        lines.extend(ls)
    return records, lines


# -- metrics ---------------------------------------------------------------------------------


def describe(values: Iterable[float]) -> Optional[dict]:
    v = np.asarray(sorted(values), dtype=float)
    if v.size == 0:
        return None
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {
        "count": int(v.size),
        "min": float(v[0]),
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "mean": float(v.mean()),
        "max": float(v[-1]),
    }


@dataclass
class ScenarioMetrics:
    trials: int
    pick_successes: int
    place_successes: int
    reset_trials: int
    starting_distance: Optional[dict]
    pick_time: Optional[dict]
    failure_modes: dict

    @property
    def pick_rate(self) -> float:
        return self.pick_successes / self.trials

    @property
    def place_rate(self) -> float:
        return self.place_successes / self.pick_successes if self.pick_successes else 0.0


@dataclass
class MetricsSummary:
    scenarios: dict  # name -> ScenarioMetrics, in canonical order
    overall: ScenarioMetrics

    def to_dict(self) -> dict:
        def one(m: ScenarioMetrics):
            d = dataclasses.asdict(m)
            d["pick_rate"] = m.pick_rate
            d["place_rate"] = m.place_rate
            return d

        return {"scenarios": {k: one(v) for k, v in self.scenarios.items()}, "overall": one(self.overall)}


def _metrics(records: Sequence[TrialRecord]) -> ScenarioMetrics:
    hist: dict[str, int] = {}
    for r in records:
        if r.failure_mode is not None:
            hist[r.failure_mode] = hist.get(r.failure_mode, 0) + 1
    return ScenarioMetrics(
        trials=len(records),
        pick_successes=sum(r.pick_success for r in records),
        place_successes=sum(bool(r.place_success) for r in records),
        reset_trials=sum(r.reset_count > 0 for r in records),
        starting_distance=describe(r.starting_distance for r in records),
        pick_time=describe(r.pick_time for r in records if r.pick_success and r.pick_time is not None),
        failure_modes=dict(sorted(hist.items())),
    )


def summarize(records: Sequence[TrialRecord]) -> MetricsSummary:
    if not records:
        raise ValueError("summarize needs at least one record")
    order = {k.value: i for i, k in enumerate(SCENARIO_ORDER)}
    ordered = sorted(records, key=lambda r: (order.get(r.scenario, len(order)), r.scenario, r.trial, r.instance))
    names = []
    for r in ordered:
        if r.scenario not in names:
            names.append(r.scenario)
    scen = {n: _metrics([r for r in ordered if r.scenario == n]) for n in names}
    return MetricsSummary(scen, _metrics(ordered))


# -- reports -------------------------------------------------------------------------------

TRIAL_COLUMNS = (
    "scenario", "trial", "instance", "seed", "pick_success", "place_success", "reset_count",
    "pick_time", "starting_distance", "failure_mode", "place_offset", "search_descents",
    "pick_tracks_min", "pick_tracks_max",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _round_floats(obj):
    if isinstance(obj, float):
        return round(obj, 6)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def trials_csv(records: Sequence[TrialRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in TRIAL_COLUMNS])
    return buf.getvalue()


def traces_csv(records: Sequence[TrialRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("scenario", "trial", "instance", "segment", "label", "plot", "tau", "distance"))
    for r in records:
        plot = "false" if r.scenario == ScenarioKind.OBSTRUCTED_CAN.value else "true"
        for si, (label, pts) in enumerate(r.distance_trace):
            for tau, d in pts:
                w.writerow((r.scenario, r.trial, r.instance, si, label, plot, f"{tau:.6f}", f"{d:.6f}"))
    return buf.getvalue()


def histogram_csv(summary: MetricsSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("scenario", "outcome", "count"))
    for name, m in summary.scenarios.items():
        w.writerow((name, "Success", m.place_successes))
        for mode in FailureMode:
            w.writerow((name, mode.value, m.failure_modes.get(mode.value, 0)))
    return buf.getvalue()


def emit_reports(
    summary: MetricsSummary,
    records: Sequence[TrialRecord],
    out_dir,
    trace_lines: Optional[Sequence[str]] = None,
) -> list[Path]:
    """Write the summary, raw trial table, distance traces and failure histogram."""
    out = Path(out_dir)
    files = {
        "summary.json": json.dumps(_round_floats(summary.to_dict()), indent=2, sort_keys=True) + "\n",
        "trials.csv": trials_csv(records),
        "distance_traces.csv": traces_csv(records),
        "failure_histogram.csv": histogram_csv(summary),
    }
    if trace_lines is not None:
        files["traces.jsonl"] = "".join(line + "\n" for line in trace_lines)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            p = out / name
            p.write_text(text)
            written.append(p)
    except OSError as exc:
        raise IoFailure(f"cannot write reports to {out}: {exc}") from exc
    return written


def _parse(v: str, kind):
    if v == "":
        return None
    if kind is bool:
        return v == "true"
    return kind(v)


_COLUMN_TYPES = {
    "scenario": str, "trial": int, "instance": int, "seed": int, "pick_success": bool,
    "place_success": bool, "reset_count": int, "pick_time": float, "starting_distance": float,
    "failure_mode": str, "place_offset": float, "search_descents": int,
    "pick_tracks_min": int, "pick_tracks_max": int,
}


def read_records(in_dir) -> list[TrialRecord]:
    """Rebuild trial records (with distance traces) from a report directory."""
    d = Path(in_dir)
    try:
        rows = list(csv.DictReader(io.StringIO((d / "trials.csv").read_text())))
        trace_path = d / "distance_traces.csv"
        trace_rows = list(csv.DictReader(io.StringIO(trace_path.read_text()))) if trace_path.exists() else []
    except OSError as exc:
        raise IoFailure(f"cannot read records from {d}: {exc}") from exc
    segs: dict = {}
    for tr in trace_rows:
        key = (tr["scenario"], int(tr["trial"]), int(tr["instance"]))
        seg = segs.setdefault(key, {}).setdefault(int(tr["segment"]), (tr["label"], []))
        seg[1].append((float(tr["tau"]), float(tr["distance"])))
    out = []
    for row in rows:
        kw = {c: _parse(row[c], _COLUMN_TYPES[c]) for c in TRIAL_COLUMNS}
        key = (kw["scenario"], kw["trial"], kw["instance"])
        s = segs.get(key, {})
        kw["distance_trace"] = tuple((s[i][0], tuple(s[i][1])) for i in sorted(s))
        out.append(TrialRecord(**kw))
    return out


def aborted_fraction(records: Sequence[TrialRecord]) -> float:
    if not records:
        return 0.0
    return sum(r.failure_mode == FailureMode.RESET_LIMIT.value for r in records) / len(records)
