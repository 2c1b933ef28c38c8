"""Simulated quadrotor plant, fused-estimate model and a synthetic object detector.

The detector stands in for a learned 6-DOF pose network: it sees objects
whose true centre is inside the camera frustum, drops frames at random,
and corrupts poses with white noise plus slowly varying per-object bias.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import yaml

from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    Point3,
    Pose2_5D,
    body_to_optical,
    in_frustum,
    wrap_angle,
    world_to_body,
)
from .perception import DetectionEvent, ObjectClass
from .trajectory import RPYTCommand

# -- plant ----------------------------------------------------------------------


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1.67
    gravity: float = 9.81
    thrust_to_weight: float = 2.2
    tau_act: float = 0.06  # roll/pitch first-order lag [s]

    @property
    def max_thrust(self) -> float:
        return self.thrust_to_weight * self.mass * self.gravity


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2_5D
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yawrate: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0

    def is_finite(self) -> bool:
        vals = (*self.velocity, self.yawrate, self.roll, self.pitch)
        return all(math.isfinite(v) for v in vals)


def step_dynamics(
    state: VehicleState,
    cmd: RPYTCommand,
    dt: float,
    params: VehicleParams = VehicleParams(),
    disturbance: Sequence[float] = (0.0, 0.0, 0.0),
) -> VehicleState:
    """Advance the thrust-vector model by one step of length ``dt``."""
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt must lie in (0, 0.05], got {dt}")
    alpha = 1.0 - math.exp(-dt / params.tau_act)
    roll = state.roll + alpha * (cmd.roll - state.roll)
    pitch = state.pitch + alpha * (cmd.pitch - state.pitch)

    spec_force = cmd.thrust * params.max_thrust / params.mass
    cr = math.cos(roll)
    a_fwd = spec_force * math.sin(pitch) * cr
    a_left = -spec_force * math.sin(roll)
    a_up = spec_force * math.cos(pitch) * cr - params.gravity

    p = state.pose
    c, s = math.cos(p.yaw), math.sin(p.yaw)
    ax = c * a_fwd - s * a_left + disturbance[0]
    ay = s * a_fwd + c * a_left + disturbance[1]
    az = a_up + disturbance[2]
    v0 = state.velocity
    # acceleration is held over the step, so position takes the exact update
    h = 0.5 * dt * dt
    x, y, z = p.x + v0[0] * dt + ax * h, p.y + v0[1] * dt + ay * h, p.z + v0[2] * dt + az * h
    vx, vy, vz = v0[0] + ax * dt, v0[1] + ay * dt, v0[2] + az * dt
    if z < 0.0:
        z = 0.0
        vz = max(vz, 0.0)
    return VehicleState(
        Pose2_5D(x, y, z, p.yaw + cmd.yawrate * dt), (vx, vy, vz), cmd.yawrate, roll, pitch
    )


@dataclass(frozen=True)
class DisturbanceConfig:
    """Ornstein-Uhlenbeck acceleration disturbance (air currents, ground effect)."""

    sigma: tuple[float, float, float] = (0.05, 0.05, 0.07)  # stationary std [m/s^2]
    tau: float = 0.8  # correlation time [s]


def step_disturbance(d, cfg: DisturbanceConfig, dt: float, normals) -> tuple[float, float, float]:
    rho = math.exp(-dt / cfg.tau)
    k = math.sqrt(1.0 - rho * rho)
    return tuple(rho * d[i] + k * cfg.sigma[i] * normals[i] for i in range(3))


# -- state estimator -------------------------------------------------------------


class MagnetometerHealth(str, enum.Enum):
    HEALTHY = "Healthy"
    FAULTED = "Faulted"


@dataclass(frozen=True)
class EstimatorConfig:
    drift_sigma: float = 0.002  # position random walk [m/sqrt(s)]
    yaw_drift_sigma: float = 0.0005  # [rad/sqrt(s)]
    sharp_motion_factor: float = 4.0
    sharp_yawrate: float = 0.5  # [rad/s]
    sharp_tilt: float = 0.3  # [rad]
    sharp_hold: float = 5.0  # VO stays degraded this long after a sharp motion [s]
    mag_fault_yaw_rate: float = 0.01  # extra yaw random walk when faulted [rad/sqrt(s)]
    noise_sigma: float = 0.002  # white position noise [m]
    yaw_noise_sigma: float = 0.003  # white yaw noise [rad]
    rate_hz: float = 40.0

    @classmethod
    def exact(cls) -> "EstimatorConfig":
        return cls(
            drift_sigma=0.0, yaw_drift_sigma=0.0, mag_fault_yaw_rate=0.0,
            noise_sigma=0.0, yaw_noise_sigma=0.0,
        )


@dataclass(frozen=True)
class EstimatorState:
    estimate: Pose2_5D
    drift: Pose2_5D = Pose2_5D()
    magnetometer_health: MagnetometerHealth = MagnetometerHealth.HEALTHY
    degraded_until: float = -math.inf

    @classmethod
    def from_truth(cls, pose: Pose2_5D) -> "EstimatorState":
        return cls(estimate=pose)


def estimate(
    state: VehicleState,
    est: EstimatorState,
    cfg: EstimatorConfig,
    dt: float,
    rng: np.random.Generator,
    now: float = 0.0,
) -> EstimatorState:
    """Advance drift by ``dt`` and publish truth + drift + white noise."""
    tilt = max(abs(state.roll), abs(state.pitch))
    degraded_until = est.degraded_until
    if abs(state.yawrate) > cfg.sharp_yawrate or tilt > cfg.sharp_tilt:
        degraded_until = now + cfg.sharp_hold
    factor = cfg.sharp_motion_factor if now <= degraded_until else 1.0

    n = rng.standard_normal(8).tolist()
    sq = math.sqrt(dt)
    k = cfg.drift_sigma * factor * sq
    yaw_sigma = cfg.yaw_drift_sigma * factor
    if est.magnetometer_health is MagnetometerHealth.FAULTED:
        yaw_sigma = math.hypot(yaw_sigma, cfg.mag_fault_yaw_rate)
    d = est.drift
    drift = Pose2_5D(d.x + k * n[0], d.y + k * n[1], d.z + k * n[2], d.yaw + yaw_sigma * sq * n[3])

    p = state.pose
    w, wy = cfg.noise_sigma, cfg.yaw_noise_sigma
    published = Pose2_5D(
        p.x + drift.x + w * n[4],
        p.y + drift.y + w * n[5],
        p.z + drift.z + w * n[6],
        p.yaw + drift.yaw + wy * n[7],
    )
    return replace(est, estimate=published, drift=drift, degraded_until=degraded_until)


def inject_drift(est: EstimatorState, offset: Sequence[float]) -> EstimatorState:
    """Add a step offset (dx, dy, dz[, dyaw]) to the drift and the published estimate."""
    off = tuple(offset) + (0.0,) * (4 - len(offset))
    d, e = est.drift, est.estimate
    return replace(
        est,
        drift=Pose2_5D(d.x + off[0], d.y + off[1], d.z + off[2], d.yaw + off[3]),
        estimate=Pose2_5D(e.x + off[0], e.y + off[1], e.z + off[2], e.yaw + off[3]),
    )


# -- scene -------------------------------------------------------------------------


@dataclass
class SceneObject:
    name: str
    object_class: ObjectClass
    pose: Pose2_5D  # true pose; z is the object's centre
    diameter: float = 0.065
    height: float = 0.08
    occluded_fraction: float = 0.0
    standing_surface_z: float = 0.0
    is_toppleable: bool = True
    toppled: bool = False
    held: bool = False

    def __post_init__(self):
        if self.diameter <= 0 or self.height <= 0:
            raise ValueError("object dimensions must be positive")
        if not 0.0 <= self.occluded_fraction <= 1.0:
            raise ValueError("occluded_fraction must lie in [0, 1]")

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter

    @property
    def base_z(self) -> float:
        return self.pose.z - 0.5 * self.height


@dataclass(frozen=True)
class ClutterItem:
    position: Point3
    confusable_as: ObjectClass


@dataclass(frozen=True)
class Surface:
    """Axis-aligned (in its own yaw) box top: a cart, box or table."""

    name: str
    center: tuple[float, float]
    half_extent: tuple[float, float]
    top_z: float
    yaw: float = 0.0

    def contains_xy(self, x: float, y: float, margin: float = 0.0) -> bool:
        dx, dy = x - self.center[0], y - self.center[1]
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        lx, ly = c * dx + s * dy, -s * dx + c * dy
        return abs(lx) <= self.half_extent[0] + margin and abs(ly) <= self.half_extent[1] + margin


@dataclass
class Scene:
    objects: list[SceneObject] = field(default_factory=list)
    clutter: list[ClutterItem] = field(default_factory=list)
    surfaces: list[Surface] = field(default_factory=list)
    # optional view-dependent occluder: (bearing [rad] from object to the
    # blocked viewpoint, angular half-width [rad]); see occlusion_for_view
    occluder: Optional[tuple[float, float]] = None

    def find(self, name: str) -> SceneObject:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(name)

    def surface_under(self, x: float, y: float, z: float) -> Optional[Surface]:
        best = None
        for s in self.surfaces:
            if s.top_z <= z + 1e-9 and s.contains_xy(x, y):
                if best is None or s.top_z > best.top_z:
                    best = s
        return best

    def occlusion_for_view(self, obj: SceneObject, viewpoint) -> float:
        """Occluded fraction of ``obj`` seen from ``viewpoint`` (x, y, ...).

        Without an occluder this is the object's stored fraction; with one it
        falls off linearly with the angle away from the blocked bearing.
        """
        if obj.occluded_fraction == 0.0 or self.occluder is None:
            return obj.occluded_fraction
        bearing = math.atan2(viewpoint[1] - obj.pose.y, viewpoint[0] - obj.pose.x)
        off = abs(wrap_angle(bearing - self.occluder[0]))
        return obj.occluded_fraction * max(0.0, 1.0 - off / self.occluder[1])


def _pose_list(p: Pose2_5D) -> list[float]:
    return [round(v, 9) for v in p.as_tuple()]


def scene_to_dict(scene: Scene) -> dict:
    d = {
        "objects": [
            {
                "name": o.name,
                "class": o.object_class.value,
                "pose": _pose_list(o.pose),
                "diameter": o.diameter,
                "height": o.height,
                "occluded_fraction": o.occluded_fraction,
                "standing_surface_z": o.standing_surface_z,
                "toppleable": o.is_toppleable,
            }
            for o in scene.objects
        ],
        "clutter": [
            {"position": [round(v, 9) for v in c.position], "confusable_as": c.confusable_as.value}
            for c in scene.clutter
        ],
        "surfaces": [
            {
                "name": s.name,
                "center": list(s.center),
                "half_extent": list(s.half_extent),
                "top_z": s.top_z,
                "yaw": s.yaw,
            }
            for s in scene.surfaces
        ],
    }
    if scene.occluder is not None:
        d["occluder"] = {"bearing": scene.occluder[0], "half_width": scene.occluder[1]}
    return d


def scene_from_dict(d: Mapping) -> Scene:
    objects = [
        SceneObject(
            name=o["name"],
            object_class=ObjectClass(o["class"]),
            pose=Pose2_5D(*o["pose"]),
            diameter=float(o.get("diameter", 0.065)),
            height=float(o.get("height", 0.08)),
            occluded_fraction=float(o.get("occluded_fraction", 0.0)),
            standing_surface_z=float(o.get("standing_surface_z", 0.0)),
            is_toppleable=bool(o.get("toppleable", True)),
        )
        for o in d.get("objects", [])
    ]
    clutter = [
        ClutterItem(Point3(*c["position"]), ObjectClass(c["confusable_as"]))
        for c in d.get("clutter", [])
    ]
    surfaces = [
        Surface(
            s["name"], tuple(s["center"]), tuple(s["half_extent"]), float(s["top_z"]),
            float(s.get("yaw", 0.0)),
        )
        for s in d.get("surfaces", [])
    ]
    occ = d.get("occluder")
    occluder = None if occ is None else (float(occ["bearing"]), float(occ["half_width"]))
    return Scene(objects, clutter, surfaces, occluder)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(yaml.safe_dump(scene_to_dict(scene), sort_keys=False))


def load_scene(path) -> Scene:
    return scene_from_dict(yaml.safe_load(Path(path).read_text()))


# -- synthetic detector -----------------------------------------------------------


@dataclass(frozen=True)
class DetectionNoiseModel:
    base_detect_prob: float = 0.8
    position_sigma: float = 0.015
    yaw_sigma: float = math.radians(5.0)
    # piecewise-linear (occluded fraction, probability multiplier) knots
    occlusion_attenuation: tuple[tuple[float, float], ...] = ((0.0, 1.0), (0.3, 0.5), (1.0, 0.0))
    gripper_occlusion_range: float = 0.30
    false_positive_rate: float = 0.02
    detection_rate_hz: float = 15.0
    bias_sigma: float = 0.004  # stationary std of the slowly varying pose bias [m]
    bias_tau: float = 3.0  # bias correlation time [s]
    occlusion_bias_gain: float = 0.15  # extra bias std per unit occluded fraction [m]
    full_range: float = 1.6  # detection probability starts falling beyond this [m]
    max_range: float = 2.4
    carry_occlusion_factor: float = 0.85

    def __post_init__(self):
        if not 0.0 <= self.base_detect_prob <= 1.0 or not 0.0 <= self.false_positive_rate <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.position_sigma < 0 or self.yaw_sigma < 0 or self.bias_sigma < 0:
            raise ValueError("sigmas must be non-negative")

    def attenuation(self, occluded_fraction: float) -> float:
        knots = self.occlusion_attenuation
        if occluded_fraction <= knots[0][0]:
            return knots[0][1]
        for (x0, y0), (x1, y1) in zip(knots, knots[1:]):
            if occluded_fraction <= x1:
                return y0 + (y1 - y0) * (occluded_fraction - x0) / (x1 - x0)
        return knots[-1][1]

    def range_factor(self, r: float) -> float:
        if r <= self.full_range:
            return 1.0
        if r >= self.max_range:
            return 0.0
        return (self.max_range - r) / (self.max_range - self.full_range)

    @classmethod
    def noiseless(cls) -> "DetectionNoiseModel":
        return cls(
            base_detect_prob=1.0, position_sigma=0.0, yaw_sigma=0.0, false_positive_rate=0.0,
            bias_sigma=0.0, occlusion_bias_gain=0.0,
        )


NoiseSpec = Union[DetectionNoiseModel, Mapping[ObjectClass, DetectionNoiseModel]]


def _model_for(noise: NoiseSpec, cls: ObjectClass) -> DetectionNoiseModel:
    if isinstance(noise, DetectionNoiseModel):
        return noise
    return noise[cls]


def generate_detections(
    scene: Scene,
    state: VehicleState,
    intrinsics: CameraIntrinsics,
    extrinsics: CameraExtrinsics,
    noise: NoiseSpec,
    rng: np.random.Generator,
    now: float,
    gripper_position=None,
    carrying: bool = False,
    biases: Optional[Mapping[str, Sequence[float]]] = None,
    hidden: Sequence[str] = (),
) -> list[DetectionEvent]:
    """One camera frame of detections seen from the true vehicle state.

    ``biases`` maps object names to a world-frame position bias added on top
    of the white noise. ``gripper_position`` (true, world) enables the
    gripper blockage model.
    """
    out = []
    pose = state.pose
    for obj in scene.objects:
        if obj.toppled or obj.held or obj.name in hidden:
            continue
        cam = body_to_optical(world_to_body(obj.pose.position, pose), extrinsics)
        if not in_frustum(cam, intrinsics):
            continue
        model = _model_for(noise, obj.object_class)
        p = model.base_detect_prob
        p *= model.attenuation(scene.occlusion_for_view(obj, (pose.x, pose.y)))
        p *= model.range_factor(math.sqrt(cam.x * cam.x + cam.y * cam.y + cam.z * cam.z))
        if gripper_position is not None:
            g = gripper_position
            dg = math.sqrt((g[0] - obj.pose.x) ** 2 + (g[1] - obj.pose.y) ** 2 + (g[2] - obj.pose.z) ** 2)
            if dg < model.gripper_occlusion_range:
                p = 0.0
        if carrying and not obj.object_class.is_target:
            p *= model.carry_occlusion_factor
        if p <= 0.0 or rng.random() >= p:
            continue
        n = rng.standard_normal(4).tolist() if (model.position_sigma or model.yaw_sigma) else (0.0,) * 4
        b = biases.get(obj.name, (0.0, 0.0, 0.0)) if biases else (0.0, 0.0, 0.0)
        s = model.position_sigma
        noisy = (
            obj.pose.x + b[0] + s * n[0],
            obj.pose.y + b[1] + s * n[1],
            obj.pose.z + b[2] + s * n[2],
        )
        out.append(
            DetectionEvent(
                obj.object_class,
                body_to_optical(world_to_body(noisy, pose), extrinsics),
                wrap_angle(obj.pose.yaw + model.yaw_sigma * n[3] - pose.yaw),
                now,
            )
        )
    for item in scene.clutter:
        cam = body_to_optical(world_to_body(item.position, pose), extrinsics)
        if not in_frustum(cam, intrinsics):
            continue
        model = _model_for(noise, item.confusable_as)
        if rng.random() >= model.false_positive_rate:
            continue
        n = rng.standard_normal(4).tolist()
        s = model.position_sigma
        noisy = (item.position[0] + s * n[0], item.position[1] + s * n[1], item.position[2] + s * n[2])
        out.append(
            DetectionEvent(
                item.confusable_as,
                body_to_optical(world_to_body(noisy, pose), extrinsics),
                wrap_angle(model.yaw_sigma * n[3] - pose.yaw),
                now,
            )
        )
    return out


class DetectionBias:
    """Per-object slowly varying detection bias (OU processes).

    Two components: a class-level bias with ``bias_sigma``, and an occlusion
    bias whose std scales with the currently occluded fraction.
    """

    def __init__(self, scene: Scene, noise: NoiseSpec):
        self._scene = scene
        self._noise = noise
        self._base = {o.name: [0.0, 0.0, 0.0] for o in scene.objects}
        self._occ = {o.name: [0.0, 0.0, 0.0] for o in scene.objects}
        self.fixed: dict[str, tuple[float, float, float]] = {}
        self._initialized = False

    def step(self, dt: float, rng: np.random.Generator, viewpoint) -> dict[str, tuple[float, float, float]]:
        out = {}
        for obj in self._scene.objects:
            m = _model_for(self._noise, obj.object_class)
            base, occ = self._base[obj.name], self._occ[obj.name]
            if m.bias_sigma > 0 or (m.occlusion_bias_gain > 0 and obj.occluded_fraction > 0):
                n = rng.standard_normal(6).tolist()
                if not self._initialized:
                    rho, k = 0.0, 1.0
                else:
                    rho = math.exp(-dt / m.bias_tau)
                    k = math.sqrt(1.0 - rho * rho)
                for i in range(3):
                    base[i] = rho * base[i] + k * n[i]
                    occ[i] = rho * occ[i] + k * n[3 + i]
            occ_sigma = m.occlusion_bias_gain * self._scene.occlusion_for_view(obj, viewpoint)
            fx = self.fixed.get(obj.name, (0.0, 0.0, 0.0))
            out[obj.name] = tuple(
                m.bias_sigma * base[i] + occ_sigma * occ[i] + fx[i] for i in range(3)
            )
        self._initialized = True
        return out


# -- contact predicates --------------------------------------------------------------


@dataclass(frozen=True)
class KnockParams:
    h_grip_max: float = 0.75  # fraction of object height
    bump_speed: float = 0.10  # closing speed that topples on contact [m/s]


def gripper_frame(obj_pos, gripper: Pose2_5D) -> tuple[float, float, float]:
    """(axial, lateral, vertical) of a point relative to the gripper centre."""
    dx, dy = obj_pos[0] - gripper.x, obj_pos[1] - gripper.y
    c, s = math.cos(gripper.yaw), math.sin(gripper.yaw)
    return (c * dx + s * dy, -s * dx + c * dy, obj_pos[2] - gripper.z)


def check_knock_over(
    vehicle: VehicleState,
    gripper: Pose2_5D,
    scene: Scene,
    geometry,
    knock: Mapping[ObjectClass, KnockParams],
    gripper_velocity: Sequence[float] = (0.0, 0.0, 0.0),
) -> list[SceneObject]:
    """Objects that the gripper jaws or cage topple at this instant.

    Jaws are modelled as two vertical walls at +-jaw_span/2 spanning the axial
    range [-jaw_back, tip_extension] and jaw_half_height above and below the
    gripper centre. An object inside the capture envelope touches nothing.
    """
    toppled = []
    half_span = 0.5 * geometry.jaw_span_open
    for obj in scene.objects:
        if obj.toppled or obj.held or not obj.is_toppleable:
            continue
        params = knock[obj.object_class]
        r = obj.radius
        a, l, _ = gripper_frame(obj.pose.position, gripper)
        jaw_lo, jaw_hi = gripper.z - geometry.jaw_half_height, gripper.z + geometry.jaw_half_height
        z_overlap = jaw_lo < obj.base_z + obj.height and jaw_hi > obj.base_z
        jaw_contact = (
            z_overlap
            and -geometry.jaw_back - r <= a <= geometry.tip_extension + r
            and half_span - r < abs(l) < half_span + r + geometry.jaw_thickness
        )
        dxv, dyv = obj.pose.x - vehicle.pose.x, obj.pose.y - vehicle.pose.y
        dv = math.hypot(dxv, dyv)
        cage_contact = (
            dv < geometry.cage_radius + r
            and vehicle.pose.z - geometry.cage_half_height < obj.base_z + obj.height
            and vehicle.pose.z + geometry.cage_half_height > obj.base_z
        )
        if jaw_contact:
            # normal from the nearest point of the touching jaw wall
            wa = min(max(a, -geometry.jaw_back), geometry.tip_extension)
            wl = math.copysign(half_span, l)
            na, nl = a - wa, l - wl
            c, s = math.cos(gripper.yaw), math.sin(gripper.yaw)
            dx, dy = c * na - s * nl, s * na + c * nl
            speed = gripper_velocity
        elif cage_contact:
            dx, dy = dxv, dyv
            speed = vehicle.velocity
        else:
            continue
        height_frac = (gripper.z - obj.base_z) / obj.height
        norm = math.hypot(dx, dy) or 1.0
        closing = max(0.0, (speed[0] * dx + speed[1] * dy) / norm)
        if (jaw_contact and height_frac > params.h_grip_max) or closing > params.bump_speed:
            toppled.append(obj)
    return toppled


def check_surface_contact(gripper: Pose2_5D, scene: Scene, geometry) -> Optional[Surface]:
    """Surface whose top the gripper jaws have dipped below, if any."""
    bottom = gripper.z - geometry.jaw_half_height
    for s in scene.surfaces:
        if bottom < s.top_z <= gripper.z + 0.5 and s.contains_xy(gripper.x, gripper.y):
            return s
    return None
