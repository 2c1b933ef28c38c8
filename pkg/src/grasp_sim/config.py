"""Nested dataclass configuration with YAML round-tripping.

Every tunable lives in one ``SimConfig`` tree. YAML files may give any
subset of keys; anything left out keeps its default. Unknown keys are
rejected so typos do not pass silently.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Union

import yaml

from .fsm import MissionConfig
from .geometry import CameraExtrinsics, CameraIntrinsics, Pose2_5D
from .perception import FilterSchedule, ObjectClass
from .trajectory import ControllerGains
from .vehicle import DetectionNoiseModel, DisturbanceConfig, EstimatorConfig, KnockParams, VehicleParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CameraConfig:
    fx: float = 460.0
    fy: float = 460.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    pitch_down: float = 0.10  # [rad]
    mount: tuple[float, float, float] = (0.12, 0.0, 0.0)  # body frame [m]

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    def extrinsics(self) -> CameraExtrinsics:
        return CameraExtrinsics.pitched(self.pitch_down, self.mount)

    @property
    def vertical_half_fov(self) -> float:
        return math.atan2(self.cy, self.fy)


@dataclass(frozen=True)
class LoopConfig:
    dt: float = 0.005
    control_hz: float = 100.0
    max_time: float = 400.0  # per trial
    trace_hz: float = 10.0


@dataclass(frozen=True)
class LayoutConfig:
    """Scene generation parameters shared by all scenario kinds."""

    starting_distance_range: tuple[float, float] = (0.78, 1.11)
    cart_top_range: tuple[float, float] = (0.62, 0.78)
    cart_half_extent: tuple[float, float] = (0.25, 0.35)
    can_size: tuple[float, float] = (0.065, 0.08)  # diameter, height
    bottle_size: tuple[float, float] = (0.065, 0.14)
    target_yaw_jitter: float = 0.05
    clutter_count: int = 6
    clutter_radius_range: tuple[float, float] = (0.40, 0.90)
    occluded_fraction_range: tuple[float, float] = (0.10, 0.30)
    obstructed_yaw_range: tuple[float, float] = (0.26, 0.61)  # 15..35 deg
    occluder_half_width: float = 0.70
    instance_separation_range: tuple[float, float] = (0.40, 0.55)
    dest_range: tuple[float, float] = (0.75, 1.00)  # ahead of the post-pick camera
    dest_lateral_jitter: float = 0.08
    dest_low_prob: float = 0.20  # destination starts below the field of view
    dest_high_prob: float = 0.03  # destination above the view: never found
    obstructed_dest_high_prob: float = 0.15
    table_half_extent: tuple[float, float] = (0.30, 0.50)
    mag_fault_prob: float = 0.05


@dataclass(frozen=True)
class SimConfig:
    mission: MissionConfig = MissionConfig()
    filter: FilterSchedule = FilterSchedule()
    controller: ControllerGains = ControllerGains()
    vehicle: VehicleParams = VehicleParams()
    disturbance: DisturbanceConfig = DisturbanceConfig()
    estimator: EstimatorConfig = EstimatorConfig()
    camera: CameraConfig = CameraConfig()
    can_detection: DetectionNoiseModel = DetectionNoiseModel()
    bottle_detection: DetectionNoiseModel = DetectionNoiseModel(
        base_detect_prob=0.6, bias_sigma=0.006
    )
    can_knock: KnockParams = KnockParams(bump_speed=0.30)
    bottle_knock: KnockParams = KnockParams(bump_speed=0.15)
    loop: LoopConfig = LoopConfig()
    layout: LayoutConfig = LayoutConfig()

    def noise_by_class(self) -> dict[ObjectClass, DetectionNoiseModel]:
        return {
            ObjectClass.TARGET_CAN: self.can_detection,
            ObjectClass.DEST_CAN: self.can_detection,
            ObjectClass.TARGET_BOTTLE: self.bottle_detection,
            ObjectClass.DEST_BOTTLE: self.bottle_detection,
        }

    def knock_by_class(self) -> dict[ObjectClass, KnockParams]:
        return {
            ObjectClass.TARGET_CAN: self.can_knock,
            ObjectClass.DEST_CAN: self.can_knock,
            ObjectClass.TARGET_BOTTLE: self.bottle_knock,
            ObjectClass.DEST_BOTTLE: self.bottle_knock,
        }

    @classmethod
    def noiseless(cls) -> "SimConfig":
        """Perfect sensing, no disturbances: the nominal reference run."""
        quiet = DetectionNoiseModel.noiseless()
        return cls(
            estimator=EstimatorConfig.exact(),
            disturbance=DisturbanceConfig(sigma=(0.0, 0.0, 0.0)),
            can_detection=quiet,
            bottle_detection=quiet,
            layout=dataclasses.replace(cls().layout, mag_fault_prob=0.0),
        )


# -- generic conversion ---------------------------------------------------------


def to_dict(obj: Any) -> Any:
    """Plain-data view of a config tree (YAML friendly)."""
    if isinstance(obj, Pose2_5D):
        return [float(v) for v in obj.as_tuple()]
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, Mapping):
        return {to_dict(k): to_dict(v) for k, v in obj.items()}
    if isinstance(obj, float):
        return float(obj)
    return obj


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if tp is Any:
        return value
    if origin is Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if tp is Pose2_5D:
        if isinstance(value, Mapping):
            return Pose2_5D(**{k: float(v) for k, v in value.items()})
        if len(value) != 4:
            raise ConfigError(f"{where}: pose needs 4 values [x, y, z, yaw]")
        return Pose2_5D(*map(float, value))
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, where) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{where}: expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(a, v, where) for a, v in zip(args, value))
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        return tp(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or int(value) != value:
            raise ConfigError(f"{where}: expected an integer")
        return int(value)
    if tp is float:
        if isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    return value


def from_dict(cls, data: Mapping | None, where: str = ""):
    """Build dataclass ``cls`` from a (possibly partial) mapping."""
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or cls.__name__}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where or cls.__name__}: unknown keys {sorted(unknown)}")
    defaults = cls()
    kwargs = {}
    for name in names:
        if name not in data:
            continue
        sub = f"{where}.{name}" if where else name
        default = getattr(defaults, name)
        value = data[name]
        if dataclasses.is_dataclass(default) and not isinstance(default, Pose2_5D) and isinstance(value, Mapping):
            # partial override of a nested block keeps the block's own defaults
            merged = {**to_dict(default), **value}
            kwargs[name] = from_dict(type(default), merged, sub)
        else:
            kwargs[name] = _coerce(hints[name], value, sub)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or cls.__name__}: {exc}") from exc


def load_config(path) -> SimConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    data = yaml.safe_load(text) or {}
    return from_dict(SimConfig, data)


def dump_config(cfg: SimConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)
