"""Detection validation, association and per-object exponential filtering."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Union

from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    Point3,
    Pose2_5D,
    camera_to_world,
    in_frustum,
    wrap_angle,
)


class ObjectClass(str, enum.Enum):
    TARGET_CAN = "TargetCan"
    TARGET_BOTTLE = "TargetBottle"
    DEST_CAN = "DestCan"
    DEST_BOTTLE = "DestBottle"

    @property
    def is_target(self) -> bool:
        return self in (ObjectClass.TARGET_CAN, ObjectClass.TARGET_BOTTLE)


@dataclass(frozen=True)
class DetectionEvent:
    """A raw detection. Position is in the camera optical frame; yaw is the
    object heading relative to the vehicle heading."""

    object_class: ObjectClass
    position: Point3
    yaw: float
    timestamp: float


@dataclass(frozen=True)
class FilterSchedule:
    gamma_d: float = 0.1
    T: int = 10

    def __post_init__(self):
        if not 0.0 < self.gamma_d <= 1.0:
            raise ValueError("gamma_d must lie in (0, 1]")
        if int(self.T) != self.T or self.T < 1:
            raise ValueError("T must be a positive integer")


@dataclass(frozen=True)
class ObjectTrack:
    object_class: ObjectClass
    estimate: Pose2_5D
    step_count: int
    last_update: float
    track_id: int


@dataclass(frozen=True)
class AssociationConfig:
    distance_threshold: float = 0.30
    staleness_timeout: float = 2.0

    def __post_init__(self):
        if self.distance_threshold < 0 or self.staleness_timeout <= 0:
            raise ValueError("association thresholds must be positive")


@dataclass(frozen=True)
class MatchedTrack:
    track_id: int


@dataclass(frozen=True)
class NewTrack:
    pass


AssociationResult = Union[MatchedTrack, NewTrack]


@dataclass
class TrackStore:
    """Tracks keyed by id. Ids are never reused within a store."""

    tracks: dict[int, ObjectTrack] = field(default_factory=dict)
    next_id: int = 0

    def __len__(self):
        return len(self.tracks)

    def __iter__(self):
        return iter(self.tracks.values())

    def get(self, track_id: int) -> Optional[ObjectTrack]:
        return self.tracks.get(track_id)

    def count(self, object_class: ObjectClass) -> int:
        return sum(1 for t in self.tracks.values() if t.object_class == object_class)

    def copy(self) -> "TrackStore":
        return TrackStore(dict(self.tracks), self.next_id)


def current_gain(schedule: FilterSchedule, t: int) -> float:
    """Gain for the ``t``-th accepted measurement (``t`` counts from 0)."""
    if t < 0:
        raise ValueError("step index must be non-negative")
    if t < schedule.T:
        return 1.0 - (1.0 - schedule.gamma_d) * t / schedule.T
    return schedule.gamma_d


def filter_update(
    track: ObjectTrack,
    measurement: Pose2_5D,
    schedule: FilterSchedule,
    timestamp: Optional[float] = None,
) -> ObjectTrack:
    g = current_gain(schedule, track.step_count)
    p = track.estimate
    if g == 1.0:
        estimate = measurement  # full trust, bit-exact
    else:
        estimate = Pose2_5D(
            p.x + g * (measurement.x - p.x),
            p.y + g * (measurement.y - p.y),
            p.z + g * (measurement.z - p.z),
            # shortest-path innovation; Pose2_5D re-normalizes the result
            p.yaw + g * wrap_angle(measurement.yaw - p.yaw),
        )
    return replace(
        track,
        estimate=estimate,
        step_count=track.step_count + 1,
        last_update=track.last_update if timestamp is None else timestamp,
    )


def associate(
    detection_world: Pose2_5D,
    object_class: ObjectClass,
    tracks: Iterable[ObjectTrack],
    config: AssociationConfig,
) -> AssociationResult:
    best = None
    for track in tracks:
        if track.object_class != object_class:
            continue
        d = track.estimate.distance_to(detection_world)
        if d >= config.distance_threshold:
            continue
        key = (d, track.track_id)
        if best is None or key < best:
            best = key
    return NewTrack() if best is None else MatchedTrack(best[1])


def detection_to_world(
    detection: DetectionEvent, vehicle_pose: Pose2_5D, extrinsics: CameraExtrinsics
) -> Pose2_5D:
    p = camera_to_world(detection.position, vehicle_pose, extrinsics)
    return Pose2_5D(p.x, p.y, p.z, vehicle_pose.yaw + detection.yaw)


def ingest(
    detection: DetectionEvent,
    vehicle_pose: Pose2_5D,
    intrinsics: CameraIntrinsics,
    extrinsics: CameraExtrinsics,
    tracks: TrackStore,
    config: AssociationConfig,
    schedule: FilterSchedule,
) -> TrackStore:
    """Fold one detection into ``tracks`` (in place) and return the store.

    Detections outside the camera frustum are dropped without touching
    the store.
    """
    if not in_frustum(detection.position, intrinsics):
        return tracks
    measurement = detection_to_world(detection, vehicle_pose, extrinsics)
    result = associate(measurement, detection.object_class, tracks, config)
    if isinstance(result, MatchedTrack):
        track = tracks.tracks[result.track_id]
        tracks.tracks[result.track_id] = filter_update(
            track, measurement, schedule, detection.timestamp
        )
    else:
        seed = ObjectTrack(
            detection.object_class, measurement, 0, detection.timestamp, tracks.next_id
        )
        # gain at step 0 is 1, so the estimate becomes the measurement
        tracks.tracks[tracks.next_id] = filter_update(
            seed, measurement, schedule, detection.timestamp
        )
        tracks.next_id += 1
    return tracks


def is_stale(track: ObjectTrack, now: float, config: AssociationConfig) -> bool:
    return now - track.last_update > config.staleness_timeout


def closest_target(
    tracks: Iterable[ObjectTrack],
    vehicle_pose: Pose2_5D,
    target_class: ObjectClass,
    now: float,
    config: AssociationConfig,
    min_steps: int = 1,
) -> Optional[ObjectTrack]:
    best = None
    for track in tracks:
        if track.object_class != target_class or track.step_count < min_steps:
            continue
        if is_stale(track, now, config):
            continue
        key = (track.estimate.distance_to(vehicle_pose), track.track_id)
        if best is None or key < best[0]:
            best = (key, track)
    return None if best is None else best[1]


def prune_stale(
    tracks: TrackStore, now: float, config: AssociationConfig, keep: Iterable[int] = ()
) -> TrackStore:
    """Drop tracks not refreshed for longer than the staleness timeout.

    Ids in ``keep`` survive regardless (e.g. a target locked for grasping).
    """
    keep = set(keep)
    for tid in [
        tid for tid, t in tracks.tracks.items() if tid not in keep and is_stale(t, now, config)
    ]:
        del tracks.tracks[tid]
    return tracks


# -- detection log replay ------------------------------------------------------

_LOG_HEADER = "# timestamp class x y z yaw"


def write_detection_log(path, detections: Iterable[DetectionEvent]) -> None:
    """Whitespace-separated columns, one detection per line.

    Columns: timestamp [s], class name, camera-frame x y z [m], yaw [rad].
    Lines starting with ``#`` are comments.
    """
    lines = [_LOG_HEADER]
    for d in detections:
        lines.append(
            f"{d.timestamp:.6f} {d.object_class.value} "
            f"{d.position[0]:.6f} {d.position[1]:.6f} {d.position[2]:.6f} {d.yaw:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_detection_log(path) -> list[DetectionEvent]:
    out = []
    last_t = -math.inf
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 columns, got {len(parts)}")
        t = float(parts[0])
        if t < last_t:
            raise ValueError(f"{path}:{lineno}: timestamps must be non-decreasing")
        last_t = t
        out.append(
            DetectionEvent(
                ObjectClass(parts[1]),
                Point3(float(parts[2]), float(parts[3]), float(parts[4])),
                float(parts[5]),
                t,
            )
        )
    return out
