"""Simulation of a fault-tolerant aerial pick-and-place system.

Submodules:

- ``geometry``: poses, pinhole projection and frame transforms
- ``perception``: detection association and per-object filtering
- ``trajectory``: polynomial references and the tracking controller
- ``vehicle``: plant, state estimate, scene and synthetic detector
- ``gripper``: grasp gating and outcome adjudication
- ``fsm``: the mission state machine
- ``harness``: scenario generation, Monte Carlo runs and reports
"""

from .config import SimConfig, load_config
from .fsm import MissionConfig, MissionState, Node, model_check
from .geometry import CameraIntrinsics, Pose2_5D, project, wrap_angle
from .harness import (
    FaultInjection,
    ScenarioKind,
    ScenarioSpec,
    generate_scenario,
    run_experiment,
    run_trial,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "FaultInjection",
    "MissionConfig",
    "MissionState",
    "Node",
    "Pose2_5D",
    "ScenarioKind",
    "ScenarioSpec",
    "SimConfig",
    "generate_scenario",
    "load_config",
    "model_check",
    "project",
    "run_experiment",
    "run_trial",
    "summarize",
    "wrap_angle",
]
