"""Load a scene file and list what the camera detects from a hovering pose.

    python demos/inspect_scene.py [scene.yaml]
"""

import sys
from pathlib import Path

import numpy as np

from grasp_sim import SimConfig
from grasp_sim.vehicle import VehicleState, generate_detections, load_scene
from grasp_sim.geometry import Pose2_5D

path = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parents[1] / "configs" / "scene_example.yaml"
scene = load_scene(path)
cfg = SimConfig()

for obj in scene.objects:
    print(f"{obj.name:<12} {obj.object_class.value:<12} at {tuple(round(v, 3) for v in obj.pose.position)}")

vehicle = VehicleState(Pose2_5D(-1.39, 0.0, 0.68, 0.0))
rng = np.random.default_rng(0)
seen = {}
for k in range(150):  # ten seconds of frames
    for det in generate_detections(
        scene, vehicle, cfg.camera.intrinsics(), cfg.camera.extrinsics(), cfg.noise_by_class(), rng, k / 15.0
    ):
        seen[det.object_class.value] = seen.get(det.object_class.value, 0) + 1
print("\ndetections over 150 frames:", seen)
