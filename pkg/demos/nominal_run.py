"""Fly one noise-free SingleCan trial and narrate what the mission does.

    python demos/nominal_run.py
"""

from grasp_sim import ScenarioSpec, SimConfig, generate_scenario, run_trial

cfg = SimConfig.noiseless()
spec = ScenarioSpec.for_kind("SingleCan", cfg, trials=1, starting_distance_range=(0.93, 0.93))
scenario = generate_scenario(spec, 0, cfg)

target = scenario.scene.find(scenario.targets[0])
print(f"can at {target.pose.position}, vehicle starts at {scenario.initial_pose.position}")

result = run_trial(scenario, cfg)
for tr in result.transitions:
    print(f"{tr.time:7.2f} s  {tr.src.value:>17} -> {tr.dst.value:<17} on {tr.event.value}")

(record,) = result.records
print()
print(f"picked: {record.pick_success}  placed: {record.place_success}  resets: {record.reset_count}")
print(f"pick time {record.pick_time:.2f} s from {record.starting_distance:.2f} m away")
print(f"released {record.place_offset:.3f} m to the right of the destination can")

# the gripper-to-target distance while approaching
label, points = record.distance_trace[0]
print(f"\napproach trace ({label}):")
for tau, d in points[:: max(1, len(points) // 12)]:
    print(f"  {tau:5.2f}  {'#' * int(d * 60):<60} {d:.3f} m")
