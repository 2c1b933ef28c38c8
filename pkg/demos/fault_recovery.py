"""Show how the mission reacts to injected faults.

Each case runs the same noise-free scene with one deliberate problem and
prints the faults raised, the resets spent and the final failure mode.

    python demos/fault_recovery.py
"""

from grasp_sim import FaultInjection, ScenarioSpec, SimConfig, generate_scenario, run_trial

cfg = SimConfig.noiseless()
spec = ScenarioSpec.for_kind("SingleCan", cfg, trials=1, starting_distance_range=(0.93, 0.93))
scenario = generate_scenario(spec, 0, cfg)

cases = [
    ("nothing wrong", FaultInjection()),
    ("grip switch misreads once", FaultInjection(grip_switch_failures=1)),
    ("target estimate 4 cm high", FaultInjection(target_estimate_bias=(0.0, 0.0, 0.04))),
    ("target estimate 4 cm low", FaultInjection(target_estimate_bias=(0.0, 0.0, -0.04))),
    ("target estimate 5 cm too far", FaultInjection(target_estimate_bias=(0.05, 0.0, 0.0))),
    ("odometry jumps 40 cm before placing", FaultInjection(drift_jump=(0.4, 0.0, 0.0))),
    ("destination invisible", FaultInjection(hide_destination=True)),
]

for name, injection in cases:
    result = run_trial(scenario, cfg, injection)
    (r,) = result.records
    faults = [t.fault.value for t in result.transitions if t.fault is not None]
    outcome = "success" if r.failure_mode is None else r.failure_mode
    print(f"{name:<38} resets {r.reset_count}  faults {faults or '-'}  -> {outcome}")
