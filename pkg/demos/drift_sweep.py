"""Sweep the odometry drift intensity and watch success rates fall off.

    python demos/drift_sweep.py [trials-per-point]
"""

import dataclasses
import os
import sys

from grasp_sim import ScenarioSpec, SimConfig, run_experiment, summarize

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 10
base = SimConfig()

print(f"{'drift_sigma':>11}  {'pick':>5}  {'place':>5}  failures")
for sigma in (0.0, 0.002, 0.005, 0.01, 0.02):
    cfg = dataclasses.replace(base, estimator=dataclasses.replace(base.estimator, drift_sigma=sigma))
    spec = ScenarioSpec.for_kind("SingleCan", cfg, trials=trials, seed_base=11)
    records, _ = run_experiment([spec], cfg, workers=os.cpu_count() or 1)
    m = summarize(records).overall
    print(f"{sigma:>11.3f}  {m.pick_rate:5.2f}  {m.place_rate:5.2f}  {m.failure_modes}")
