"""A small Monte Carlo campaign over every scenario, with reports on disk.

    python demos/monte_carlo.py [trials-per-scenario] [out-dir]
"""

import os
import sys

from grasp_sim import ScenarioKind, ScenarioSpec, SimConfig, run_experiment, summarize
from grasp_sim.harness import emit_reports

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 10
out = sys.argv[2] if len(sys.argv) > 2 else "demo_reports"

cfg = SimConfig()
specs = [ScenarioSpec.for_kind(kind, cfg, trials=trials, seed_base=1) for kind in ScenarioKind]
records, transitions = run_experiment(specs, cfg, workers=os.cpu_count() or 1)
summary = summarize(records)

for name, m in summary.scenarios.items():
    print(f"{name:<18} pick {m.pick_rate:5.2f}  place {m.place_rate:5.2f}  failures {m.failure_modes}")
pt = summary.overall.pick_time
if pt:
    print(f"pick time: median {pt['median']:.1f} s, mean {pt['mean']:.1f} s, max {pt['max']:.1f} s")

for path in emit_reports(summary, records, out, transitions):
    print("wrote", path)
