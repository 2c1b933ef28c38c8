"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import dataclasses
import math
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from grasp_sim.cli import main as cli_main
from grasp_sim.config import SimConfig
from grasp_sim.fsm import model_check
from grasp_sim.geometry import CameraIntrinsics, Pose2_5D, in_frustum, project
from grasp_sim.harness import (
    SCENARIO_ORDER,
    FaultInjection,
    ScenarioKind,
    ScenarioSpec,
    emit_reports,
    generate_scenario,
    histogram_csv,
    run_experiment,
    run_trial,
    summarize,
)
from grasp_sim.perception import FilterSchedule, ObjectClass, ObjectTrack, current_gain, filter_update
from grasp_sim.trajectory import boundary_residuals, evaluate, plan_trajectory

WORKERS = os.cpu_count() or 1


@contextmanager
def criterion(n, title):
    info = {"detail": ""}
    try:
        yield info
    except BaseException:
        ACCEPTANCE_RESULTS[n] = (title, False, info["detail"] or "check failed")
        print(f"criterion {n} FAIL {title}")
        raise
    ACCEPTANCE_RESULTS[n] = (title, True, info["detail"])
    print(f"criterion {n} PASS {title}")


def test_criterion_01_projection_oracle():
    with criterion(1, "projection and frustum oracle") as c:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        n = 1_000_000
        pts = np.column_stack([rng.uniform(-3, 3, n), rng.uniform(-3, 3, n), rng.uniform(-1, 4, n)])
        fx, fy, cx, cy, w, h = 460.0, 460.0, 320.0, 240.0, 640, 480
        k = CameraIntrinsics(fx, fy, cx, cy, w, h)
        z = pts[:, 2]
        pos = z > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            u_ref = fx * pts[:, 0] / z + cx
            v_ref = fy * pts[:, 1] / z + cy
        inside_ref = pos & (u_ref >= 0) & (u_ref < w) & (v_ref >= 0) & (v_ref < h)
        u = np.zeros(n)
        v = np.zeros(n)
        inside = np.zeros(n, dtype=bool)
        for i, p in enumerate(pts.tolist()):
            inside[i] = in_frustum(p, k)
            if p[2] > 0:
                u[i], v[i] = project(p, k)
        elapsed = time.perf_counter() - t0
        rel = max(
            (np.abs(u[pos] - u_ref[pos]) / np.maximum(np.abs(u_ref[pos]), 1.0)).max(),
            (np.abs(v[pos] - v_ref[pos]) / np.maximum(np.abs(v_ref[pos]), 1.0)).max(),
        )
        mismatched = int((inside != inside_ref).sum())
        c["detail"] = f"max rel err {rel:.1e}, frustum mismatches {mismatched}, {elapsed:.1f} s"
        assert mismatched == 0 and rel <= 1e-9 and elapsed < 10.0


def test_criterion_02_filter_law():
    with criterion(2, "decaying-gain filter law") as c:
        exact = 0
        for gd in np.linspace(0.05, 1.0, 10):
            for T in range(1, 11):
                sched = FilterSchedule(float(gd), T)
                for t in range(0, 20, 2):
                    expected = 1.0 - (1.0 - gd) * t / T if t < T else gd
                    assert current_gain(sched, t) == expected
                    exact += 1

        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(200):
            sched = FilterSchedule(float(rng.uniform(0.01, 1.0)), int(rng.integers(1, 20)))
            p = [*rng.uniform(-2, 2, 3), float(rng.uniform(-math.pi, math.pi))]
            tr = ObjectTrack(ObjectClass.TARGET_CAN, Pose2_5D(*p), int(rng.integers(0, 30)), 0.0, 0)
            for _ in range(30):
                m = [*rng.uniform(-2, 2, 3), float(rng.uniform(-math.pi, math.pi))]
                g = current_gain(sched, tr.step_count)
                d = math.atan2(math.sin(m[3] - p[3]), math.cos(m[3] - p[3]))
                yaw = p[3] + g * d
                p = [p[i] + g * (m[i] - p[i]) for i in range(3)] + [math.atan2(math.sin(yaw), math.cos(yaw))]
                tr = filter_update(tr, Pose2_5D(*m), sched)
                e = tr.estimate.as_tuple()
                dyaw = abs(math.remainder(e[3] - p[3], 2 * math.pi))
                worst = max(worst, dyaw, *(abs(e[i] - p[i]) for i in range(3)))

        violations = 0
        for seed in range(100):
            srng = np.random.default_rng(seed)
            sched = FilterSchedule(float(srng.uniform(0.01, 1.0)), int(srng.integers(1, 15)))
            target = Pose2_5D(*srng.uniform(-1, 1, 3), 0.0)
            tr = ObjectTrack(ObjectClass.TARGET_CAN, Pose2_5D(*srng.uniform(-1, 1, 3), 0.0), 0, 0.0, 0)
            for _ in range(sched.T):
                noisy = np.asarray(target.as_tuple()[:3]) + srng.normal(0, 0.3, 3)
                tr = filter_update(tr, Pose2_5D(*noisy, 0.0), sched)
            e_T = tr.estimate.distance_to(target)
            for k in range(1, 60):
                tr = filter_update(tr, target, sched)
                violations += tr.estimate.distance_to(target) > (1 - sched.gamma_d) ** k * e_T + 1e-12
        c["detail"] = f"{exact} exact gains, reference err {worst:.1e}, bound violations {violations}/100 streams"
        assert worst <= 1e-12 and violations == 0


def test_criterion_03_polynomial_boundary_conditions():
    with criterion(3, "trajectory boundary conditions") as c:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            start = Pose2_5D(*rng.uniform(-3, 3, 3), float(rng.uniform(-math.pi, math.pi)))
            goal = Pose2_5D(*rng.uniform(-3, 3, 3), float(rng.uniform(-math.pi, math.pi)))
            derivs = rng.normal(0, 1, (4, 4)) if rng.random() < 0.7 else None
            traj = plan_trajectory(start, goal, float(rng.uniform(0.2, 20.0)), derivs)
            res = boundary_residuals(traj, start, goal, derivs)
            assert res.shape == (10, 4)
            worst = max(worst, float(res.max()))
        sym = 0.0
        for _ in range(200):
            a = Pose2_5D(*rng.uniform(-3, 3, 3), 0.0)
            b = Pose2_5D(*rng.uniform(-3, 3, 3), 0.0)
            dur = float(rng.uniform(0.5, 20.0))
            traj = plan_trajectory(a, b, dur)
            mid = evaluate(traj, dur / 2).pose.position
            sym = max(sym, *(abs(mid[i] - (a.position[i] + b.position[i]) / 2) for i in range(3)))
            s = float(rng.uniform(0, dur))
            p, q = evaluate(traj, s).pose.position, evaluate(traj, dur - s).pose.position
            sym = max(sym, *(abs(p[i] + q[i] - a.position[i] - b.position[i]) for i in range(3)))
        c["detail"] = f"max boundary residual {worst:.1e}, symmetry err {sym:.1e}"
        assert worst <= 1e-6 and sym <= 1e-6


def test_criterion_04_fsm_model_check():
    with criterion(4, "transition-table model check") as c:
        t0 = time.perf_counter()
        report = model_check()
        elapsed = time.perf_counter() - t0
        c["detail"] = f"{len(report.reachable)} reachable nodes, {elapsed * 1e3:.1f} ms"
        assert report.close_only_via_grasp_region
        assert report.no_place_phase_reset
        assert report.no_dead_states
        assert elapsed < 1.0


def test_criterion_05_nominal_golden_run(tmp_path):
    with criterion(5, "noiseless golden run") as c:
        cfg = SimConfig.noiseless()
        spec = ScenarioSpec.for_kind(ScenarioKind.SINGLE_CAN, cfg, trials=1, starting_distance_range=(0.93, 0.93))
        outputs = []
        for k in range(2):
            res = run_trial(generate_scenario(spec, 0, cfg), cfg)
            out = tmp_path / f"run{k}"
            emit_reports(summarize(res.records), res.records, out, [t.to_json() for t in res.transitions])
            outputs.append({p.name: p.read_bytes() for p in out.iterdir()})
        (r,) = res.records
        c["detail"] = f"pick time {r.pick_time:.2f} s, resets {r.reset_count}, place {r.place_success}"
        assert r.pick_success and r.place_success and r.reset_count == 0
        assert abs(r.pick_time - 18.2) <= 0.2 * 18.2
        assert outputs[0] == outputs[1]


@pytest.fixture(scope="module")
def monte_carlo():
    cfg = SimConfig()
    specs = [ScenarioSpec.for_kind(k, cfg, trials=200, seed_base=0) for k in SCENARIO_ORDER]
    t0 = time.perf_counter()
    records, _ = run_experiment(specs, cfg, workers=WORKERS)
    return records, time.perf_counter() - t0


def test_criterion_06_calibrated_monte_carlo(monte_carlo):
    with criterion(6, "calibrated Monte Carlo band") as c:
        records, elapsed = monte_carlo
        s = summarize(records)
        rates = {name: m.pick_rate for name, m in s.scenarios.items()}
        obstructed = rates.pop(ScenarioKind.OBSTRUCTED_CAN.value)
        c["detail"] = (
            f"pick {s.overall.pick_rate:.3f}, place {s.overall.place_rate:.3f}, "
            f"SingleCan {s.scenarios['SingleCan'].pick_rate:.3f}, ObstructedCan {obstructed:.3f} "
            f"vs next {min(rates.values()):.3f}, {elapsed:.0f} s on {WORKERS} workers"
        )
        assert s.overall.pick_rate >= 0.88
        assert s.overall.place_rate >= 0.80
        assert s.scenarios["SingleCan"].pick_rate >= 0.95
        assert obstructed < min(rates.values())


def test_criterion_07_failure_mode_realizability():
    with criterion(7, "failure-mode realizability") as c:
        cfg = SimConfig.noiseless()
        spec = ScenarioSpec.for_kind(ScenarioKind.SINGLE_CAN, cfg, trials=1, starting_distance_range=(0.93, 0.93))
        gen = generate_scenario(spec, 0, cfg)
        injections = {
            "KnockOver": FaultInjection(target_estimate_bias=(0.0, 0.0, 0.04)),
            "LowApproach": FaultInjection(target_estimate_bias=(0.0, 0.0, -0.04)),
            "EstimatorDiverged": FaultInjection(drift_jump=(0.4, 0.0, 0.0)),
            "DestinationNotFound": FaultInjection(hide_destination=True),
        }
        records = []
        for i, (mode, inj) in enumerate(injections.items()):
            for rep in range(2):
                (r,) = run_trial(gen, cfg, inj).records
                assert r.failure_mode == mode, (mode, r.failure_mode)
                records.append(dataclasses.replace(r, trial=2 * i + rep))
        rows = histogram_csv(summarize(records)).splitlines()[1:]
        tallies = {row.split(",")[1]: int(row.split(",")[2]) for row in rows}
        c["detail"] = ", ".join(f"{k} {tallies[k]}" for k in injections)
        assert all(tallies[k] == 2 for k in injections)
        assert tallies["Success"] == 0 and sum(tallies.values()) == len(records)


def test_criterion_08_pick_time_skew(monte_carlo):
    with criterion(8, "pick-time right skew") as c:
        pt = summarize(monte_carlo[0]).overall.pick_time
        c["detail"] = f"mean {pt['mean']:.1f} s, median {pt['median']:.1f} s over {pt['count']} picks"
        assert pt["mean"] > pt["median"]


def test_criterion_09_multi_instance(monte_carlo):
    with criterion(9, "multiple-instance disambiguation") as c:
        # trial seeds depend only on (seed, scenario, index): the first 100 are the 100-trial run
        mi = [r for r in monte_carlo[0] if r.scenario == ScenarioKind.MULTI_INSTANCE_CAN.value and r.trial < 100]
        first = [r for r in mi if r.instance == 0]
        assert len(first) == 100
        merged = [r.trial for r in first if not (r.pick_tracks_min == r.pick_tracks_max == 2)]
        by_trial = {}
        for r in mi:
            by_trial.setdefault(r.trial, {})[r.instance] = r
        gaps = [
            t[1].place_offset - t[0].place_offset
            for t in by_trial.values()
            if t[0].place_offset is not None and t[1].place_offset is not None
        ]
        bad = [g for g in gaps if abs(g - 0.15) > 0.05]
        c["detail"] = (
            f"{100 - len(merged)}/100 first picks kept 2 tracks, "
            f"{len(gaps) - len(bad)}/{len(gaps)} double placements within 0.15 +/- 0.05 m"
        )
        assert not merged and not bad and gaps


def test_criterion_10_cli_determinism(tmp_path):
    with criterion(10, "seeded CLI determinism") as c:
        outs = []
        for k in range(2):
            out = tmp_path / f"seed42_{k}"
            code = cli_main(["run", "--seed", "42", "--out", str(out), "--workers", str(WORKERS)])
            assert code == 0
            outs.append(out)
        names = ("trials.csv", "distance_traces.csv", "traces.jsonl")
        same = [(outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names]
        c["detail"] = ", ".join(f"{n} {'identical' if s else 'differs'}" for n, s in zip(names, same))
        assert all(same)
