import dataclasses
import json
import random

import pytest

from grasp_sim.config import SimConfig
from grasp_sim.fsm import validate_trace
from grasp_sim.gripper import gripper_center
from grasp_sim.harness import (
    FailureMode,
    FaultInjection,
    IoFailure,
    ScenarioKind,
    ScenarioSpec,
    TrialRecord,
    aborted_fraction,
    emit_reports,
    generate_scenario,
    histogram_csv,
    read_records,
    run_experiment,
    run_trial,
    summarize,
    trial_seed,
    trials_csv,
)

NOISELESS = SimConfig.noiseless()


def nominal_scenario(kind="SingleCan", distance=0.93):
    spec = ScenarioSpec.for_kind(kind, NOISELESS, trials=1, starting_distance_range=(distance, distance))
    return generate_scenario(spec, 0, NOISELESS)


@pytest.fixture(scope="module")
def golden():
    return run_trial(nominal_scenario(), NOISELESS)


def rec(scenario="SingleCan", trial=0, pick=True, place=True, pick_time=20.0, resets=0, mode=None, **kw):
    return TrialRecord(
        scenario, trial, 0, 1, pick, place if pick else None, resets, pick_time if pick else None, 0.9, mode, **kw
    )


# -- scenario generation -------------------------------------------------------------


def test_trial_seeds_are_distinct_and_stable():
    seeds = {trial_seed(0, k, i) for k in ScenarioKind for i in range(50)}
    assert len(seeds) == 250
    assert trial_seed(7, ScenarioKind.SINGLE_CAN, 3) == trial_seed(7, ScenarioKind.SINGLE_CAN, 3)
    assert trial_seed(7, ScenarioKind.SINGLE_CAN, 3) != trial_seed(8, ScenarioKind.SINGLE_CAN, 3)


@pytest.mark.parametrize("kind", list(ScenarioKind))
def test_generated_scenes_respect_the_layout(kind):
    cfg = SimConfig()
    spec = ScenarioSpec.for_kind(kind, cfg, trials=20)
    lo, hi = cfg.layout.starting_distance_range
    for i in range(20):
        gen = generate_scenario(spec, i, cfg)
        assert gen == generate_scenario(spec, i, cfg)
        targets = [gen.scene.find(n) for n in gen.targets]
        assert len(targets) == spec.instance_count
        assert all(o.object_class is gen.target_class for o in targets)
        assert gen.scene.find(gen.destination).object_class is gen.dest_class
        assert len(gen.scene.clutter) == spec.clutter_item_count
        if kind is ScenarioKind.MULTI_INSTANCE_CAN:
            sep = abs(targets[0].pose.y - targets[1].pose.y)
            assert cfg.layout.instance_separation_range[0] <= sep <= cfg.layout.instance_separation_range[1]
        if kind is not ScenarioKind.OBSTRUCTED_CAN:
            assert all(o.occluded_fraction == 0.0 for o in targets)
        # the gripper starts straight behind the target row, inside the distance band
        g = gripper_center(gen.initial_pose, cfg.mission.gripper)
        mid_y = sum(o.pose.y for o in targets) / len(targets)
        assert lo - 1e-9 <= targets[0].pose.x - g.x <= hi + 1e-9
        assert g.y == pytest.approx(mid_y) and g.z == pytest.approx(targets[0].pose.z)


def test_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(ScenarioKind.SINGLE_CAN, 0)
    with pytest.raises(ValueError):
        ScenarioSpec(ScenarioKind.SINGLE_CAN, 1, starting_distance_range=(1.0, 0.5))


# -- closed loop ------------------------------------------------------------------------


def test_nominal_run_picks_and_places_without_resets(golden):
    (r,) = golden.records
    assert r.pick_success and r.place_success
    assert r.reset_count == 0 and r.failure_mode is None
    assert r.starting_distance == pytest.approx(0.93, abs=1e-3)
    assert 0.8 * 18.2 <= r.pick_time <= 1.2 * 18.2
    assert validate_trace([json.loads(t.to_json()) for t in golden.transitions]) == []


def test_trials_are_deterministic(golden):
    again = run_trial(nominal_scenario(), NOISELESS)
    assert again.records == golden.records
    assert [t.to_json() for t in again.transitions] == [t.to_json() for t in golden.transitions]


def test_run_trial_leaves_the_scenario_untouched():
    gen = nominal_scenario()
    before = [dataclasses.replace(o) for o in gen.scene.objects]
    run_trial(gen, NOISELESS, FaultInjection(target_estimate_bias=(0.0, 0.0, 0.04)))
    assert gen.scene.objects == before


def test_distance_trace_starts_at_the_start_and_plateaus_at_pre_pick(golden):
    (r,) = golden.records
    label, pts = r.distance_trace[0]
    assert label == "success"
    assert pts[0][0] == 0.0 and pts[-1][0] == 1.0
    assert pts[0][1] == pytest.approx(0.93, abs=0.01)
    assert pts[-1][1] < 0.02
    near_plateau = [d for _, d in pts if abs(d - 0.65) < 0.02]
    assert len(near_plateau) > 0.3 * len(pts)


@pytest.mark.parametrize(
    "injection, mode, picked",
    [
        (FaultInjection(target_estimate_bias=(0.0, 0.0, 0.04)), FailureMode.KNOCK_OVER, False),
        (FaultInjection(target_estimate_bias=(0.0, 0.0, -0.04)), FailureMode.LOW_APPROACH, False),
        (FaultInjection(drift_jump=(0.4, 0.0, 0.0)), FailureMode.ESTIMATOR_DIVERGED, True),
        (FaultInjection(hide_destination=True), FailureMode.DESTINATION_NOT_FOUND, True),
        (FaultInjection(target_estimate_bias=(0.05, 0.0, 0.0)), FailureMode.RESET_LIMIT, False),
    ],
)
def test_fault_injections_produce_each_failure_mode(injection, mode, picked):
    (r,) = run_trial(nominal_scenario(), NOISELESS, injection).records
    assert r.failure_mode == mode.value
    assert r.pick_success is picked
    assert r.place_success is (False if picked else None)


def test_switch_failure_costs_one_reset_then_succeeds():
    res = run_trial(nominal_scenario(), NOISELESS, FaultInjection(grip_switch_failures=1))
    (r,) = res.records
    assert r.pick_success and r.place_success and r.reset_count == 1
    assert [t.fault.value for t in res.transitions if t.fault] == ["GraspFailed"]
    labels = [label for label, _ in r.distance_trace]
    assert labels == ["reset", "success"]


def test_bottle_nominal_run():
    (r,) = run_trial(nominal_scenario("SingleBottle"), NOISELESS).records
    assert r.pick_success and r.place_success and r.reset_count == 0


def test_multi_instance_nominal_run():
    res = run_trial(nominal_scenario("MultiInstanceCan"), NOISELESS)
    a, b = res.records
    assert (a.instance, b.instance) == (0, 1)
    assert a.place_success and b.place_success
    assert a.pick_tracks_min == a.pick_tracks_max == 2
    assert b.place_offset - a.place_offset == pytest.approx(0.15, abs=0.05)


# -- Monte Carlo and metrics ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_batch():
    cfg = SimConfig()
    specs = [ScenarioSpec.for_kind(k, cfg, trials=2, seed_base=3) for k in ScenarioKind]
    return run_experiment(specs, cfg)


def test_parallel_run_matches_serial(small_batch):
    cfg = SimConfig()
    specs = [ScenarioSpec.for_kind(k, cfg, trials=2, seed_base=3) for k in ScenarioKind]
    records, lines = run_experiment(specs, cfg, workers=2)
    assert records == small_batch[0]
    assert lines == small_batch[1]


def test_every_failed_trial_has_exactly_one_mode(small_batch):
    records, _ = small_batch
    assert len(records) == 2 * 5 + 2  # two instances per multi-instance trial
    for r in records:
        assert (r.failure_mode is None) == bool(r.pick_success and r.place_success)
        if r.failure_mode is not None:
            assert r.failure_mode in {m.value for m in FailureMode}


def test_outcomes_are_conserved(small_batch):
    records, _ = small_batch
    s = summarize(records)
    for m in list(s.scenarios.values()) + [s.overall]:
        assert m.place_successes + sum(m.failure_modes.values()) == m.trials
        assert m.place_successes <= m.pick_successes <= m.trials
    assert s.overall.trials == sum(m.trials for m in s.scenarios.values())
    assert list(s.scenarios) == [k.value for k in ScenarioKind]


def test_summary_ignores_record_order(small_batch):
    records, _ = small_batch
    shuffled = list(records)
    random.Random(5).shuffle(shuffled)
    assert summarize(shuffled) == summarize(records)


def test_summary_examples():
    one = summarize([rec(pick_time=12.5)])
    assert one.overall.pick_time["median"] == one.overall.pick_time["mean"] == 12.5
    three = summarize([rec(trial=i, pick_time=t) for i, t in enumerate((30.0, 10.0, 20.0))])
    pt = three.overall.pick_time
    assert (pt["min"], pt["median"], pt["mean"], pt["max"]) == (10.0, 20.0, 20.0, 30.0)
    table = [rec(trial=i) for i in range(65)] + [rec(trial=65 + i, pick=False, mode="KnockOver") for i in range(5)]
    m = summarize(table).overall
    assert m.pick_rate == pytest.approx(65 / 70)
    assert m.place_rate == 1.0
    with pytest.raises(ValueError):
        summarize([])


def test_skewed_times_give_mean_above_median():
    times = [15.0, 16.0, 18.0, 19.0, 20.0, 60.0, 90.0]
    pt = summarize([rec(trial=i, pick_time=t) for i, t in enumerate(times)]).overall.pick_time
    assert pt["mean"] > pt["median"]


def test_histogram_tallies_injected_failures():
    records = []
    for i, inj in enumerate(
        [
            FaultInjection(target_estimate_bias=(0.0, 0.0, 0.04)),
            FaultInjection(target_estimate_bias=(0.0, 0.0, -0.04)),
            FaultInjection(drift_jump=(0.4, 0.0, 0.0)),
            FaultInjection(hide_destination=True),
            FaultInjection(),
        ]
    ):
        (r,) = run_trial(nominal_scenario(), NOISELESS, inj).records
        records.append(dataclasses.replace(r, trial=i))
    rows = histogram_csv(summarize(records)).splitlines()
    counts = {line.split(",")[1]: int(line.split(",")[2]) for line in rows[1:]}
    assert counts == {
        "Success": 1, "KnockOver": 1, "LowApproach": 1, "EstimatorDiverged": 1,
        "DestinationNotFound": 1, "ResetLimit": 0, "Timeout": 0,
    }


def test_aborted_fraction():
    assert aborted_fraction([]) == 0.0
    rs = [rec(pick=False, mode="ResetLimit"), rec(pick=False, mode="KnockOver"), rec()]
    assert aborted_fraction(rs) == pytest.approx(1 / 3)


# -- reports ------------------------------------------------------------------------------------


def test_reports_round_trip(small_batch, tmp_path):
    records, lines = small_batch
    written = emit_reports(summarize(records), records, tmp_path, lines)
    assert {p.name for p in written} == {
        "summary.json", "trials.csv", "distance_traces.csv", "failure_histogram.csv", "traces.jsonl",
    }
    back = read_records(tmp_path)
    assert back == records
    assert summarize(back) == summarize(records)
    rows = [json.loads(line) for line in (tmp_path / "traces.jsonl").read_text().splitlines()]
    assert validate_trace(rows) == []


def test_unwritable_output_is_an_io_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoFailure):
        emit_reports(summarize([rec()]), [rec()], blocker / "sub")
    with pytest.raises(IoFailure):
        read_records(tmp_path / "missing")


def test_place_success_requires_a_pick():
    with pytest.raises(ValueError):
        TrialRecord("SingleCan", 0, 0, 0, False, True, 0, None, 0.9, None)
