import json
import subprocess
import sys

import pytest

from grasp_sim.cli import EXIT_ABORTED, EXIT_IO, EXIT_OK, EXIT_USAGE, main

RUN = ["run", "--scenario", "SingleCan", "--trials", "2", "--seed", "5"]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(RUN + ["--out", str(out)]) == EXIT_OK
    return out


def test_run_writes_all_reports(run_dir):
    names = {p.name for p in run_dir.iterdir()}
    assert names == {"summary.json", "trials.csv", "distance_traces.csv", "failure_histogram.csv", "traces.jsonl"}
    summary = json.loads((run_dir / "summary.json").read_text())
    assert list(summary["scenarios"]) == ["SingleCan"]
    assert summary["overall"]["trials"] == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "grasp_sim", *RUN, "--out", str(tmp_path)], capture_output=True, text=True
    )
    assert proc.returncode == 0, proc.stderr
    assert "SingleCan" in proc.stdout


def test_same_seed_same_bytes(run_dir, tmp_path):
    assert main(RUN + ["--out", str(tmp_path), "--workers", "2"]) == EXIT_OK
    for name in ("trials.csv", "distance_traces.csv", "traces.jsonl", "summary.json"):
        assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes()


def test_scale_multiplies_trials(tmp_path):
    assert main(["run", "--scenario", "SingleCan", "--trials", "1", "--scale", "2", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "summary.json").read_text())["overall"]["trials"] == 2


def test_replay_accepts_a_recorded_trace(run_dir, capsys):
    assert main(["replay", "--trace", str(run_dir / "traces.jsonl")]) == EXIT_OK
    assert "0 problems" in capsys.readouterr().out


def test_replay_flags_an_illegal_edge(run_dir, tmp_path, capsys):
    rows = [json.loads(line) for line in (run_dir / "traces.jsonl").read_text().splitlines()]
    rows[0]["to"] = "ReleaseObject"
    bad = tmp_path / "bad.jsonl"
    bad.write_text("".join(json.dumps(r) + "\n" for r in rows))
    assert main(["replay", "--trace", str(bad)]) == 1
    assert "problems" in capsys.readouterr().out


def test_replay_missing_file_is_an_io_error(tmp_path):
    assert main(["replay", "--trace", str(tmp_path / "none.jsonl")]) == EXIT_IO


def test_report_rebuilds_the_same_summary(run_dir, tmp_path):
    for name in ("trials.csv", "distance_traces.csv"):
        (tmp_path / name).write_bytes((run_dir / name).read_bytes())
    assert main(["report", "--in", str(tmp_path)]) == EXIT_OK
    for name in ("summary.json", "failure_histogram.csv", "trials.csv"):
        assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes()


def test_report_without_records_is_an_io_error(tmp_path):
    assert main(["report", "--in", str(tmp_path)]) == EXIT_IO


def test_unwritable_output_is_an_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(RUN[:4] + ["1", "--out", str(blocker / "x")]) == EXIT_IO


def test_bad_config_and_arguments(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("filter:\n  gamma_d: 2.0\n")
    assert main(RUN + ["--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(RUN + ["--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["run", "--trials", "0", "--out", str(tmp_path)]) == EXIT_USAGE
    with pytest.raises(SystemExit):
        main(["run", "--scenario", "Nope", "--out", str(tmp_path)])


def test_mostly_aborted_runs_exit_nonzero(tmp_path):
    cfg = tmp_path / "abort.yaml"
    # every grasp lands 5 cm past the can, so each trial exhausts its single reset
    cfg.write_text("mission:\n  faults:\n    max_resets: 1\n  waypoints:\n    pick_offset: [0.05, 0.0, 0.0, 0.0]\n")
    out = tmp_path / "out"
    assert main(RUN + ["--config", str(cfg), "--out", str(out)]) == EXIT_ABORTED
    assert main(["report", "--in", str(out)]) == EXIT_ABORTED
