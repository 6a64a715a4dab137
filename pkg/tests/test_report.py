import json
from pathlib import Path

import pandas as pd
import pytest

from farcuriosity_lab.exceptions import MissingRunFilesError
from farcuriosity_lab.flows import AGGREGATE_NAME, MANIFEST_NAME, run_experiment
from farcuriosity_lab.metrics import bwt, iqm, relative_improvement
from farcuriosity_lab.persistence import read_csv
from farcuriosity_lab.report import find_runs, missing_files, report


@pytest.fixture
def runs_root(small_toy_config):
    run_experiment(small_toy_config)
    run_experiment(small_toy_config.with_overrides(curiosity="far", rho=2.0))
    return small_toy_config.out_dir


def test_find_runs(runs_root, tmp_path):
    runs = find_runs(runs_root)
    assert len(runs) == 2
    assert find_runs(runs[0]) == [runs[0]]
    assert find_runs(tmp_path / "nowhere") == []


def test_summary_table(runs_root, tmp_path):
    out = tmp_path / "summary"
    table = report(runs_root, out_dir=out)
    assert sorted(table["curiosity"]) == ["far", "rnd"]
    assert {
        "run",
        "kind",
        "n_seeds",
        "final_mean",
        "final_stderr",
        "final_iqm",
        "trend_slope",
        "heterogeneity",
        "n_fragments",
        "relative_improvement",
    } <= set(table.columns)
    assert list(table["n_seeds"]) == [2, 2]

    far = table[table["curiosity"] == "far"].iloc[0]
    rnd = table[table["curiosity"] == "rnd"].iloc[0]
    assert far["relative_improvement"] == pytest.approx(
        relative_improvement(far["final_mean"], rnd["final_mean"])
    )
    assert pd.isna(rnd["relative_improvement"])

    assert len(read_csv(out / "summary.csv")) == 2
    assert (out / "summary.md").read_text().startswith("|")


def test_timeline_follows_recorded_events(runs_root):
    report(runs_root)
    far_runs = [run for run in find_runs(runs_root) if "-far-" in run.name]
    manifest = json.loads((far_runs[0] / MANIFEST_NAME).read_text())
    recorded = any("events" in entry for entry in manifest["seeds"])
    timeline = Path(runs_root) / "timeline.csv"
    assert timeline.exists() == recorded
    if recorded:
        frame = read_csv(timeline)
        assert list(frame.columns[:2]) == ["run", "seed"]
        assert set(frame["event"]) <= {"fragmented", "recalled"}


def test_single_run_directory(runs_root):
    run_dir = find_runs(runs_root)[0]
    table = report(run_dir)
    assert len(table) == 1
    assert (run_dir / "summary.csv").exists()


def test_multiroom_rows_per_decay(small_multiroom_config):
    run_dir = run_experiment(small_multiroom_config)
    table = report(run_dir)
    assert sorted(table["gamma_decay"]) == [0.999, 1.0]
    assert list(table["n_seeds"]) == [2, 2]


def test_missing_files_are_listed(runs_root):
    run_dir = find_runs(runs_root)[0]
    (run_dir / "seed_1.csv").unlink()
    (run_dir / AGGREGATE_NAME).unlink()
    assert len(missing_files(run_dir)) == 2
    with pytest.raises(MissingRunFilesError) as excinfo:
        report(runs_root)
    assert excinfo.value.missing == sorted(
        [str(run_dir / "seed_1.csv"), str(run_dir / AGGREGATE_NAME)]
    )
    assert "seed_1.csv" in str(excinfo.value)


def test_empty_directory(tmp_path):
    with pytest.raises(MissingRunFilesError) as excinfo:
        report(tmp_path)
    assert excinfo.value.missing == [str(tmp_path / MANIFEST_NAME)]


def test_steps_table_per_run_type(runs_root, small_multiroom_config):
    run_experiment(small_multiroom_config)
    report(runs_root)
    steps = read_csv(Path(runs_root) / "steps.csv")
    assert list(steps.columns[:3]) == ["run", "kind", "curiosity"]

    rnd = steps[steps["curiosity"] == "rnd"].dropna(axis=1, how="all")
    assert list(rnd.columns[3:]) == [
        "step",
        "start_obs_intrinsic_mean",
        "start_obs_intrinsic_stderr",
    ]
    assert list(rnd["step"]) == [0, 200, 400, 600]

    far = steps[steps["curiosity"] == "far"].dropna(axis=1, how="all")
    assert list(far.columns[3:]) == [
        "step",
        "start_obs_intrinsic_mean",
        "start_obs_intrinsic_stderr",
        "n_fragments",
        "event",
    ]
    assert (far["n_fragments"] >= 1).all()

    count = steps[steps["curiosity"] == "count"].dropna(axis=1, how="all")
    assert list(count.columns[3:]) == ["step", "mean_return", "stderr", "gamma_decay"]
    assert sorted(set(count["gamma_decay"])) == [0.999, 1.0]
    assert set(count["kind"]) == {"multiroom-decay"}


def test_relative_improvement_matches_exact_kind(small_toy_config, tmp_path):
    run_experiment(small_toy_config)
    run_experiment(small_toy_config.with_overrides(curiosity="far", rho=2.0))
    run_experiment(small_toy_config.with_overrides(kind="toygrid-fixed", steps=400))
    run_experiment(
        small_toy_config.with_overrides(
            kind="toygrid-far", curiosity="far", steps=400, block_length=100
        )
    )
    table = report(small_toy_config.out_dir, out_dir=tmp_path)
    assert len(table) == 4

    def single(kind, curiosity):
        rows = table[(table["kind"] == kind) & (table["curiosity"] == curiosity)]
        assert len(rows) == 1
        return rows.iloc[0]

    far = single("toygrid-resetfree", "far")
    rnd = single("toygrid-resetfree", "rnd")
    assert far["relative_improvement"] == pytest.approx(
        relative_improvement(far["final_mean"], rnd["final_mean"])
    )
    assert pd.isna(single("toygrid-far", "far")["relative_improvement"])
    assert pd.isna(single("toygrid-fixed", "rnd")["relative_improvement"])


def test_iqm_and_bwt_follow_seed_summaries(small_far_config):
    run_dir = run_experiment(small_far_config)
    row = report(run_dir).iloc[0]
    summaries = [
        entry["summary"]
        for entry in json.loads((run_dir / MANIFEST_NAME).read_text())["seeds"]
    ]
    finals = [summary["final"] for summary in summaries]
    assert row["final_iqm"] == pytest.approx(iqm(finals))
    assert row["bwt"] == pytest.approx(
        sum(bwt(summary["xi"]) for summary in summaries) / len(summaries)
    )
