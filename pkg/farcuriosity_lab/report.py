"""Summary tables over run directories written by the flows."""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from prefect.logging import get_logger

from farcuriosity_lab.exceptions import MissingRunFilesError, UndefinedMetricError
from farcuriosity_lab.flows import AGGREGATE_NAME, MANIFEST_NAME
from farcuriosity_lab.metrics import MetricsTable, mean_stderr, trend_slope
from farcuriosity_lab.persistence import read_csv, write_csv

logger = get_logger("farcuriosity_lab.report")

SUMMARY_CSV = "summary.csv"
SUMMARY_MD = "summary.md"
STEPS_CSV = "steps.csv"
TIMELINE_CSV = "timeline.csv"
BASELINES = {"toygrid": "rnd", "multiroom": "count"}
RUN_COLUMNS = ["run", "kind", "curiosity"]


def find_runs(root: Union[str, Path]) -> List[Path]:
    """`root` itself when it holds a manifest, else its run subdirectories."""
    root = Path(root)
    if (root / MANIFEST_NAME).exists():
        return [root]
    return sorted(path.parent for path in root.glob(f"*/{MANIFEST_NAME}"))


def missing_files(run_dir: Path) -> List[Path]:
    """Files a run's manifest references that are absent."""
    manifest_path = run_dir / MANIFEST_NAME
    if not manifest_path.exists():
        return [manifest_path]
    manifest = json.loads(manifest_path.read_text())
    expected = [run_dir / manifest.get("aggregate", AGGREGATE_NAME)]
    for entry in manifest["seeds"]:
        expected.append(run_dir / entry["csv"])
        if "events" in entry:
            expected.append(run_dir / entry["events"])
    return [path for path in expected if not path.exists()]


def _value_column(frame: pd.DataFrame) -> str:
    if "mean_return" in frame:
        return "mean_return"
    return "start_obs_intrinsic_mean"


def _label(run: str, decay: Optional[float]) -> str:
    return run if decay is None else f"{run}@{decay:.4f}"


def _run_rows(run_dir: Path, metrics: MetricsTable) -> List[Dict[str, Any]]:
    manifest = json.loads((run_dir / MANIFEST_NAME).read_text())
    aggregate = read_csv(run_dir / manifest.get("aggregate", AGGREGATE_NAME))
    value = _value_column(aggregate)
    groups: Dict[Optional[float], List[Dict[str, Any]]] = {}
    for entry in manifest["seeds"]:
        groups.setdefault(entry.get("gamma_decay"), []).append(entry)

    rows = []
    for decay, entries in groups.items():
        frame = aggregate
        if decay is not None and "gamma_decay" in aggregate:
            frame = aggregate[np.isclose(aggregate["gamma_decay"], decay)]
        label = _label(run_dir.name, decay)
        summaries = [entry["summary"] for entry in entries]
        for summary in summaries:
            metrics.add_score(label, summary["final"])
        final_mean, final_stderr = mean_stderr(metrics.scores[label])
        metrics.mean_returns[label] = final_mean
        row = {
            "run": run_dir.name,
            "kind": manifest["kind"],
            "curiosity": manifest["curiosity"],
            "gamma_decay": decay,
            "n_seeds": len(entries),
            "final_mean": final_mean,
            "final_stderr": final_stderr,
            "final_iqm": metrics.iqm(label),
            "trend_slope": trend_slope(frame["step"], frame[value]),
            "heterogeneity": _mean_of(summaries, "heterogeneity"),
        }
        if "n_fragments" in frame:
            row["n_fragments"] = float(frame["n_fragments"].iloc[-1])
            row["n_fragmented"] = _mean_of(summaries, "n_fragmented")
            row["n_recalled"] = _mean_of(summaries, "n_recalled")
        bwts = [
            MetricsTable(xi=s["xi"]).bwt()
            for s in summaries
            if len(s.get("xi") or []) >= 2
        ]
        if bwts:
            row["bwt"] = float(np.mean(bwts))
        rows.append(row)
    return rows


def _mean_of(summaries: List[Dict[str, Any]], key: str) -> Optional[float]:
    values = [s[key] for s in summaries if s.get(key) is not None]
    return float(np.mean(values)) if values else None


def _steps(run_dir: Path) -> pd.DataFrame:
    """A run's aggregate curve, prefixed with its run, kind and curiosity."""
    manifest = json.loads((run_dir / MANIFEST_NAME).read_text())
    frame = read_csv(run_dir / manifest.get("aggregate", AGGREGATE_NAME))
    for position, column in enumerate(RUN_COLUMNS):
        name = run_dir.name if column == "run" else manifest[column]
        frame.insert(position, column, name)
    return frame


def _timeline(run_dir: Path) -> Optional[pd.DataFrame]:
    manifest = json.loads((run_dir / MANIFEST_NAME).read_text())
    frames = []
    for entry in manifest["seeds"]:
        if "events" not in entry:
            continue
        frame = read_csv(run_dir / entry["events"])
        frame.insert(0, "seed", entry["seed"])
        frame.insert(0, "run", run_dir.name)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True) if frames else None


def _baseline_label(table: pd.DataFrame, row: pd.Series) -> Optional[str]:
    """The baseline run of exactly `row`'s kind, preferring a matching decay."""
    baseline = BASELINES.get(row["kind"].split("-")[0])
    base = table[(table["curiosity"] == baseline) & (table["kind"] == row["kind"])]
    if base.empty:
        return None
    decay = _decay_of(row)
    if decay is not None:
        same_decay = base[np.isclose(base["gamma_decay"].astype(float), decay)]
        if not same_decay.empty:
            base = same_decay
    if len(base) > 1:
        logger.warning(
            "%d %s baselines for %s; comparing against %s",
            len(base),
            baseline,
            row["run"],
            base["run"].iloc[0],
        )
    first = base.iloc[0]
    return _label(first["run"], _decay_of(first))


def _decay_of(row: pd.Series) -> Optional[float]:
    decay = row["gamma_decay"]
    return None if decay is None or pd.isna(decay) else float(decay)


def _add_relative_improvement(
    table: pd.DataFrame, metrics: MetricsTable
) -> pd.DataFrame:
    """Relative improvement of far runs over the baseline run of the same kind."""
    improvements = []
    for _, row in table.iterrows():
        base = _baseline_label(table, row) if row["curiosity"] == "far" else None
        if base is None:
            improvements.append(None)
            continue
        try:
            improvements.append(
                metrics.relative_improvement(_label(row["run"], _decay_of(row)), base)
            )
        except UndefinedMetricError:
            improvements.append(None)
    table["relative_improvement"] = improvements
    return table


def report(
    run_dir: Union[str, Path], out_dir: Optional[Union[str, Path]] = None
) -> pd.DataFrame:
    """
    Summarize one run directory, or every run below an output directory.

    Writes `summary.csv`, `summary.md`, the per-step `steps.csv` and, when
    fragmentation events were recorded, `timeline.csv` into `out_dir`
    (defaults to `run_dir`).

    Args:
        run_dir: A run directory or a directory of runs.
        out_dir: Where to write the summary files.

    Returns:
        The summary table: one row per run (and decay variant) with final score
        mean, standard error and IQM across seeds, trend slope of the aggregate
        curve, heterogeneity, fragment and event counts, BWT and relative
        improvement over the baseline curiosity of the same kind.

    Raises:
        MissingRunFilesError: Manifests or CSVs are missing; lists them all.
    """
    run_dir = Path(run_dir)
    out_dir = run_dir if out_dir is None else Path(out_dir)
    runs = find_runs(run_dir)
    if not runs:
        raise MissingRunFilesError([run_dir / MANIFEST_NAME])
    missing = [path for run in runs for path in missing_files(run)]
    if missing:
        raise MissingRunFilesError(missing)

    metrics = MetricsTable()
    table = pd.DataFrame([row for run in runs for row in _run_rows(run, metrics)])
    table = _add_relative_improvement(table, metrics)
    write_csv(table, out_dir / SUMMARY_CSV)
    (out_dir / SUMMARY_MD).write_text(table.to_markdown(index=False) + "\n")
    write_csv(
        pd.concat([_steps(run) for run in runs], ignore_index=True),
        out_dir / STEPS_CSV,
    )

    timelines = [frame for frame in map(_timeline, runs) if frame is not None]
    if timelines:
        write_csv(pd.concat(timelines, ignore_index=True), out_dir / TIMELINE_CSV)
    logger.info("Summarized %d run(s) into %s", len(runs), out_dir)
    return table
