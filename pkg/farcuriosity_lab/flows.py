"""Prefect flows running experiments and writing their CSVs and manifests"""

import json
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from prefect import flow, get_run_logger, task
from prefect.task_runners import SequentialTaskRunner

from farcuriosity_lab._version import get_versions
from farcuriosity_lab.blocks import ExperimentConfig
from farcuriosity_lab.constants import STATE_FORMAT_VERSION, SWEEP_PSIS, SWEEP_RHOS
from farcuriosity_lab.experiments import SeedResult, run_seed_experiment, variants
from farcuriosity_lab.metrics import mean_stderr
from farcuriosity_lab.persistence import write_csv

MANIFEST_NAME = "manifest.json"
AGGREGATE_NAME = "aggregate.csv"


def run_dir_for(config: ExperimentConfig) -> Path:
    """`<out_dir>/<kind>-<curiosity>-<first 8 hex digits of the config hash>`."""
    name = f"{config.kind}-{config.curiosity}-{config.config_hash()[:8]}"
    return Path(config.out_dir) / name


def seed_csv_name(seed: int, variant: Optional[float] = None) -> str:
    if variant is None:
        return f"seed_{seed}.csv"
    return f"seed_{seed}_decay_{variant:.4f}.csv"


@task
def run_seed(
    config: ExperimentConfig, seed: int, gamma_decay: Optional[float] = None
) -> SeedResult:
    """
    Run one seed (and decay variant) of an experiment.

    Args:
        config: The experiment configuration.
        seed: Seed of this trial.
        gamma_decay: Visit-count decay overriding `config.gamma_decay`.

    Returns:
        The rows and summary of the trial.
    """
    logger = get_run_logger()
    started = time.perf_counter()
    result = run_seed_experiment(config, seed, gamma_decay=gamma_decay)
    result.summary["wall_time_s"] = time.perf_counter() - started
    logger.info(
        "Seed %d of %s (%s%s) finished in %.1fs, final score %.4f",
        seed,
        config.kind,
        config.curiosity,
        "" if gamma_decay is None else f", gamma_decay={gamma_decay}",
        result.summary["wall_time_s"],
        result.summary["final"],
    )
    return result


@task
def write_seed_outputs(result: SeedResult, run_dir: Path) -> Dict[str, Any]:
    """Write the per-seed CSV (and event timeline); return its manifest entry."""
    name = seed_csv_name(result.seed, result.variant)
    write_csv(pd.DataFrame(result.rows), run_dir / name)
    entry = {
        "seed": result.seed,
        "csv": name,
        "summary": result.summary,
    }
    if result.variant is not None:
        entry["gamma_decay"] = result.variant
    if result.events:
        events_name = "events_" + name
        write_csv(pd.DataFrame(result.events), run_dir / events_name)
        entry["events"] = events_name
    return entry


def aggregate_rows(
    config: ExperimentConfig, results: List[SeedResult]
) -> pd.DataFrame:
    """
    Mean and standard error across seeds, step by step.

    Toy runs yield `step, start_obs_intrinsic_mean, start_obs_intrinsic_stderr`;
    MultiRoom runs yield `step, mean_return, stderr` plus `gamma_decay` for the
    count bonus. Runs with the fragmentation-and-recall module add the mean
    `n_fragments` and the `event` labels seen across seeds.
    """
    frames = []
    for result in results:
        frame = pd.DataFrame(result.rows)
        frame["seed"] = result.seed
        frames.append(frame)
    data = pd.concat(frames, ignore_index=True)
    value = "mean_return" if config.is_multiroom() else "start_obs_intrinsic"
    keys = ["gamma_decay", "step"] if "gamma_decay" in data else ["step"]

    grouped = data.groupby(keys, sort=True)
    table = grouped[value].agg(["mean", "sem"]).reset_index()
    table = table.rename(columns={"sem": "stderr"}).fillna({"stderr": 0.0})
    if config.is_multiroom():
        table = table.rename(columns={"mean": "mean_return"})
    else:
        table = table.rename(
            columns={
                "mean": "start_obs_intrinsic_mean",
                "stderr": "start_obs_intrinsic_stderr",
            }
        )
    if "n_fragments" in data:
        extra = grouped.agg(
            n_fragments=("n_fragments", "mean"),
            event=("event", _merge_events),
        ).reset_index()
        table = table.merge(extra, on=keys)
    ordered = ["step"] + [c for c in table.columns if c not in ("step", "gamma_decay")]
    if "gamma_decay" in table:
        ordered.append("gamma_decay")
    return table[ordered]


def _merge_events(labels: pd.Series) -> str:
    seen = sorted({label for label in labels if label != "none"})
    return ";".join(seen) if seen else "none"


@task
def write_aggregate(
    config: ExperimentConfig, results: List[SeedResult], run_dir: Path
) -> Path:
    return write_csv(aggregate_rows(config, results), run_dir / AGGREGATE_NAME)


@task
def write_manifest(
    config: ExperimentConfig,
    entries: List[Dict[str, Any]],
    run_dir: Path,
    wall_time: float,
) -> Path:
    """JSON manifest: configuration, seeds, code version and wall time."""
    finals = [entry["summary"]["final"] for entry in entries]
    final_mean, final_stderr = mean_stderr(finals)
    manifest = {
        "version": STATE_FORMAT_VERSION,
        "code_version": get_versions()["version"],
        "created": datetime.now(timezone.utc).isoformat(),
        "config": config.config_dict(),
        "config_hash": config.config_hash(),
        "kind": config.kind,
        "curiosity": config.curiosity,
        "seeds": entries,
        "aggregate": AGGREGATE_NAME,
        "final_mean": final_mean,
        "final_stderr": final_stderr,
        "wall_time_s": wall_time,
    }
    by_decay: Dict[float, List[float]] = {}
    for entry in entries:
        if "gamma_decay" in entry:
            by_decay.setdefault(entry["gamma_decay"], []).append(
                entry["summary"]["final"]
            )
    if by_decay:
        manifest["final_by_gamma_decay"] = {
            f"{decay:.4f}": dict(zip(("mean", "stderr"), mean_stderr(finals)))
            for decay, finals in sorted(by_decay.items())
        }
    path = run_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, default=float))
    return path


@flow(name="run-experiment", task_runner=SequentialTaskRunner())
def run_experiment(config: ExperimentConfig) -> Path:
    """
    Run every seed (and decay variant) of `config` as a task, then write one
    CSV per seed, the aggregate CSV and the run manifest.

    Args:
        config: The experiment to run.

    Returns:
        The run directory.

    Example:
        ```python
        from farcuriosity_lab import ExperimentConfig
        from farcuriosity_lab.flows import run_experiment

        run_experiment(ExperimentConfig(kind="toygrid-fixed", steps=20_000))
        ```
    """
    logger = get_run_logger()
    started = time.perf_counter()
    run_dir = run_dir_for(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    logger.info(
        "Running %s with %s curiosity on seeds %s into %s",
        config.kind,
        config.curiosity,
        config.seeds,
        run_dir,
    )

    futures = [
        run_seed.submit(config, seed, gamma_decay=variant)
        for variant in variants(config)
        for seed in config.seeds
    ]
    results = [future.result() for future in futures]
    entries = [write_seed_outputs(result, run_dir) for result in results]
    write_aggregate(config, results, run_dir)
    manifest = write_manifest(
        config, entries, run_dir, time.perf_counter() - started
    )
    logger.info("Wrote %s", manifest)
    return run_dir


def run(config: ExperimentConfig, threads: Optional[int] = None) -> Path:
    """`run_experiment` on the task runner selected by `threads`/`FARLAB_THREADS`."""
    runner = config.get_task_runner(threads)
    return run_experiment.with_options(task_runner=runner)(config)


@flow(name="sensitivity-sweep")
def sweep(
    config: ExperimentConfig,
    rhos: Sequence[float] = SWEEP_RHOS,
    psis: Sequence[float] = SWEEP_PSIS,
) -> Path:
    """
    Run `config` with the fragmentation-and-recall module over a grid of
    fragmentation thresholds `rhos` and recall thresholds `psis`, then write
    `sweep.csv` with the final score of each cell.

    Returns:
        Path of `sweep.csv`.
    """
    logger = get_run_logger()
    records = []
    for rho in rhos:
        for psi in psis:
            cell = config.with_overrides(curiosity="far", rho=rho, psi=psi)
            run_dir = run_experiment(cell)
            manifest = json.loads((run_dir / MANIFEST_NAME).read_text())
            fragments = [
                entry["summary"].get("n_fragments", 1) for entry in manifest["seeds"]
            ]
            records.append(
                {
                    "rho": rho,
                    "psi": psi,
                    "final_mean": manifest["final_mean"],
                    "final_stderr": manifest["final_stderr"],
                    "n_fragments_mean": sum(fragments) / len(fragments),
                    "run_dir": run_dir.name,
                }
            )
            logger.info(
                "rho=%s psi=%s: final %.4f", rho, psi, manifest["final_mean"]
            )
    return write_csv(pd.DataFrame(records), Path(config.out_dir) / "sweep.csv")
