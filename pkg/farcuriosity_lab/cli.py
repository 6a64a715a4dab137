"""The `farlab` command line."""

from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional

import pandas as pd
import typer
from pydantic import VERSION as PYDANTIC_VERSION

from farcuriosity_lab import flows
from farcuriosity_lab.blocks import ExperimentConfig
from farcuriosity_lab.constants import SWEEP_PSIS, SWEEP_RHOS
from farcuriosity_lab.exceptions import (
    FarLabError,
    MissingRunFilesError,
    StateFormatError,
)
from farcuriosity_lab.experiments import probe_sequence, train_curiosity
from farcuriosity_lab.persistence import load_state, save_state, write_csv
from farcuriosity_lab.report import report as summarize

if PYDANTIC_VERSION.startswith("2."):
    from pydantic.v1 import ValidationError
else:
    from pydantic import ValidationError

EXIT_INVALID = 2
EXIT_IO = 3
EXIT_MISSING = 4

app = typer.Typer(
    name="farlab",
    help="Curiosity forgetting experiments: run, sweep, report, save and probe.",
    no_args_is_help=True,
    add_completion=False,
)


@contextmanager
def exit_codes() -> Iterator[None]:
    """Map lab errors onto the command's exit codes."""
    try:
        yield
    except MissingRunFilesError as exc:
        typer.echo(str(exc), err=True)
        raise typer.Exit(EXIT_MISSING)
    except (ValidationError, FarLabError) as exc:
        typer.echo(f"Invalid input: {exc}", err=True)
        raise typer.Exit(EXIT_INVALID)
    except OSError as exc:
        typer.echo(f"I/O error: {exc}", err=True)
        raise typer.Exit(EXIT_IO)


def build_config(config_path: Optional[Path], **overrides) -> ExperimentConfig:
    """Configuration from `config_path` (or defaults) with CLI overrides."""
    base = (
        ExperimentConfig.from_file(config_path)
        if config_path is not None
        else ExperimentConfig()
    )
    return base.with_overrides(**overrides)


ConfigOpt = typer.Option(None, "--config", help="TOML or JSON configuration file.")
KindOpt = typer.Option(None, "--kind", help="Experiment kind.")
SeedOpt = typer.Option(None, "--seed", help="Seed; repeat for several.")
StepsOpt = typer.Option(None, "--steps", help="Environment steps per seed.")
OutOpt = typer.Option(None, "--out", help="Output directory.")
CuriosityOpt = typer.Option(None, "--curiosity", help="rnd, far or count.")
RhoOpt = typer.Option(None, "--rho", help="Fragmentation threshold.")
PsiOpt = typer.Option(None, "--psi", help="Recall threshold.")
SimCapOpt = typer.Option(None, "--sim-cap", help="Fragmentation similarity cap.")
DecayOpt = typer.Option(None, "--gamma-decay", help="Visit-count decay.")
CIntOpt = typer.Option(None, "--c-int", help="Intrinsic reward weight.")
NormalizeOpt = typer.Option(
    None,
    "--normalize-by-running-mean/--raw",
    help="Divide intrinsic rewards by their running mean.",
)
ThreadsOpt = typer.Option(
    None, "--threads", help="Seed-level parallelism; defaults to FARLAB_THREADS."
)


@app.command()
def run(
    config: Optional[Path] = ConfigOpt,
    kind: Optional[str] = KindOpt,
    seed: Optional[List[int]] = SeedOpt,
    steps: Optional[int] = StepsOpt,
    out: Optional[Path] = OutOpt,
    curiosity: Optional[str] = CuriosityOpt,
    rho: Optional[float] = RhoOpt,
    psi: Optional[float] = PsiOpt,
    sim_cap: Optional[float] = SimCapOpt,
    gamma_decay: Optional[float] = DecayOpt,
    c_int: Optional[float] = CIntOpt,
    normalize: Optional[bool] = NormalizeOpt,
    threads: Optional[int] = ThreadsOpt,
):
    """Run an experiment and write its CSVs and manifest."""
    with exit_codes():
        cfg = build_config(
            config,
            kind=kind,
            seeds=list(seed) if seed else None,
            steps=steps,
            out_dir=None if out is None else str(out),
            curiosity=curiosity,
            rho=rho,
            psi=psi,
            sim_cap=sim_cap,
            gamma_decay=gamma_decay,
            c_int=c_int,
            normalize_by_running_mean=normalize,
        )
        run_dir = flows.run(cfg, threads=threads)
    typer.echo(str(run_dir))


@app.command()
def sweep(
    config: Optional[Path] = ConfigOpt,
    kind: Optional[str] = KindOpt,
    seed: Optional[List[int]] = SeedOpt,
    steps: Optional[int] = StepsOpt,
    out: Optional[Path] = OutOpt,
    rho: Optional[List[float]] = typer.Option(
        None, "--rho", help="Fragmentation thresholds of the grid."
    ),
    psi: Optional[List[float]] = typer.Option(
        None, "--psi", help="Recall thresholds of the grid."
    ),
):
    """Sensitivity sweep of the fragmentation and recall thresholds."""
    with exit_codes():
        cfg = build_config(
            config,
            kind=kind,
            seeds=list(seed) if seed else None,
            steps=steps,
            out_dir=None if out is None else str(out),
        )
        path = flows.sweep(
            cfg, rhos=list(rho or SWEEP_RHOS), psis=list(psi or SWEEP_PSIS)
        )
    typer.echo(str(path))


@app.command()
def report(
    run_dir: Path = typer.Argument(..., help="A run directory or a directory of runs."),
    out: Optional[Path] = OutOpt,
):
    """Summarize finished runs into summary.csv and summary.md."""
    with exit_codes():
        table = summarize(run_dir, out_dir=out)
    typer.echo(table.to_markdown(index=False))


@app.command()
def save(
    path: Path = typer.Argument(..., help="State file to write."),
    config: Optional[Path] = ConfigOpt,
    kind: Optional[str] = KindOpt,
    seed: int = typer.Option(0, "--seed", help="Seed of the trained module."),
    steps: int = typer.Option(1000, "--steps", help="Observations to learn from."),
    curiosity: Optional[str] = CuriosityOpt,
    rho: Optional[float] = RhoOpt,
    psi: Optional[float] = PsiOpt,
):
    """Train a curiosity module on the configured toy stream and save it."""
    with exit_codes():
        cfg = build_config(config, kind=kind, curiosity=curiosity, rho=rho, psi=psi)
        source = train_curiosity(cfg, seed, steps)
        save_state(
            source,
            path,
            metadata={
                "config": cfg.config_dict(),
                "config_hash": cfg.config_hash(),
                "seed": seed,
                "steps": steps,
            },
        )
    typer.echo(str(path))


@app.command()
def probe(
    path: Path = typer.Argument(..., help="State file written by `farlab save`."),
    count: int = typer.Option(10, "--count", help="Length of the probe sequence."),
    probe_seed: int = typer.Option(0, "--probe-seed", help="Seed of the probe walk."),
    out: Optional[Path] = typer.Option(None, "--out", help="CSV file to write."),
):
    """Reload a saved module and print its rewards on a probe sequence."""
    with exit_codes():
        source, metadata = load_state(path, with_metadata=True)
        if "config" not in metadata or "seed" not in metadata:
            raise StateFormatError(f"{path} carries no configuration to probe with.")
        cfg = ExperimentConfig(**metadata["config"])
        frames = probe_sequence(cfg, int(metadata["seed"]), count, probe_seed)
        rewards = pd.DataFrame(
            {"index": range(len(frames)), "reward": [source.probe(f) for f in frames]}
        )
        if out is not None:
            write_csv(rewards, out)
    typer.echo(rewards.to_csv(index=False), nl=False)


def main():
    app()


if __name__ == "__main__":
    main()
