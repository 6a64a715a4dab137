"""
Lists every experiment kind and the configuration block fields in the docs
under the Experiments Catalog heading.
"""

from pathlib import Path
from textwrap import dedent

import mkdocs_gen_files

from farcuriosity_lab.blocks import EXPERIMENT_KINDS, ExperimentConfig, PpoSettings

COLLECTION_SLUG = "farcuriosity_lab"


def insert_kinds(generated_file):
    generated_file.write("## Experiment kinds\n\n")
    generated_file.write("| Kind | Default curiosity | Description |\n")
    generated_file.write("| --- | --- | --- |\n")
    for kind, (curiosity, description) in EXPERIMENT_KINDS.items():
        generated_file.write(f"| `{kind}` | `{curiosity}` | {description} |\n")
    generated_file.write("\n")


def insert_fields(generated_file, model, title):
    generated_file.write(f"## {title}\n\n")
    generated_file.write("| Field | Default | Description |\n")
    generated_file.write("| --- | --- | --- |\n")
    for name, field in model.__fields__.items():
        if name.startswith("_") or name == "ppo":
            continue
        default = field.default
        if default is None and field.default_factory is not None:
            default = field.default_factory()
        description = field.field_info.description or ""
        generated_file.write(f"| `{name}` | `{default!r}` | {description} |\n")
    generated_file.write("\n")


def insert_experiments_catalog(generated_file):
    generated_file.write(
        dedent(
            f"""
            # Experiments Catalog

            Every run is described by an
            [ExperimentConfig][{COLLECTION_SLUG}.blocks.ExperimentConfig] block.
            Register it to [view and edit it](https://docs.prefect.io/ui/blocks/)
            from the Prefect UI with
            ```bash
            prefect block register -m {COLLECTION_SLUG}.blocks
            ```

            or write the same fields to a TOML file and pass it to
            `farlab run --config`.

            """
        )
    )
    insert_kinds(generated_file)
    insert_fields(generated_file, ExperimentConfig, "Configuration fields")
    insert_fields(generated_file, PpoSettings, "PPO settings (`[ppo]` table)")
    generated_file.write(
        dedent(
            """
            To run a stored configuration:
            ```python
            from farcuriosity_lab import ExperimentConfig
            from farcuriosity_lab.flows import run_experiment

            run_experiment(ExperimentConfig.load("MY_BLOCK_NAME"))
            ```
            """
        )
    )


experiments_catalog_path = Path("experiments_catalog.md")
with mkdocs_gen_files.open(experiments_catalog_path, "w") as generated_file:
    insert_experiments_catalog(generated_file)
