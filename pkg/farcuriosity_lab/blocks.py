"""Module holding the experiment configuration block"""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import toml
from prefect.blocks.core import Block
from prefect.task_runners import BaseTaskRunner, SequentialTaskRunner
from prefect_dask import DaskTaskRunner
from pydantic import VERSION as PYDANTIC_VERSION

from farcuriosity_lab.constants import (
    DECAY_FACTORS,
    DEFAULT_FEATURE_DIM,
    DEFAULT_HIDDEN,
    DEFAULT_SEEDS,
    INTRINSIC_COEF,
    LTM_CAPACITY,
    MULTIROOM_DEFAULT_STEPS,
    MULTIROOM_T_MAX,
    PPO_CLIP,
    PPO_ENTROPY_COEF,
    PPO_EPOCHS,
    PPO_GAMMA,
    PPO_LAMBDA,
    PPO_LR,
    PPO_MINIBATCHES,
    PPO_N_ENVS,
    PPO_ROLLOUT,
    PPO_VALUE_COEF,
    PROBE_INTERVAL,
    PSI,
    REFRACTORY,
    RHO,
    RND_LEARNING_RATE,
    SIM_CAP,
    THREADS_ENV_VAR,
    TOY_DEFAULT_STEPS,
    TOY_FIXED_LENGTH,
    TOY_INCREASE_FACTOR,
    TOY_RND_HIDDEN,
    TWO_REGION_BLOCK,
    WARMUP,
    Z_THRESHOLD,
)
from farcuriosity_lab.exceptions import InvalidArgumentError

if PYDANTIC_VERSION.startswith("2."):
    from pydantic.v1 import BaseModel, Field, root_validator, validator
else:
    from pydantic import BaseModel, Field, root_validator, validator

# toy-grid kinds probing a single start observation
FORGETTING_KINDS = ("toygrid-resetfree", "toygrid-fixed", "toygrid-increasing")

# kind -> (default curiosity, description)
EXPERIMENT_KINDS: Dict[str, tuple] = {
    "toygrid-resetfree": (
        "rnd",
        "Random walk on the toy grid without resets; the start observation is "
        "probed every `probe_interval` steps.",
    ),
    "toygrid-fixed": (
        "rnd",
        "Toy grid with episodes of `episode_length` steps; the start observation "
        "is scored at every episode start.",
    ),
    "toygrid-increasing": (
        "rnd",
        "Toy grid where episode n lasts `increase_factor * n` steps; the start "
        "observation is scored at every episode start.",
    ),
    "toygrid-far": (
        "far",
        "Two-region stream alternating blocks of `block_length` steps, each an "
        "anchor followed by shuffled sweeps of the region; region 0's anchor is "
        "probed every `probe_interval` steps.",
    ),
    "multiroom-decay": (
        "count",
        "PPO with a count-based bonus on MultiRoom, one variant per "
        "`decay_factors` entry.",
    ),
    "multiroom-far": (
        "far",
        "PPO with the fragmentation-and-recall curiosity bonus on MultiRoom.",
    ),
}
CURIOSITY_KINDS = ("rnd", "far", "count")
CRITERIA = ("ratio", "zscore")


class PpoSettings(BaseModel):
    """PPO hyperparameters."""

    lr: float = Field(default=PPO_LR, gt=0, description="Adam learning rate.")
    gamma: float = Field(default=PPO_GAMMA, gt=0, le=1, description="Discount.")
    gae_lambda: float = Field(default=PPO_LAMBDA, ge=0, le=1, description="GAE λ.")
    clip: float = Field(default=PPO_CLIP, gt=0, description="Surrogate clip ε.")
    value_coef: float = Field(
        default=PPO_VALUE_COEF, ge=0, description="Weight of the value loss."
    )
    entropy_coef: float = Field(
        default=PPO_ENTROPY_COEF, ge=0, description="Weight of the entropy bonus."
    )
    epochs: int = Field(
        default=PPO_EPOCHS, ge=1, description="Passes over each rollout."
    )
    minibatches: int = Field(
        default=PPO_MINIBATCHES, ge=1, description="Minibatches per pass."
    )
    rollout_length: int = Field(
        default=PPO_ROLLOUT, ge=1, description="Steps per environment between updates."
    )
    n_envs: int = Field(default=PPO_N_ENVS, ge=1, description="Parallel environments.")
    hidden: int = Field(default=64, ge=1, description="Width of both hidden layers.")


class ExperimentConfig(Block):
    """
    Block describing one experiment of the lab: which environment and
    curiosity module to run, on which seeds, for how many steps, and where to
    write the results.

    Args:
        kind (str): One of `toygrid-resetfree`, `toygrid-fixed`,
            `toygrid-increasing`, `toygrid-far`, `multiroom-decay`, `multiroom-far`.
        seeds (list of int): Independent trials, three by default.
        steps (int, optional): Environment steps per seed; defaults to 200k on the
            toy grid and 500k on MultiRoom.
        curiosity (str, optional): `rnd`, `far` or `count`; defaults per kind.
        out_dir (str): Directory receiving CSVs and manifests.

    Example:
        Load a stored configuration and run it:
        ```python
        from farcuriosity_lab import ExperimentConfig
        from farcuriosity_lab.flows import run_experiment

        config = ExperimentConfig.load("BLOCK_NAME")
        run_experiment(config)
        ```

        Build one from a TOML file with an override:
        ```python
        config = ExperimentConfig.from_file("resetfree.toml").with_overrides(
            steps=20_000
        )
        ```
    """  # noqa E501

    _block_type_name = "FAR Curiosity Experiment"
    _documentation_url = (
        "https://farcuriosity-lab.readthedocs.io/en/latest/blocks/"
    )

    kind: str = Field(
        default="toygrid-resetfree",
        description="Experiment to run.",
        title="Experiment Kind",
    )
    seeds: List[int] = Field(
        default_factory=lambda: list(DEFAULT_SEEDS),
        description="Seeds of the independent trials.",
    )
    steps: Optional[int] = Field(
        default=None, description="Environment steps per seed."
    )
    curiosity: Optional[str] = Field(
        default=None, description="Intrinsic reward module: rnd, far or count."
    )
    rho: float = Field(default=RHO, description="Fragmentation threshold ρ.")
    psi: float = Field(default=PSI, description="Recall similarity threshold ψ.")
    sim_cap: float = Field(
        default=SIM_CAP,
        description="Fragmentation is vetoed when a stored key is this similar.",
    )
    criterion: str = Field(default="ratio", description="ratio or zscore.")
    z_threshold: float = Field(
        default=Z_THRESHOLD, gt=0, description="Threshold of the z-score criterion."
    )
    warmup: int = Field(
        default=WARMUP,
        ge=0,
        description="Surprisal samples before a module may fragment.",
    )
    ltm_capacity: int = Field(
        default=LTM_CAPACITY, ge=1, description="Modules kept in long-term memory."
    )
    refractory: int = Field(
        default=REFRACTORY,
        ge=0,
        description="Steps without structural events after one.",
    )
    recall_enabled: bool = Field(
        default=True, description="Whether stored modules can be recalled."
    )
    rnd_lr: float = Field(
        default=RND_LEARNING_RATE,
        gt=0,
        description="Adam learning rate of the RND predictors.",
    )
    rnd_hidden: Optional[int] = Field(
        default=None,
        ge=1,
        description=(
            "Hidden width of the RND target and predictor; wider on the toy-grid "
            "forgetting kinds."
        ),
    )
    rnd_feature_dim: int = Field(
        default=DEFAULT_FEATURE_DIM,
        ge=1,
        description="Output width of the RND nets, also the recall key width.",
    )
    gamma_decay: float = Field(
        default=1.0, description="Visit-count decay of the count bonus."
    )
    decay_factors: List[float] = Field(
        default_factory=lambda: list(DECAY_FACTORS),
        description="Decay variants run by multiroom-decay.",
    )
    c_int: float = Field(default=INTRINSIC_COEF, description="Intrinsic weight.")
    normalize_by_running_mean: bool = Field(
        default=False,
        description="Divide intrinsic rewards by their running mean.",
    )
    obs_norm: bool = Field(
        default=False, description="Normalize observations before curiosity."
    )
    probe_interval: int = Field(
        default=PROBE_INTERVAL,
        ge=1,
        description="Steps between two probes of the start observation.",
    )
    episode_length: int = Field(
        default=TOY_FIXED_LENGTH, ge=1, description="Episode length of toygrid-fixed."
    )
    increase_factor: int = Field(
        default=TOY_INCREASE_FACTOR,
        ge=1,
        description="Episode n of toygrid-increasing lasts factor * n steps.",
    )
    block_length: int = Field(
        default=TWO_REGION_BLOCK,
        ge=1,
        description="Steps per block of the two-region stream.",
    )
    n_rooms: int = Field(
        default=2, ge=2, le=6, description="Rooms of the MultiRoom map."
    )
    t_max: int = Field(
        default=MULTIROOM_T_MAX, ge=1, description="Step limit of a MultiRoom episode."
    )
    ppo: PpoSettings = Field(default_factory=PpoSettings)
    out_dir: str = Field(default="runs", description="Output directory.")

    @validator("kind")
    def _check_kind(cls, value):
        if value not in EXPERIMENT_KINDS:
            raise ValueError(
                f"Unknown experiment kind {value!r}; "
                f"expected one of {sorted(EXPERIMENT_KINDS)}."
            )
        return value

    @validator("seeds")
    def _check_seeds(cls, value):
        if not value:
            raise ValueError("seeds must not be empty.")
        return value

    @validator("steps", always=True)
    def _default_steps(cls, value, values):
        if value is None:
            kind = values.get("kind", "")
            value = (
                MULTIROOM_DEFAULT_STEPS
                if kind.startswith("multiroom")
                else TOY_DEFAULT_STEPS
            )
        if value <= 0:
            raise ValueError("steps must be positive.")
        return value

    @validator("curiosity", always=True)
    def _default_curiosity(cls, value, values):
        if value is None:
            value = EXPERIMENT_KINDS.get(values.get("kind"), ("rnd",))[0]
        if value not in CURIOSITY_KINDS:
            raise ValueError(f"curiosity must be one of {CURIOSITY_KINDS}.")
        return value

    @validator("rnd_hidden", always=True)
    def _default_rnd_hidden(cls, value, values):
        if value is None:
            forgetting = values.get("kind") in FORGETTING_KINDS
            value = TOY_RND_HIDDEN if forgetting else DEFAULT_HIDDEN
        return value

    @validator("rho")
    def _check_rho(cls, value):
        if value <= 1:
            raise ValueError("rho must be greater than 1.")
        return value

    @validator("psi")
    def _check_psi(cls, value):
        if not 0 < value <= 1:
            raise ValueError("psi must lie in (0, 1].")
        return value

    @validator("sim_cap")
    def _check_sim_cap(cls, value):
        if not 0 <= value < 1:
            raise ValueError("sim_cap must lie in [0, 1).")
        return value

    @validator("criterion")
    def _check_criterion(cls, value):
        if value not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}.")
        return value

    @validator("gamma_decay")
    def _check_gamma_decay(cls, value):
        if not 0 < value <= 1:
            raise ValueError("gamma_decay must lie in (0, 1].")
        return value

    @validator("decay_factors", each_item=True)
    def _check_decay_factors(cls, value):
        if not 0 < value <= 1:
            raise ValueError("decay factors must lie in (0, 1].")
        return value

    @validator("c_int")
    def _check_c_int(cls, value):
        if value < 0:
            raise ValueError("c_int must be non-negative.")
        return value

    @root_validator(skip_on_failure=True)
    def _check_pairing(cls, values):
        if values["kind"].startswith("multiroom") and values["curiosity"] == "rnd":
            raise ValueError("MultiRoom runs use the count or far bonus.")
        return values

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """
        Read a configuration from a TOML or JSON file (chosen by suffix).

        Args:
            path: Path to a `.toml` or `.json` file; PPO settings live in a
                nested `ppo` table.

        Returns:
            The validated configuration.
        """
        path = Path(path)
        text = path.read_text()
        try:
            if path.suffix.lower() == ".json":
                data = json.loads(text)
            else:
                data = toml.loads(text)
        except (json.JSONDecodeError, toml.TomlDecodeError) as exc:
            raise InvalidArgumentError(f"Cannot parse {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidArgumentError(f"{path} does not hold a table.")
        return cls(**data)

    def config_dict(self) -> Dict[str, Any]:
        """Plain field values, suitable for JSON."""
        data = {name: getattr(self, name) for name in self.__fields__}
        data["ppo"] = self.ppo.dict()
        return data

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """
        A revalidated copy with the non-`None` overrides applied. Fields left
        at their kind-dependent defaults are derived again.
        """
        data = {
            name: value
            for name, value in self.config_dict().items()
            if name in self.__fields_set__
        }
        data.update({k: v for k, v in overrides.items() if v is not None})
        return type(self)(**data)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of the configuration."""
        canonical = json.dumps(self.config_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()

    def is_multiroom(self) -> bool:
        return self.kind.startswith("multiroom")

    def get_task_runner(
        self,
        threads: Optional[int] = None,
        cluster_kwargs: Dict = None,
        client_kwargs: Dict = None,
    ) -> BaseTaskRunner:
        """
        Task runner for the seed-level tasks.

        `threads` defaults to the `FARLAB_THREADS` environment variable (1 when
        unset). One thread runs seeds sequentially; more run them on a local
        `prefect_dask.DaskTaskRunner`
        capped at `min(threads, len(seeds))` single-threaded workers.

        Args:
            threads: Seed-level parallelism.
            cluster_kwargs: Additional kwargs for the local Dask cluster.
            client_kwargs: Additional kwargs for the `dask.distributed.Client`.

        Returns:
            A `SequentialTaskRunner` or a `DaskTaskRunner`.

        Example:
            ```python
            from prefect import flow

            runner = ExperimentConfig(seeds=[0, 1, 2, 3]).get_task_runner(threads=4)

            @flow(task_runner=runner)
            def my_flow():
                ...
            ```
        """  # noqa: E501
        if threads is None:
            threads = _threads_from_env()
        if threads < 1:
            raise InvalidArgumentError(f"threads must be positive, got {threads}.")
        if threads == 1:
            return SequentialTaskRunner()

        if cluster_kwargs is None:
            cluster_kwargs = {}
        cluster_kwargs.update(
            dict(n_workers=min(threads, len(self.seeds)), threads_per_worker=1)
        )
        return DaskTaskRunner(
            cluster_kwargs=cluster_kwargs, client_kwargs=client_kwargs
        )


def _threads_from_env() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return int(raw)
    except ValueError as exc:
        raise InvalidArgumentError(
            f"{THREADS_ENV_VAR} must be an integer, got {raw!r}."
        ) from exc
