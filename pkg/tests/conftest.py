import numpy as np
import pytest
from prefect.testing.utilities import prefect_test_harness

from farcuriosity_lab.blocks import ExperimentConfig


@pytest.fixture(scope="session", autouse=True)
def prefect_db():
    """
    Sets up test harness for temporary DB during test runs.
    """
    with prefect_test_harness():
        yield


@pytest.fixture(autouse=True)
def reset_object_registry():
    """
    Ensures each test has a clean object registry.
    """
    from prefect.context import PrefectObjectRegistry

    with PrefectObjectRegistry():
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_toy_config(tmp_path):
    return ExperimentConfig(
        kind="toygrid-resetfree",
        seeds=[0, 1],
        steps=600,
        warmup=10,
        out_dir=str(tmp_path / "runs"),
    )


@pytest.fixture
def small_far_config(tmp_path):
    return ExperimentConfig(
        kind="toygrid-far",
        seeds=[0, 1],
        steps=800,
        block_length=200,
        warmup=20,
        out_dir=str(tmp_path / "runs"),
    )


@pytest.fixture
def small_multiroom_config(tmp_path):
    return ExperimentConfig(
        kind="multiroom-decay",
        seeds=[0, 1],
        steps=256,
        decay_factors=[0.999, 1.0],
        ppo={"rollout_length": 16, "n_envs": 2, "minibatches": 2, "hidden": 16},
        out_dir=str(tmp_path / "runs"),
    )
