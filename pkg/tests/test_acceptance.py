"""
Desk-scale reproductions of the forgetting experiments. Each takes minutes;
run them with `pytest -m slow`.
"""

import numpy as np
import pytest

from farcuriosity_lab import ExperimentConfig
from farcuriosity_lab.experiments import run_multiroom, run_toy

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)


def seed_summaries(config):
    return [run_toy(config, seed).summary for seed in SEEDS]


def mean_of(summaries, key):
    return float(np.mean([summary[key] for summary in summaries]))


def test_reset_free_walk_forgets_the_start():
    summaries = seed_summaries(ExperimentConfig(kind="toygrid-resetfree"))
    assert mean_of(summaries, "final") >= 2.0 * mean_of(summaries, "early")


def test_fixed_episodes_remember_the_start():
    summaries = seed_summaries(ExperimentConfig(kind="toygrid-fixed"))
    assert mean_of(summaries, "final") <= 0.2 * mean_of(summaries, "early")


def test_increasing_episodes_forget_the_start():
    summaries = seed_summaries(ExperimentConfig(kind="toygrid-increasing"))
    assert mean_of(summaries, "final") >= 2.0 * mean_of(summaries, "early")


def test_fragmentation_and_recall_stabilize_the_probe():
    far_config = ExperimentConfig(kind="toygrid-far")
    rnd = seed_summaries(far_config.with_overrides(curiosity="rnd"))
    far = seed_summaries(far_config)

    assert mean_of(rnd, "final") >= 2.0 * mean_of(rnd, "mid")
    ratio = mean_of(far, "final") / mean_of(far, "mid")
    assert 1 / 1.5 <= ratio <= 1.5
    assert sum(summary["n_fragmented"] for summary in far) >= 1
    assert sum(summary["n_recalled"] for summary in far) >= 1


def test_count_decay_degrades_returns():
    config = ExperimentConfig(kind="multiroom-decay")
    finals = {
        decay: float(
            np.mean(
                [
                    run_multiroom(config, seed, gamma_decay=decay).summary["final"]
                    for seed in SEEDS
                ]
            )
        )
        for decay in (1.0, 0.9995, 0.999)
    }
    assert finals[1.0] >= finals[0.9995] >= finals[0.999]
    assert finals[1.0] >= 0.4
    assert finals[0.999] <= 0.5 * finals[1.0]
