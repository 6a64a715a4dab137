import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from farcuriosity_lab.curiosity import Event, RunningStat, rnd_new
from farcuriosity_lab.exceptions import (
    InvalidArgumentError,
    StateFormatError,
    VersionMismatchError,
)
from farcuriosity_lab.memory import (
    FarCuriosity,
    FragmentEntry,
    LongTermMemory,
    cosine_similarity,
)

OBS_DIM = 16
SLOW = pytest.mark.slow


def small_far(**kwargs):
    settings = dict(obs_dim=OBS_DIM, feature_dim=16, hidden=32, seed=0)
    settings.update(kwargs)
    return FarCuriosity(**settings)


def unit(index, dim=16):
    vec = np.zeros(dim)
    vec[index] = 1.0
    return vec


def params_of(module):
    return [p.copy() for p in module.predictor.params()]


def assert_same_params(first, second):
    assert len(first) == len(second)
    for a, b in zip(first, second):
        assert_array_equal(a, b)


class TestCosineSimilarity:
    def test_cases(self):
        a = np.array([1.0, 2.0, -0.5])
        assert cosine_similarity(a, a) == pytest.approx(1.0)
        assert cosine_similarity(a, -a) == pytest.approx(-1.0)
        assert cosine_similarity([1.0, 0.0], [0.0, 3.0]) == 0.0

    def test_zero_norm(self):
        assert cosine_similarity(np.zeros(3), np.ones(3)) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            cosine_similarity(np.ones(2), np.ones(3))


class TestLongTermMemory:
    def entry(self, key, last_used):
        return FragmentEntry(np.asarray(key, dtype=float), rnd_new(2, 2, 2), last_used)

    def test_evicts_least_recently_used(self):
        ltm = LongTermMemory(capacity=2)
        a = self.entry([1.0, 0.0], 5)
        b = self.entry([0.0, 1.0], 9)
        assert ltm.store(a) is None
        assert ltm.store(b) is None
        evicted = ltm.store(self.entry([1.0, 1.0], 12))
        assert evicted is a
        assert len(ltm) == 2

    def test_ties_evict_earliest_stored(self):
        ltm = LongTermMemory(capacity=2)
        first = self.entry([1.0, 0.0], 3)
        ltm.store(first)
        ltm.store(self.entry([0.0, 1.0], 3))
        assert ltm.store(self.entry([1.0, 1.0], 3)) is first

    @pytest.mark.parametrize("n_steps", [400, pytest.param(100_000, marks=SLOW)])
    def test_random_workload_matches_reference(self, n_steps):
        rng = np.random.default_rng(7)
        capacity = 5
        ltm = LongTermMemory(capacity)
        reference = []
        evictions, expected_evictions = [], []
        for step in range(n_steps):
            if reference and rng.random() < 0.3:
                index = int(rng.integers(len(reference)))
                entry = ltm.remove(index)
                assert entry.module.fragment_id == reference.pop(index)[0]
                entry.last_used = step
                ident = entry.module.fragment_id
            else:
                entry = self.entry(rng.normal(size=2), step)
                entry.module.fragment_id = step
                ident = step
            if len(reference) >= capacity:
                lru = min(range(len(reference)), key=lambda i: reference[i][1])
                expected_evictions.append(reference.pop(lru)[0])
            reference.append((ident, step))
            evicted = ltm.store(entry)
            if evicted is not None:
                evictions.append(evicted.module.fragment_id)
            assert len(ltm) <= capacity
            assert [e.module.fragment_id for e in ltm] == [r[0] for r in reference]
        assert evictions == expected_evictions

    def test_similarities(self):
        ltm = LongTermMemory()
        assert ltm.similarities(np.ones(2)).size == 0
        ltm.store(self.entry([2.0, 0.0], 0))
        ltm.store(self.entry([0.0, 0.0], 1))
        assert ltm.similarities(np.array([3.0, 0.0])).tolist() == [1.0, 0.0]

    def test_bad_capacity_and_index(self):
        with pytest.raises(InvalidArgumentError):
            LongTermMemory(0)
        with pytest.raises(IndexError):
            LongTermMemory().remove(0)


class TestConstruction:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"rho": 1.0},
            {"psi": 0.0},
            {"psi": 1.5},
            {"sim_cap": 1.0},
            {"criterion": "median"},
            {"warmup": -1},
        ],
    )
    def test_invalid_settings(self, kwargs):
        with pytest.raises(InvalidArgumentError):
            small_far(**kwargs)

    def test_fresh_instance(self):
        fc = small_far()
        assert fc.ltm_stats() == (1, [])
        assert fc.n_fragments() == 1


class TestChecks:
    def test_recall_needs_threshold(self):
        fc = small_far()
        assert fc.check_recall(unit(0)) is None
        fc.ltm.store(FragmentEntry(unit(0), rnd_new(OBS_DIM, 16, 32), 0))
        assert fc.check_recall(unit(0)) == 0
        assert fc.check_recall(unit(1)) is None

    def test_recall_picks_highest_similarity(self):
        fc = small_far(psi=0.99)
        feat = unit(0)
        for sim in (0.992, 0.995):
            key = sim * unit(0) + np.sqrt(1 - sim**2) * unit(1)
            fc.ltm.store(FragmentEntry(key, rnd_new(OBS_DIM, 16, 32), 0))
        assert fc.check_recall(feat) == 1

    def prepared(self, sim):
        fc = small_far(rho=10.0, warmup=50)
        fc.active.surprisal_stats = RunningStat(count=60, mean=0.4, ema=0.4)
        key = sim * unit(0) + np.sqrt(1 - sim**2) * unit(1)
        fc.ltm.store(FragmentEntry(key, rnd_new(OBS_DIM, 16, 32), 0))
        return fc

    def test_ratio_above_rho(self):
        assert self.prepared(0.3).check_fragmentation(5.0, unit(0))

    def test_similar_key_skips(self):
        assert not self.prepared(0.9).check_fragmentation(5.0, unit(0))

    def test_ratio_below_rho(self):
        assert not self.prepared(0.3).check_fragmentation(3.0, unit(0))

    def test_warmup_blocks(self):
        fc = self.prepared(0.3)
        fc.active.surprisal_stats.count = 10
        assert not fc.check_fragmentation(5.0, unit(0))

    def test_converged_average_passes(self):
        fc = small_far(warmup=1)
        fc.active.surprisal_stats = RunningStat(count=5, mean=0.0, ema=0.0)
        assert fc.check_fragmentation(1e-6, unit(0))

    def test_zero_warmup_without_samples(self):
        assert small_far(warmup=0).check_fragmentation(0.1, unit(0))

    def test_zscore(self):
        fc = small_far(criterion="zscore", z_threshold=3.0, warmup=2)
        for value in (1.0, 2.0, 3.0):
            fc.active.surprisal_stats.update(value)
        sigma = fc.active.surprisal_stats.std
        assert fc.check_fragmentation(2.0 + 3.5 * sigma, unit(0))
        assert not fc.check_fragmentation(2.0 + 2.5 * sigma, unit(0))


class TestFragmentAndRecall:
    def test_fragment_stores_active_and_logs(self, rng):
        fc = small_far()
        obs = rng.uniform(size=OBS_DIM)
        fc.process_observation(obs)
        old = fc.active
        feat = fc.extractor.feature(obs)
        fc.fragment(feat)
        assert fc.ltm[0].module is old
        assert fc.active is not old
        assert fc.active.target is old.target
        assert_array_equal(fc.active_key, feat)
        assert fc.active.reward(obs) > 0.0
        assert fc.n_fragments() == 2
        assert fc.event_log[-1] == (1, "fragmented", 1)

    def test_fragment_evicts_lru(self, rng):
        fc = small_far(capacity=2)
        fc.active_key = unit(0)
        for step in (5, 9):
            fc.global_step = step
            fc.fragment(unit(step))
        first_stored = fc.ltm[0].module
        fc.global_step = 12
        fc.fragment(unit(12))
        assert len(fc.ltm) == 2
        assert all(entry.module is not first_stored for entry in fc.ltm)
        assert [entry.last_used for entry in fc.ltm] == [9, 12]

    def test_recall_is_an_involution(self):
        fc = small_far()
        fc.active_key = unit(0)
        original = fc.active
        original_params = params_of(original)
        fc.fragment(unit(1))
        newcomer = fc.active
        fc.recall(0)
        assert fc.active is original
        assert_array_equal(fc.active_key, unit(0))
        assert_same_params(params_of(fc.active), original_params)
        assert len(fc.ltm) == 1
        fc.recall(0)
        assert fc.active is newcomer
        assert_array_equal(fc.active_key, unit(1))
        assert fc.n_fragments() == 2
        assert [e.kind for e in fc.event_log] == ["fragmented", "recalled", "recalled"]


class TestProcessObservation:
    def test_first_observation(self, rng):
        fc = small_far()
        reward, event = fc.process_observation(rng.uniform(size=OBS_DIM))
        assert event is Event.NONE
        assert reward > 0.0
        assert fc.global_step == 1
        assert fc.active.surprisal_stats.count == 1

    def test_dim_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            small_far().process_observation(np.zeros(OBS_DIM + 1))

    def test_two_region_fragment_then_recall(self, rng):
        fc = small_far(warmup=600)
        region_a = rng.uniform(size=OBS_DIM)
        region_b = rng.uniform(size=OBS_DIM) + 2.0
        for _ in range(600):
            _, event = fc.process_observation(region_a)
            assert event is Event.NONE
        module_a = fc.active
        params_a = params_of(module_a)
        ratio = module_a.reward(region_b) / module_a.surprisal_stats.ema
        assert ratio > fc.rho

        _, event = fc.process_observation(region_b)
        assert event is Event.FRAGMENTED
        assert fc.n_fragments() == 2
        assert_same_params(params_of(fc.ltm[0].module), params_a)

        _, event = fc.process_observation(region_a)
        assert event is Event.RECALLED
        assert fc.active is module_a
        assert fc.n_fragments() == 2
        assert [e.kind for e in fc.ltm_stats()[1]] == ["fragmented", "recalled"]

    def test_recall_disabled_never_recalls(self, rng):
        fc = small_far(warmup=600, recall_enabled=False)
        region_a = rng.uniform(size=OBS_DIM)
        for _ in range(600):
            fc.process_observation(region_a)
        fc.process_observation(rng.uniform(size=OBS_DIM) + 2.0)
        _, event = fc.process_observation(region_a)
        assert event is not Event.RECALLED

    def test_refractory_suppresses_events(self):
        fc = small_far(refractory=3)
        fc.active_key = unit(0)
        fc.fragment(unit(1))
        fc._cooldown = 3
        fc.active.surprisal_stats = RunningStat(count=100, mean=1e-6, ema=1e-6)
        _, event = fc.process_observation(np.ones(OBS_DIM) * 5.0)
        assert event is Event.NONE
        assert fc._cooldown == 2

    def test_probe_is_pure(self, rng):
        fc = small_far(warmup=5)
        stream = rng.uniform(size=(50, OBS_DIM))
        for obs in stream:
            fc.process_observation(obs)
        before = json.dumps(fc.to_dict())
        probes = [fc.probe_reward(obs) for obs in stream[:10]]
        assert probes == [fc.probe_reward(obs) for obs in stream[:10]]
        assert json.dumps(fc.to_dict()) == before

    def test_probe_uses_recalled_module(self):
        fc = small_far()
        obs = np.linspace(0.0, 1.0, OBS_DIM)
        fc.active_key = fc.extractor.feature(obs)
        stored = fc.active
        fc.fragment(unit(1))
        assert fc.probe_reward(obs) == stored.reward(obs)
        assert fc.probe_reward(obs) != fc.active.reward(obs)

    def test_deterministic_timeline(self):
        def timeline():
            fc = small_far(warmup=20, rho=3.0)
            stream = np.random.default_rng(3).uniform(size=(300, OBS_DIM))
            stream[150:] += 3.0
            for obs in stream:
                fc.process_observation(obs)
            return fc.ltm_stats()

        assert timeline() == timeline()

    @pytest.mark.parametrize("n_steps", [200, pytest.param(100_000, marks=SLOW)])
    def test_capacity_bound_under_random_stream(self, n_steps):
        fc = small_far(warmup=2, rho=1.5, capacity=3, sim_cap=0.999, psi=1.0)
        rng = np.random.default_rng(11)
        for _ in range(n_steps):
            obs = rng.uniform(size=OBS_DIM) * rng.choice([1.0, 10.0, 100.0])
            fc.process_observation(obs)
            assert len(fc.ltm) <= 3
            assert all(entry.module is not fc.active for entry in fc.ltm)

    def test_single_region_monotone_probe(self, rng):
        fc = small_far(recall_enabled=False, warmup=10_000)
        region = rng.uniform(size=OBS_DIM)
        samples = []
        for step in range(1000):
            fc.process_observation(region)
            if step % 100 == 99:
                samples.append(fc.probe_reward(region))
        assert fc.n_fragments() == 1
        for earlier, later in zip(samples, samples[1:]):
            if earlier > 1e-4 * samples[0]:
                assert later <= earlier + 1e-8


class TestSerialization:
    def run_stream(self, fc, stream):
        return [fc.process_observation(obs) for obs in stream]

    def test_round_trip_continues_identically(self):
        rng = np.random.default_rng(5)
        stream = rng.uniform(size=(120, OBS_DIM))
        stream[60:] += 3.0
        fc = small_far(warmup=10, rho=3.0)
        self.run_stream(fc, stream[:80])
        restored = FarCuriosity.from_dict(json.loads(json.dumps(fc.to_dict())))
        assert restored.ltm_stats() == fc.ltm_stats()
        assert self.run_stream(restored, stream[80:]) == self.run_stream(
            fc, stream[80:]
        )
        assert json.dumps(restored.to_dict()) == json.dumps(fc.to_dict())

    def test_fragments_share_restored_target(self):
        fc = small_far()
        fc.active_key = unit(0)
        fc.fragment(unit(1))
        restored = FarCuriosity.from_dict(fc.to_dict())
        assert restored.ltm[0].module.target is restored.active.target
        assert restored.extractor.net is restored.active.target

    def test_version_mismatch(self):
        doc = small_far().to_dict()
        doc["version"] = doc["version"] + 1
        with pytest.raises(VersionMismatchError):
            FarCuriosity.from_dict(doc)

    def test_malformed(self):
        doc = small_far().to_dict()
        del doc["ltm"]
        with pytest.raises(StateFormatError):
            FarCuriosity.from_dict(doc)
