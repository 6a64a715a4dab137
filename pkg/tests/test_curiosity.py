from collections import Counter

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from farcuriosity_lab.constants import DEFAULT_HIDDEN, TOY_RND_HIDDEN
from farcuriosity_lab.curiosity import (
    CountCuriosity,
    Event,
    FeatureExtractor,
    ObservationNormalizer,
    RndCuriosity,
    RndModule,
    RunningStat,
    VisitCounter,
    normalize_intrinsic,
    observation_key,
    rnd_new,
)
from farcuriosity_lab.exceptions import InvalidArgumentError, StateFormatError
from farcuriosity_lab.memory import cosine_similarity
from farcuriosity_lab.nnkit import dense_init, forward


class TestRunningStat:
    def test_welford_matches_numpy(self, rng):
        values = rng.normal(3.0, 2.0, size=500)
        stat = RunningStat()
        for v in values:
            stat.update(v)
        assert stat.count == 500
        assert stat.mean == pytest.approx(values.mean())
        assert stat.variance == pytest.approx(values.var())
        assert stat.variance >= 0.0

    def test_ema_starts_at_first_sample(self):
        stat = RunningStat()
        stat.update(4.0)
        assert stat.ema == 4.0
        stat.update(0.0)
        assert stat.ema == pytest.approx(0.99 * 4.0)

    def test_merge_is_order_independent(self, rng):
        values = rng.uniform(size=300)
        left, right, whole = RunningStat(), RunningStat(), RunningStat()
        for v in values[:120]:
            left.update(v)
        for v in values[120:]:
            right.update(v)
        for v in values:
            whole.update(v)
        for merged in (left.merge(right), right.merge(left)):
            assert merged.count == whole.count
            assert merged.mean == pytest.approx(whole.mean)
            assert merged.variance == pytest.approx(whole.variance)

    def test_merge_empty(self):
        assert RunningStat().merge(RunningStat()).count == 0

    def test_dict_round_trip(self):
        stat = RunningStat()
        for v in (1.0, 5.0, 2.5):
            stat.update(v)
        assert RunningStat.from_dict(stat.to_dict()) == stat


class TestNormalizeIntrinsic:
    def test_first_sample(self):
        assert normalize_intrinsic(RunningStat(), 0.37) == 1.0

    def test_mean_excludes_current_sample(self):
        stats = RunningStat()
        results = [normalize_intrinsic(stats, r) for r in (1.0, 2.0, 3.0)]
        assert results == [1.0, 2.0, pytest.approx(2.0)]

    def test_constant_stream(self):
        stats = RunningStat()
        for _ in range(100):
            value = normalize_intrinsic(stats, 0.25)
        assert value == pytest.approx(1.0)

    def test_division_guard(self):
        stats = RunningStat()
        assert normalize_intrinsic(stats, 0.0) == 0.0
        assert normalize_intrinsic(stats, 0.5) == 0.5


class TestRnd:
    def test_shared_target_aliases(self, rng):
        extractor = FeatureExtractor(dense_init([6, 8, 4], seed=0))
        first = rnd_new(6, 4, 8, seed=1, shared_target=extractor)
        second = rnd_new(6, 4, 8, seed=2, shared_target=extractor)
        assert first.target is second.target
        obs = rng.uniform(size=6)
        assert_array_equal(forward(first.target, obs), forward(second.target, obs))
        assert first.reward(obs) != second.reward(obs)

    def test_shared_target_mismatch(self):
        extractor = FeatureExtractor(dense_init([6, 8, 4], seed=0))
        with pytest.raises(InvalidArgumentError):
            rnd_new(5, 4, 8, seed=1, shared_target=extractor)

    @pytest.mark.parametrize("dims", [(0, 4, 8), (3, 0, 8), (3, 4, 0)])
    def test_bad_dims(self, dims):
        with pytest.raises(InvalidArgumentError):
            rnd_new(*dims, seed=0)

    def test_copied_predictor_scores_zero(self, rng):
        module = rnd_new(5, 3, 7, seed=0)
        module.predictor = module.target.copy()
        assert module.reward(rng.uniform(size=5)) == 0.0

    def test_reward_is_positive_and_pure(self, rng):
        module = rnd_new(5, 3, 7, seed=0)
        obs = rng.uniform(size=5)
        before = [p.copy() for p in module.predictor.params()]
        first = module.reward(obs)
        assert first > 0.0
        assert module.reward(obs) == first
        assert module.surprisal_stats.count == 0
        for a, b in zip(before, module.predictor.params()):
            assert_array_equal(a, b)

    def test_record_updates_stats(self, rng):
        module = rnd_new(5, 3, 7, seed=0)
        module.reward(rng.uniform(size=5), record=True)
        assert module.surprisal_stats.count == 1

    def test_dim_mismatch(self):
        module = rnd_new(5, 3, 7, seed=0)
        with pytest.raises(InvalidArgumentError):
            module.reward(np.zeros(4))

    def test_empty_batch(self):
        module = rnd_new(5, 3, 7, seed=0)
        with pytest.raises(InvalidArgumentError):
            module.train(np.zeros((0, 5)))

    @pytest.mark.parametrize("hidden", [DEFAULT_HIDDEN, TOY_RND_HIDDEN])
    def test_other_observations_erode_a_fitted_one(self, hidden):
        rng = np.random.default_rng(2024)
        module = rnd_new(32, hidden=hidden, seed=5)
        start = rng.uniform(size=32)
        for _ in range(5000):
            module.train(start)
        fitted = module.reward(start)
        others = rng.uniform(size=(50_000, 32))
        for obs in others:
            module.train(obs)
        assert module.reward(start) > 2.0 * fitted
        assert module.reward(start) > 1e-4

    def test_training_learns_only_the_trained_observation(self, rng):
        module = rnd_new(8, 8, 32, seed=3, lr=1e-3)
        seen = rng.uniform(size=8)
        unseen = rng.uniform(size=8) + 2.0
        target_before = forward(module.target, seen).copy()
        initial = module.reward(seen)
        samples = []
        for step in range(5000):
            module.train(seen)
            if step % 250 == 249:
                samples.append(module.reward(seen))
        assert_array_equal(forward(module.target, seen), target_before)
        assert samples[-1] < 0.01 * initial
        assert module.reward(unseen) > 10 * samples[-1]
        for earlier, later in zip(samples, samples[1:]):
            if earlier > 1e-4 * initial:
                assert later <= earlier + 1e-8

    def test_training_loss_is_pre_step(self, rng):
        module = rnd_new(4, 3, 5, seed=0)
        obs = rng.uniform(size=4)
        expected = module.reward(obs)
        assert module.train(obs) == pytest.approx(expected)

    def test_dict_round_trip(self, rng):
        module = rnd_new(4, 3, 5, seed=0)
        module.train(rng.uniform(size=(3, 4)))
        module.reward(np.ones(4), record=True)
        restored = RndModule.from_dict(module.to_dict())
        obs = rng.uniform(size=4)
        assert restored.reward(obs) == module.reward(obs)
        assert restored.surprisal_stats == module.surprisal_stats

    def test_missing_target(self):
        doc = rnd_new(4, 3, 5, seed=0).to_dict(include_target=False)
        with pytest.raises(StateFormatError):
            RndModule.from_dict(doc)


class TestFeatureExtractor:
    def test_deterministic(self, rng):
        extractor = FeatureExtractor(dense_init([6, 8, 4], seed=0))
        obs = rng.uniform(size=6)
        first = extractor.feature(obs)
        assert_array_equal(first, extractor.feature(obs))
        assert first.shape == (extractor.dim,) == (4,)
        assert cosine_similarity(first, first) == pytest.approx(1.0)

    def test_dim_mismatch(self):
        extractor = FeatureExtractor(dense_init([6, 4], seed=0))
        with pytest.raises(InvalidArgumentError):
            extractor.feature(np.zeros(3))


class TestObservationNormalizer:
    def test_standardizes_and_clips(self, rng):
        norm = ObservationNormalizer(dim=3)
        for obs in rng.normal(10.0, 2.0, size=(400, 3)):
            norm.update(obs)
        out = norm.normalize(np.array([10.0, 1e6, -1e6]), update=False)
        assert abs(out[0]) < 0.5
        assert_array_equal(out[1:], [5.0, -5.0])

    def test_no_update_keeps_state(self):
        norm = ObservationNormalizer(dim=2)
        norm.normalize(np.ones(2), update=False)
        assert norm.count == 0


class TestVisitCounter:
    def test_first_and_fourth_visit(self):
        counter = VisitCounter()
        obs = np.array([[1, 2], [3, 4]], dtype=np.uint8)
        assert counter.count_reward(obs) == 1.0
        counter.count_reward(obs)
        counter.count_reward(obs)
        assert counter.count_reward(obs) == 0.5

    def test_decay_arithmetic(self):
        obs = np.array([0.5, 0.25])
        counter = VisitCounter.from_dict(
            {"gamma_decay": 0.9, "counts": {observation_key(obs): 10.0}}
        )
        counter.decay_step(obs)
        assert counter.count(obs) == pytest.approx(10.0)
        counter.decay_step(None)
        assert counter.count(obs) == pytest.approx(9.0)

    def test_brute_force_recount(self, rng):
        counter = VisitCounter(1.0)
        cells = rng.integers(0, 25, size=10_000)
        rewards = []
        for cell in cells:
            rewards.append(counter.count_reward(np.array([cell], dtype=np.int64)))
        recount = Counter(int(c) for c in cells)
        assert len(counter) == len(recount)
        for cell, n in recount.items():
            assert counter.count(np.array([cell], dtype=np.int64)) == n
        assert rewards[-1] == pytest.approx(
            1.0 / np.sqrt(Counter(int(c) for c in cells)[int(cells[-1])])
        )

    def test_decay_replay(self, rng):
        counter = VisitCounter(0.999)
        cells = rng.integers(0, 10, size=1000)
        expected = {}
        for cell in cells:
            for key in expected:
                expected[key] *= 0.999
            expected[int(cell)] = expected.get(int(cell), 0.0) + 1.0
            counter.decay_step(np.array([cell]))
        for cell, n in expected.items():
            assert abs(counter.count(np.array([cell])) - n) < 1e-9

    @pytest.mark.parametrize("gamma", [0.0, 1.5, -0.2])
    def test_invalid_decay(self, gamma):
        with pytest.raises(InvalidArgumentError):
            VisitCounter(gamma)

    def test_keys_are_stable(self):
        grid = np.arange(12, dtype=np.int32).reshape(3, 4)
        assert observation_key(grid) == observation_key(grid.astype(np.uint8))
        assert observation_key(np.array([0.5, 1.0])) == observation_key(
            np.array([0.5, 1.0])
        )
        assert observation_key(np.array([0.5, 1.0])) != observation_key(
            np.array([1.0, 0.5])
        )

    def test_large_codes_do_not_collide(self):
        assert observation_key(np.array([0, 1])) != observation_key(
            np.array([256, 257])
        )
        assert observation_key(np.array([-1])) != observation_key(np.array([255]))
        counter = VisitCounter()
        counter.count_reward(np.array([300, 7]))
        assert counter.count(np.array([44, 7])) == 0.0
        assert counter.count(np.array([300, 7])) == 1.0

    def test_peek_does_not_count(self):
        counter = VisitCounter()
        obs = np.array([1])
        assert counter.peek_reward(obs) == 1.0
        assert len(counter) == 0


class TestSources:
    def test_rnd_curiosity_trains_on_observe(self, rng):
        source = RndCuriosity(rnd_new(4, 3, 8, seed=0, lr=1e-2))
        obs = rng.uniform(size=4)
        first, event = source.observe(obs)
        assert event is Event.NONE
        assert source.probe(obs) < first
        assert source.module.surprisal_stats.count == 1
        assert source.n_fragments() == 1

    def test_count_curiosity(self):
        source = CountCuriosity(VisitCounter())
        obs = np.array([3, 1])
        assert source.probe(obs) == 1.0
        assert source.observe(obs) == (1.0, Event.NONE)
        source.observe(obs)
        assert source.probe(obs) == pytest.approx(1 / np.sqrt(2))
        assert_allclose(source.counter.count(obs), 2.0)
