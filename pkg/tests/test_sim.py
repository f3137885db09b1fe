"""Tabular policy, synthetic tasks, and the training loop."""

import numpy as np
import pytest

from holderpo import (
    DivergenceError,
    DomainError,
    HolderOrder,
    PolicyParams,
    ScheduleSpec,
    TaskSpec,
    TrainConfig,
    default_dense_task,
    default_sparse_task,
    refresh_logprobs,
    sample_group,
    success_probability,
    train,
    trend_config,
)
from holderpo.sim import RHO_DIVERGENCE_LIMIT, _check_divergence, _rollout_rng

from conftest import make_group


class TestPolicyParams:
    def test_uniform_rows(self):
        policy = PolicyParams.uniform(3, 4)
        np.testing.assert_allclose(policy.probs(), 0.25)
        assert policy.param_dim == 12

    def test_rows_normalize(self, rng):
        policy = PolicyParams(rng.normal(size=(5, 7)))
        np.testing.assert_allclose(policy.probs().sum(axis=1), 1.0)

    def test_rejects_nonfinite(self):
        with pytest.raises(DomainError):
            PolicyParams(np.array([[0.0, np.inf]]))

    def test_score_gradients_shape_and_zero_sum(self, rng):
        policy = PolicyParams(rng.normal(size=(4, 6)))
        tokens = np.array([1, 0, 5, 3])
        grads = policy.score_gradients(tokens)
        assert grads.shape == (4, 24)
        # each row is a softmax score vector: entries sum to zero
        np.testing.assert_allclose(grads.sum(axis=1), 0.0, atol=1e-12)

    def test_score_gradients_match_finite_differences(self, rng):
        policy = PolicyParams(rng.normal(size=(2, 3)))
        tokens = np.array([2, 0])
        analytic = policy.score_gradients(tokens)
        h = 1e-6
        for t in range(2):
            flat = policy.logits.ravel()
            fd = np.zeros_like(flat)
            for j in range(flat.size):
                for sign in (1.0, -1.0):
                    bumped = flat.copy()
                    bumped[j] += sign * h
                    lp = PolicyParams(bumped.reshape(2, 3)).token_logprobs(tokens)
                    fd[j] += sign * lp[t]
            fd /= 2 * h
            np.testing.assert_allclose(analytic[t], fd, atol=1e-6)

    def test_mean_entropy_bounds(self, rng):
        policy = PolicyParams(rng.normal(size=(3, 8)))
        assert 0.0 <= policy.mean_entropy() <= np.log(8) + 1e-12
        assert PolicyParams.uniform(3, 8).mean_entropy() == pytest.approx(np.log(8))


class TestTaskSpec:
    def test_sparse_reward(self):
        task = default_sparse_task()
        hit = np.zeros(8, dtype=np.int64)
        hit[3] = 5
        assert task.reward(hit) == 1.0
        assert task.reward(np.zeros(8, dtype=np.int64)) == 0.0

    def test_dense_reward_threshold(self):
        task = TaskSpec(kind="dense", length=4, vocab=3,
                        target_sequence=(0, 1, 2, 0), dense_threshold=1)
        assert task.reward(np.array([0, 1, 2, 0])) == 1.0
        assert task.reward(np.array([0, 1, 2, 1])) == 1.0
        assert task.reward(np.array([0, 1, 0, 1])) == 0.0

    def test_invalid_specs(self):
        with pytest.raises(DomainError):
            TaskSpec(kind="other", length=4, vocab=3)
        with pytest.raises(DomainError):
            TaskSpec(kind="sparse", length=4, vocab=3, key_position=4)
        with pytest.raises(DomainError):
            TaskSpec(kind="dense", length=4, vocab=3, target_sequence=(0, 1))


class TestTrainConfig:
    def test_divisibility_constraints(self):
        with pytest.raises(DomainError):
            TrainConfig(rollouts_per_round=10, group_size=8)
        with pytest.raises(DomainError):
            TrainConfig(rollouts_per_round=64, group_size=8, minibatch_size=3)

    def test_positive_learning_rate(self):
        with pytest.raises(DomainError):
            TrainConfig(learning_rate=0.0)

    def test_regime_names(self):
        with pytest.raises(DomainError):
            TrainConfig(clipping_regime="soft")

    def test_total_updates(self):
        config = TrainConfig(total_rounds=5, updates_per_round=4)
        assert config.total_updates == 20


class TestSampling:
    def test_deterministic_per_substream(self):
        task = default_sparse_task()
        policy = PolicyParams.uniform(8, 16)
        streams = lambda: [_rollout_rng(7, 2, 1, i) for i in range(4)]
        a = sample_group(policy, task, 4, streams())
        b = sample_group(policy, task, 4, streams())
        for ra, rb in zip(a.rollouts, b.rollouts):
            np.testing.assert_array_equal(ra.token_ids, rb.token_ids)

    def test_one_hot_policy_is_deterministic(self):
        task = TaskSpec(kind="sparse", length=4, vocab=5, key_position=1,
                        key_token=2)
        logits = np.full((4, 5), -40.0)
        logits[np.arange(4), [1, 2, 3, 4]] = 40.0
        policy = PolicyParams(logits)
        streams = [_rollout_rng(0, 0, 0, i) for i in range(3)]
        batch = sample_group(policy, task, 3, streams)
        for rollout in batch.rollouts:
            np.testing.assert_array_equal(rollout.token_ids, [1, 2, 3, 4])
        np.testing.assert_array_equal(batch.advantages, np.zeros(3))

    def test_uniform_sparse_hit_rate(self):
        task = default_sparse_task(length=4, vocab=8)
        policy = PolicyParams.uniform(4, 8)
        streams = [_rollout_rng(0, 0, 0, i) for i in range(4000)]
        batch_rewards = [
            sample_group(policy, task, 2, streams[i : i + 2]).rollouts[0].reward
            for i in range(0, 4000, 2)
        ]
        assert np.mean(batch_rewards) == pytest.approx(1.0 / 8.0, abs=0.02)

    def test_refresh_logprobs_updates_ratios(self, rng):
        task = default_sparse_task()
        old = PolicyParams.uniform(8, 16)
        streams = [_rollout_rng(0, 0, 0, i) for i in range(2)]
        batch = sample_group(old, task, 2, streams)
        new = PolicyParams(old.logits + rng.normal(scale=0.2, size=(8, 16)))
        refreshed = refresh_logprobs(batch, new)
        for rollout in refreshed.rollouts:
            np.testing.assert_allclose(
                rollout.new_logprobs, new.token_logprobs(rollout.token_ids)
            )


class TestSuccessProbability:
    def test_sparse_is_key_token_probability(self):
        task = default_sparse_task()
        policy = PolicyParams.uniform(8, 16)
        assert success_probability(policy, task) == pytest.approx(1.0 / 16.0)

    def test_dense_matches_monte_carlo(self, rng):
        task = TaskSpec(kind="dense", length=6, vocab=3,
                        target_sequence=(0, 1, 2, 0, 1, 2), dense_threshold=2)
        policy = PolicyParams(rng.normal(scale=0.7, size=(6, 3)))
        exact = success_probability(policy, task)
        probs = policy.probs()
        cum = probs.cumsum(axis=1)
        draws = rng.random((20000, 6))
        tokens = (cum[None, :, :] < draws[:, :, None]).sum(axis=2)
        hits = [task.reward(row) for row in tokens]
        assert exact == pytest.approx(np.mean(hits), abs=0.01)

    def test_dense_threshold_full_length_is_certain(self):
        task = TaskSpec(kind="dense", length=4, vocab=2,
                        target_sequence=(0, 1, 0, 1), dense_threshold=4)
        assert success_probability(PolicyParams.uniform(4, 2), task) == (
            pytest.approx(1.0)
        )


class TestDivergenceGuard:
    def test_triggers_above_limit(self):
        big = np.log(RHO_DIVERGENCE_LIMIT) + 1.0
        batch = make_group([[big, big], [0.0, 0.0]], [1.0, 0.0])
        with pytest.raises(DivergenceError):
            _check_divergence([batch], HolderOrder(1.0))

    def test_quiet_below_limit(self):
        batch = make_group([[1.0, 1.0], [0.0, 0.0]], [1.0, 0.0])
        _check_divergence([batch], HolderOrder(1.0))


class TestTrain:
    def small_config(self, **overrides):
        base = dict(
            rollouts_per_round=16, group_size=4, minibatch_size=2,
            updates_per_round=2, total_rounds=3, learning_rate=0.5,
            schedule=ScheduleSpec.constant(1.0, 5), seed=0,
        )
        base.update(overrides)
        return TrainConfig(**base)

    def test_emits_one_metric_per_update(self):
        log = train(self.small_config(), default_sparse_task())
        assert len(log.metrics) == 6
        assert [m.step for m in log.metrics] == list(range(6))

    def test_bit_reproducible(self):
        task = default_sparse_task()
        a = train(self.small_config(), task)
        b = train(self.small_config(), task)
        np.testing.assert_array_equal(a.final_policy.logits, b.final_policy.logits)
        assert [m.to_dict() for m in a.metrics] == [m.to_dict() for m in b.metrics]

    def test_seed_changes_trajectory(self):
        task = default_sparse_task()
        a = train(self.small_config(seed=0), task)
        b = train(self.small_config(seed=1), task)
        assert a.final_success != b.final_success

    def test_schedule_drives_p_column(self):
        spec = ScheduleSpec(2.0, -2.0, 5, "linear", "descending")
        log = train(self.small_config(schedule=spec), default_sparse_task())
        ps = [m.p_value for m in log.metrics]
        assert ps[0] == 2.0
        assert ps[-1] == -2.0
        assert np.all(np.diff(ps) <= 0.0)

    def test_short_schedule_holds_final_value(self):
        spec = ScheduleSpec(2.0, 0.0, 2, "linear", "descending")
        log = train(self.small_config(schedule=spec), default_sparse_task())
        assert [m.p_value for m in log.metrics][2:] == [0.0] * 4

    def test_learning_moves_success_up(self):
        task = default_sparse_task()
        config = trend_config(ScheduleSpec.constant(1.0, 71), seed=0)
        log = train(config, task)
        assert log.final_success > 3.0 / 16.0  # from 1/16 at init

    def test_all_regimes_run(self):
        task = default_sparse_task()
        for regime in ("none", "token", "sequence"):
            log = train(self.small_config(clipping_regime=regime), task)
            assert np.all(np.isfinite(log.final_policy.logits))

    def test_initial_policy_respected(self):
        task = default_sparse_task()
        start = PolicyParams(np.full((8, 16), 0.3))
        log = train(self.small_config(learning_rate=1e-9), task, start)
        np.testing.assert_allclose(log.final_policy.logits, 0.3, atol=1e-6)


class TestDefaultTasks:
    def test_sparse_shape(self):
        task = default_sparse_task()
        assert (task.length, task.vocab) == (8, 16)

    def test_dense_is_conjunctive(self):
        task = default_dense_task()
        assert task.kind == "dense"
        assert task.dense_threshold == 1
        assert len(task.target_sequence) == task.length
        # the all-but-one-correct event is reachable from uniform init
        p0 = success_probability(
            PolicyParams.uniform(task.length, task.vocab), task
        )
        assert p0 > 0.01
