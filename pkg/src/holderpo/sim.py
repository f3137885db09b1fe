"""Desk-scale training loop: a position-conditioned tabular softmax policy,
synthetic sparse/dense reward tasks, and group-relative updates under the
configured clipping regime.

The policy has an independent logit row per position, so score gradients
are exact and cheap, and gradients at distinct positions live in disjoint
parameter blocks.  Sampling uses one counter-derived RNG substream per
rollout, so runs are bit-reproducible regardless of evaluation order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from holderpo.analysis import UpdateMetrics, ratio_envelopes
from holderpo.core import DomainError, HolderOrder
from holderpo.objectives import (
    ClipConfig,
    GroupBatch,
    RolloutRecord,
    grad_estimator_seq_clip,
    grad_estimator_token_clip,
    grad_estimator_unclipped,
    surrogate_seq_clip,
    surrogate_token_clip,
    surrogate_unclipped,
    variance_bound_term,
)
from holderpo.schedule import ScheduleSpec, p_at

RHO_DIVERGENCE_LIMIT = 1e6

CLIPPING_REGIMES = ("none", "token", "sequence")


class DivergenceError(RuntimeError):
    """An aggregated ratio exceeded the divergence guard."""


@dataclass
class PolicyParams:
    """Position-conditioned logit table; row `pos` parameterizes a softmax
    over the vocabulary at that position."""

    logits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.logits, dtype=np.float64)
        if arr.ndim != 2:
            raise DomainError("logits must be a positions x vocab matrix")
        if not np.all(np.isfinite(arr)):
            raise DomainError("logits must be finite")
        self.logits = arr

    @staticmethod
    def uniform(length: int, vocab: int) -> "PolicyParams":
        return PolicyParams(np.zeros((length, vocab)))

    @property
    def length(self) -> int:
        return self.logits.shape[0]

    @property
    def vocab(self) -> int:
        return self.logits.shape[1]

    @property
    def param_dim(self) -> int:
        return self.logits.size

    def log_probs(self) -> np.ndarray:
        z = self.logits
        shifted = z - z.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())

    def token_logprobs(self, token_ids: np.ndarray) -> np.ndarray:
        lp = self.log_probs()
        return lp[np.arange(self.length), token_ids]

    def score_gradients(self, token_ids: np.ndarray) -> np.ndarray:
        """Row t is d log pi(token_ids[t] | pos t) / d logits, flattened."""
        probs = self.probs()
        grads = np.zeros((self.length, self.length, self.vocab))
        for t in range(self.length):
            grads[t, t, :] = -probs[t]
            grads[t, t, token_ids[t]] += 1.0
        return grads.reshape(self.length, self.param_dim)

    def mean_entropy(self) -> float:
        lp = self.log_probs()
        return float(-(np.exp(lp) * lp).sum(axis=1).mean())

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.logits.copy())


@dataclass(frozen=True)
class TaskSpec:
    """Binary-reward synthetic task: sparse (one pivotal position) or dense
    (Hamming distance to a target sequence at most `dense_threshold`)."""

    kind: str
    length: int
    vocab: int
    key_position: int = 0
    key_token: int = 0
    target_sequence: tuple = ()
    dense_threshold: int = 0

    def __post_init__(self):
        if self.kind not in ("sparse", "dense"):
            raise DomainError("task kind must be 'sparse' or 'dense'")
        if self.length < 1 or self.vocab < 2:
            raise DomainError("task needs length >= 1 and vocab >= 2")
        if self.kind == "sparse":
            if not (0 <= self.key_position < self.length):
                raise DomainError("key_position out of range")
            if not (0 <= self.key_token < self.vocab):
                raise DomainError("key_token out of range")
        else:
            if len(self.target_sequence) != self.length:
                raise DomainError("target_sequence must have one token per position")
            if any(not 0 <= t < self.vocab for t in self.target_sequence):
                raise DomainError("target tokens out of range")
            if not 0 <= self.dense_threshold <= self.length:
                raise DomainError("dense_threshold out of range")

    def reward(self, token_ids: np.ndarray) -> float:
        if self.kind == "sparse":
            return float(token_ids[self.key_position] == self.key_token)
        mismatches = int(np.sum(token_ids != np.asarray(self.target_sequence)))
        return float(mismatches <= self.dense_threshold)


@dataclass(frozen=True)
class TrainConfig:
    group_size: int = 8
    rollouts_per_round: int = 256
    minibatch_size: int = 8  # groups per update
    updates_per_round: int = 4
    learning_rate: float = 0.05
    clip_epsilon: float = 0.2
    schedule: ScheduleSpec = field(
        default_factory=lambda: ScheduleSpec.constant(1.0, 1)
    )
    clipping_regime: str = "sequence"
    seed: int = 0
    total_rounds: int = 60

    def __post_init__(self):
        if self.group_size < 2:
            raise DomainError("group_size must be >= 2")
        if self.rollouts_per_round % self.group_size != 0:
            raise DomainError("rollouts_per_round must be divisible by group_size")
        if self.minibatch_size < 1:
            raise DomainError("minibatch_size must be >= 1")
        if self.num_groups % self.minibatch_size != 0:
            raise DomainError(
                "groups per round must be divisible by minibatch_size"
            )
        if self.learning_rate <= 0.0:
            raise DomainError("learning_rate must be positive")
        if self.clipping_regime not in CLIPPING_REGIMES:
            raise DomainError(f"clipping_regime must be one of {CLIPPING_REGIMES}")
        if self.updates_per_round < 1 or self.total_rounds < 1:
            raise DomainError("updates_per_round and total_rounds must be >= 1")

    @property
    def num_groups(self) -> int:
        return self.rollouts_per_round // self.group_size

    @property
    def total_updates(self) -> int:
        return self.total_rounds * self.updates_per_round


@dataclass
class RunLog:
    metrics: list[UpdateMetrics]
    final_policy: PolicyParams
    final_success: float
    wall_time: float


def _rollout_rng(seed: int, round_idx: int, group_idx: int, rollout_idx: int):
    ss = np.random.SeedSequence(
        entropy=seed, spawn_key=(round_idx, group_idx, rollout_idx)
    )
    return np.random.default_rng(ss)


def sample_group(
    policy_old: PolicyParams,
    task: TaskSpec,
    group_size: int,
    rng_streams,
) -> GroupBatch:
    """Sample G rollouts position-wise from the old policy; rewards and
    group-normalized advantages are filled in.  `rng_streams` is one RNG
    per rollout."""
    probs = policy_old.probs()
    cum = np.cumsum(probs, axis=1)
    rollouts = []
    for i in range(group_size):
        rng = rng_streams[i]
        u = rng.random(task.length)
        token_ids = np.minimum(
            (cum < u[:, None]).sum(axis=1), task.vocab - 1
        ).astype(np.int64)
        old_lp = policy_old.token_logprobs(token_ids)
        rollouts.append(
            RolloutRecord(
                token_ids=token_ids,
                old_logprobs=old_lp,
                new_logprobs=old_lp.copy(),
                reward=task.reward(token_ids),
                mask=np.ones(task.length, dtype=bool),
            )
        )
    return GroupBatch(rollouts)


def refresh_logprobs(batch: GroupBatch, policy_new: PolicyParams) -> GroupBatch:
    """Recompute new_logprobs under the current policy."""
    rollouts = [
        replace(r, new_logprobs=policy_new.token_logprobs(r.token_ids))
        for r in batch.rollouts
    ]
    return GroupBatch(rollouts, advantages=batch.advantages)


def success_probability(policy: PolicyParams, task: TaskSpec) -> float:
    """Exact expected reward under the policy.

    Sparse: the key token's probability at the key position.  Dense: the
    Poisson-binomial tail P(#mismatches <= k) over independent positions.
    """
    probs = policy.probs()
    if task.kind == "sparse":
        return float(probs[task.key_position, task.key_token])
    match_p = np.array(
        [probs[pos, tok] for pos, tok in enumerate(task.target_sequence)]
    )
    # DP over the mismatch count
    dist = np.zeros(task.length + 1)
    dist[0] = 1.0
    for q in 1.0 - match_p:
        dist[1:] = dist[1:] * (1.0 - q) + dist[:-1] * q
        dist[0] *= 1.0 - q
    return float(dist[: task.dense_threshold + 1].sum())


def _check_divergence(minibatch, order: HolderOrder) -> None:
    from holderpo.objectives import _rho

    log_limit = np.log(RHO_DIVERGENCE_LIMIT)
    for batch in minibatch:
        for rollout in batch.rollouts:
            logs = rollout.log_ratio_sequence().valid_logs()
            extreme = float(np.abs(logs).max())
            if extreme > log_limit:
                raise DivergenceError(
                    f"token ratio exp({extreme:.1f}) left the divergence band "
                    f"[1/{RHO_DIVERGENCE_LIMIT:.0e}, {RHO_DIVERGENCE_LIMIT:.0e}]"
                )
            rho = _rho(rollout, order)
            if rho > RHO_DIVERGENCE_LIMIT:
                raise DivergenceError(
                    f"aggregated ratio {rho:.3e} exceeded {RHO_DIVERGENCE_LIMIT:.0e}"
                )


def train(
    config: TrainConfig,
    task: TaskSpec,
    initial_policy: PolicyParams | None = None,
) -> RunLog:
    """Run the full loop: per round, snapshot the old policy, sample the
    round's rollouts, then apply gradient-ascent updates on minibatches of
    groups with p taken from the schedule at the global update index."""
    start = time.monotonic()
    policy = (
        initial_policy.copy()
        if initial_policy is not None
        else PolicyParams.uniform(task.length, task.vocab)
    )
    clip = ClipConfig(config.clip_epsilon)
    metrics: list[UpdateMetrics] = []
    global_update = 0
    horizon = config.schedule.total_steps

    for round_idx in range(config.total_rounds):
        policy_old = policy.copy()
        groups = [
            sample_group(
                policy_old,
                task,
                config.group_size,
                [
                    _rollout_rng(config.seed, round_idx, g, i)
                    for i in range(config.group_size)
                ],
            )
            for g in range(config.num_groups)
        ]
        round_reward = float(
            np.mean([r.reward for b in groups for r in b.rollouts])
        )

        for update_idx in range(config.updates_per_round):
            p = p_at(config.schedule, min(global_update, horizon))
            order = HolderOrder(p)
            lo = (update_idx * config.minibatch_size) % config.num_groups
            minibatch = [
                refresh_logprobs(groups[(lo + j) % config.num_groups], policy)
                for j in range(config.minibatch_size)
            ]
            _check_divergence(minibatch, order)

            if config.clipping_regime == "none":
                estimate = grad_estimator_unclipped(minibatch, policy, order)
                objective = float(
                    np.mean([surrogate_unclipped(b, order) for b in minibatch])
                )
            elif config.clipping_regime == "token":
                estimate = grad_estimator_token_clip(minibatch, policy, order, clip)
                objective = float(
                    np.mean([surrogate_token_clip(b, order, clip) for b in minibatch])
                )
            else:
                estimate = grad_estimator_seq_clip(minibatch, policy, order, clip)
                objective = float(
                    np.mean([surrogate_seq_clip(b, order, clip) for b in minibatch])
                )

            env_max = max(ratio_envelopes(b)[0] for b in minibatch)
            env_min = min(ratio_envelopes(b)[1] for b in minibatch)
            delta = config.learning_rate * estimate.vector
            policy = PolicyParams(
                policy.logits + delta.reshape(policy.logits.shape)
            )
            metrics.append(
                UpdateMetrics(
                    step=global_update,
                    p_value=p,
                    objective=objective,
                    grad_norm=float(np.linalg.norm(estimate.vector)),
                    policy_entropy=policy.mean_entropy(),
                    log_ratio_max=env_max,
                    log_ratio_min=env_min,
                    clip_fraction=estimate.clip_fraction,
                    mean_reward=round_reward,
                    v_of_p=variance_bound_term(minibatch, order),
                )
            )
            global_update += 1

    return RunLog(
        metrics=metrics,
        final_policy=policy,
        final_success=success_probability(policy, task),
        wall_time=time.monotonic() - start,
    )


def default_sparse_task(length: int = 8, vocab: int = 16) -> TaskSpec:
    """Sparse-signal default: reward hinges on one pivotal token."""
    return TaskSpec(kind="sparse", length=length, vocab=vocab, key_position=3,
                    key_token=5)


def default_dense_task(length: int = 8, vocab: int = 2,
                       threshold: int = 1) -> TaskSpec:
    """Dense-signal default: nearly every position must match the target.

    The small vocabulary keeps the (conjunctive) all-but-one-correct event
    reachable from the uniform initialization, so credit is genuinely
    distributed across positions instead of hinging on a rare token.
    """
    target = tuple(i % vocab for i in range(length))
    return TaskSpec(
        kind="dense",
        length=length,
        vocab=vocab,
        target_sequence=target,
        dense_threshold=threshold,
    )


def trend_config(schedule: ScheduleSpec, seed: int = 0,
                 total_rounds: int = 18) -> TrainConfig:
    """Training configuration for the qualitative sparse-vs-dense trend
    experiments: a small rollout budget and a learning rate high enough
    that the choice of aggregation exponent visibly moves the outcome
    within the round budget."""
    return TrainConfig(
        rollouts_per_round=128,
        minibatch_size=4,
        learning_rate=1.0,
        schedule=schedule,
        seed=seed,
        total_rounds=total_rounds,
    )
