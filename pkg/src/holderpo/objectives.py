"""Advantage estimation and the three objective / gradient-estimator variants:
unclipped, token-level clipped, and sequence-level clipped.

The KL term is deliberately absent.  Gradient estimators take any policy
object exposing ``param_dim`` and ``score_gradients(token_ids) -> (T, d)``
(row t is the score vector of token t); the tabular policy in
:mod:`holderpo.sim` satisfies this.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from holderpo.core import (
    DomainError,
    HolderOrder,
    LogRatioSequence,
    RatioSequence,
    gradient_weights,
    hhi,
    holder_mean,
    holder_mean_masked,
)

DEGENERATE_STD = 1e-8


@dataclass(frozen=True)
class ClipConfig:
    """PPO-style clipping half-width."""

    epsilon: float

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise DomainError("epsilon must lie in (0, 1)")

    @property
    def low(self) -> float:
        return 1.0 - self.epsilon

    @property
    def high(self) -> float:
        return 1.0 + self.epsilon


@dataclass(frozen=True)
class RolloutRecord:
    """One sampled sequence with log-probabilities under both policies."""

    token_ids: np.ndarray
    old_logprobs: np.ndarray
    new_logprobs: np.ndarray
    reward: float
    mask: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.token_ids, dtype=np.int64)
        old = np.asarray(self.old_logprobs, dtype=np.float64)
        new = np.asarray(self.new_logprobs, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if not (ids.shape == old.shape == new.shape == mask.shape):
            raise DomainError("token_ids, logprobs, and mask must share one length")
        if np.any(old[mask] > 0.0) or np.any(new[mask] > 0.0):
            raise DomainError("log-probabilities must be <= 0")
        if not mask.any():
            raise DomainError("rollout must have at least one valid token")
        for name, value in (
            ("token_ids", ids),
            ("old_logprobs", old),
            ("new_logprobs", new),
            ("mask", mask),
        ):
            object.__setattr__(self, name, value)

    def log_ratio_sequence(self) -> LogRatioSequence:
        return LogRatioSequence(self.new_logprobs - self.old_logprobs, self.mask)

    def ratio_sequence(self) -> RatioSequence:
        return self.log_ratio_sequence().to_ratio_sequence()


@dataclass
class GroupBatch:
    """A group of G rollouts sharing one prompt, with normalized advantages."""

    rollouts: list[RolloutRecord]
    advantages: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if len(self.rollouts) < 2:
            raise DomainError("a group needs G >= 2 rollouts")
        if self.advantages is None:
            self.advantages = advantage_estimates(
                np.array([r.reward for r in self.rollouts])
            )
        self.advantages = np.asarray(self.advantages, dtype=np.float64)
        if self.advantages.shape != (len(self.rollouts),):
            raise DomainError("advantages must have one entry per rollout")

    @property
    def group_size(self) -> int:
        return len(self.rollouts)


@dataclass(frozen=True)
class GradientEstimate:
    """A flat gradient over policy parameters plus the clipped share."""

    vector: np.ndarray
    clip_fraction: float

    def __post_init__(self):
        if not 0.0 <= self.clip_fraction <= 1.0:
            raise DomainError("clip_fraction must lie in [0, 1]")
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=np.float64))


def advantage_estimates(rewards) -> np.ndarray:
    """Group-normalized advantages (reward - mean) / population std.

    Degenerate groups (std below 1e-8) yield all-zero advantages: a
    uniform-reward group carries no relative signal.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise DomainError("advantage estimation needs G >= 2 rewards")
    std = r.std()
    if std < DEGENERATE_STD:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def _rho(rollout: RolloutRecord, order: HolderOrder) -> float:
    return holder_mean_masked(rollout.log_ratio_sequence(), order)


def surrogate_unclipped(batch: GroupBatch, order: HolderOrder) -> float:
    """(1/G) sum_i rho_i * A_i."""
    total = 0.0
    for rollout, adv in zip(batch.rollouts, batch.advantages):
        total += _rho(rollout, order) * adv
    return total / batch.group_size


def surrogate_seq_clip(batch: GroupBatch, order: HolderOrder, clip: ClipConfig) -> float:
    """Pessimistic sequence-level objective min(rho A, clip(rho) A)."""
    total = 0.0
    for rollout, adv in zip(batch.rollouts, batch.advantages):
        rho = _rho(rollout, order)
        clipped = min(max(rho, clip.low), clip.high)
        total += min(rho * adv, clipped * adv)
    return total / batch.group_size


def _clipped_mean(
    rollout: RolloutRecord, order: HolderOrder, clip: ClipConfig, positive_adv: bool
) -> float:
    """C (min with the clip band, positive advantage) or D (max, negative)."""
    ratios = np.exp(rollout.log_ratio_sequence().valid_logs())
    if positive_adv:
        adjusted = np.minimum(ratios, np.clip(ratios, clip.low, clip.high))
    else:
        adjusted = np.maximum(ratios, np.clip(ratios, clip.low, clip.high))
    return holder_mean(RatioSequence(adjusted), order)


def surrogate_token_clip(
    batch: GroupBatch, order: HolderOrder, clip: ClipConfig
) -> float:
    """Token-level clipped objective: power means of per-token clipped ratios."""
    total = 0.0
    for rollout, adv in zip(batch.rollouts, batch.advantages):
        if adv == 0.0:
            continue
        total += _clipped_mean(rollout, order, clip, adv > 0.0) * adv
    return total / batch.group_size


def loss_holder_po(
    logs: LogRatioSequence, advantage: float, order: HolderOrder, clip: ClipConfig
) -> float:
    """Per-sequence loss to minimize: max(-A rho, -A clip(rho))."""
    rho = holder_mean_masked(logs, order)
    clipped = min(max(rho, clip.low), clip.high)
    return max(-advantage * rho, -advantage * clipped)


def grad_rho(
    ratios: RatioSequence, per_token_score_grads: np.ndarray, order: HolderOrder
) -> np.ndarray:
    """Gradient of the aggregated ratio: rho * sum_t W_t g_t."""
    grads = np.asarray(per_token_score_grads, dtype=np.float64)
    if grads.ndim != 2 or grads.shape[0] != len(ratios):
        raise DomainError("score gradient matrix must be n x d")
    rho = holder_mean(ratios, order)
    w = gradient_weights(ratios, order).weights
    result = rho * (w @ grads)
    if __debug__ and not order.is_zero:
        # The r^p form rho^{1-p}/n sum r^p g must agree; skipped when the raw
        # powers overflow float64 (the softmax form above is the stable one).
        with np.errstate(over="ignore"):
            powers = ratios.ratios**order.p
            alt_scale = rho ** (1.0 - order.p) / len(ratios)
        if np.all(np.isfinite(powers)) and np.isfinite(alt_scale):
            alt = alt_scale * (powers @ grads)
            scale = max(np.abs(result).max(), np.abs(alt).max(), 1.0)
            assert np.abs(result - alt).max() <= 1e-10 * scale
    return result


def _masked_score_grads(policy, rollout: RolloutRecord) -> np.ndarray:
    grads = policy.score_gradients(rollout.token_ids)
    return grads[rollout.mask]


def _require_groups(minibatch: Sequence[GroupBatch]) -> None:
    if len(minibatch) == 0:
        raise DomainError("minibatch must contain at least one group")


def grad_estimator_unclipped(
    minibatch: Sequence[GroupBatch], policy, order: HolderOrder
) -> GradientEstimate:
    """Minibatch average of per-group averages of A_i * grad rho_i."""
    _require_groups(minibatch)
    total = np.zeros(policy.param_dim)
    for batch in minibatch:
        group = np.zeros(policy.param_dim)
        for rollout, adv in zip(batch.rollouts, batch.advantages):
            if adv == 0.0:
                continue
            grads = _masked_score_grads(policy, rollout)
            group += adv * grad_rho(rollout.ratio_sequence(), grads, order)
        total += group / batch.group_size
    return GradientEstimate(total / len(minibatch), clip_fraction=0.0)


def grad_estimator_seq_clip(
    minibatch: Sequence[GroupBatch], policy, order: HolderOrder, clip: ClipConfig
) -> GradientEstimate:
    """Unclipped per-sequence terms gated by the sequence indicator: zero when
    the aggregated ratio has already left the clip band in the favored
    direction."""
    _require_groups(minibatch)
    total = np.zeros(policy.param_dim)
    n_seqs = 0
    n_zeroed = 0
    for batch in minibatch:
        group = np.zeros(policy.param_dim)
        for rollout, adv in zip(batch.rollouts, batch.advantages):
            n_seqs += 1
            rho = _rho(rollout, order)
            if (adv > 0.0 and rho > clip.high) or (adv < 0.0 and rho < clip.low):
                n_zeroed += 1
                continue
            if adv == 0.0:
                continue
            grads = _masked_score_grads(policy, rollout)
            group += adv * grad_rho(rollout.ratio_sequence(), grads, order)
        total += group / batch.group_size
    return GradientEstimate(total / len(minibatch), clip_fraction=n_zeroed / n_seqs)


def grad_estimator_token_clip(
    minibatch: Sequence[GroupBatch], policy, order: HolderOrder, clip: ClipConfig
) -> GradientEstimate:
    """Per-token indicators zero out tokens clipped against the advantage
    direction; the outer factor uses the clipped power mean, not rho."""
    _require_groups(minibatch)
    total = np.zeros(policy.param_dim)
    n_tokens = 0
    n_zeroed = 0
    for batch in minibatch:
        group = np.zeros(policy.param_dim)
        for rollout, adv in zip(batch.rollouts, batch.advantages):
            logs = rollout.log_ratio_sequence().valid_logs()
            ratios = np.exp(logs)
            n_tokens += ratios.size
            if adv > 0.0:
                indicator = ratios <= clip.high
            elif adv < 0.0:
                indicator = ratios >= clip.low
            else:
                continue
            n_zeroed += int(ratios.size - indicator.sum())
            h = _clipped_mean(rollout, order, clip, adv > 0.0)
            grads = _masked_score_grads(policy, rollout)
            n = ratios.size
            if order.is_zero:
                per_token = np.where(indicator, h / n, 0.0)
            else:
                # h^{1-p}/n * r^p in log-space to survive large |p|
                log_terms = (1.0 - order.p) * np.log(h) - np.log(n) + order.p * logs
                per_token = np.where(indicator, np.exp(log_terms), 0.0)
            group += adv * (per_token @ grads)
        total += group / batch.group_size
    frac = n_zeroed / n_tokens if n_tokens else 0.0
    return GradientEstimate(total / len(minibatch), clip_fraction=frac)


def variance_bound_term(batches: Sequence[GroupBatch], order: HolderOrder) -> float:
    """Empirical mean of A^2 rho^2 over every rollout in the sample."""
    if len(batches) == 0:
        raise DomainError("sample must contain at least one group")
    values = []
    for batch in batches:
        for rollout, adv in zip(batch.rollouts, batch.advantages):
            values.append(adv**2 * _rho(rollout, order) ** 2)
    return float(np.mean(values))


def second_moment_orthogonal(
    advantage: float,
    grad_norm_bound: float,
    ratios: RatioSequence,
    order: HolderOrder,
) -> float:
    """Second moment under exact token-gradient orthogonality:
    A^2 M^2 rho^2 * HHI(W)."""
    if grad_norm_bound <= 0.0:
        raise DomainError("grad_norm_bound must be positive")
    rho = holder_mean(ratios, order)
    concentration = hhi(gradient_weights(ratios, order))
    return advantage**2 * grad_norm_bound**2 * rho**2 * concentration
