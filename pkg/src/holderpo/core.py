"""Power-mean aggregation of token importance ratios and its derivatives.

All power computations run in log-space with a max shift, so exponents up
to |p| = 40 on ratios spanning [1e-4, 1e4] stay finite.  The p -> 0 limit
(the geometric mean) gets its own branch: below ``zero_threshold`` the
weights are exactly uniform and the mean is exp(mean log r).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Input violates a documented precondition."""


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise DomainError(f"{name} must contain at least one entry")
    return arr


@dataclass(frozen=True)
class RatioSequence:
    """Strictly positive, finite token importance ratios for one rollout."""

    ratios: np.ndarray

    def __post_init__(self):
        arr = _as_vector(self.ratios, "ratios")
        if not np.all(np.isfinite(arr)):
            raise DomainError("ratios must be finite")
        if np.any(arr <= 0.0):
            raise DomainError("ratios must be strictly positive")
        object.__setattr__(self, "ratios", arr)

    def __len__(self) -> int:
        return self.ratios.size

    @property
    def log_ratios(self) -> np.ndarray:
        return np.log(self.ratios)


@dataclass(frozen=True)
class LogRatioSequence:
    """Per-token log-ratios with a validity mask; masked entries carry no weight."""

    log_ratios: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        logs = _as_vector(self.log_ratios, "log_ratios")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != logs.shape:
            raise DomainError("mask must match log_ratios in length")
        if not mask.any():
            raise DomainError("mask must have at least one valid entry")
        if not np.all(np.isfinite(logs[mask])):
            raise DomainError("valid log_ratios must be finite")
        object.__setattr__(self, "log_ratios", logs)
        object.__setattr__(self, "mask", mask)

    def valid_logs(self) -> np.ndarray:
        return self.log_ratios[self.mask]

    def to_ratio_sequence(self) -> RatioSequence:
        return RatioSequence(np.exp(self.valid_logs()))


@dataclass(frozen=True)
class HolderOrder:
    """The aggregation exponent; |p| below zero_threshold routes to the
    geometric branch."""

    p: float
    zero_threshold: float = 1e-6

    def __post_init__(self):
        if not np.isfinite(self.p):
            raise DomainError("p must be finite")
        if self.zero_threshold <= 0.0:
            raise DomainError("zero_threshold must be positive")

    @property
    def is_zero(self) -> bool:
        return abs(self.p) < self.zero_threshold


@dataclass(frozen=True)
class WeightDistribution:
    """A probability vector of per-token gradient weights."""

    weights: np.ndarray

    def __post_init__(self):
        arr = _as_vector(self.weights, "weights")
        if np.any(arr < 0.0):
            raise DomainError("weights must be nonnegative")
        if abs(arr.sum() - 1.0) > 1e-10:
            raise DomainError("weights must sum to 1 within 1e-10")
        object.__setattr__(self, "weights", arr)

    def __len__(self) -> int:
        return self.weights.size


def _holder_mean_from_logs(logs: np.ndarray, order: HolderOrder) -> float:
    """Power mean of exp(logs), evaluated via a max-shifted log-sum-exp."""
    n = logs.size
    if order.is_zero:
        return float(np.exp(logs.mean()))
    p = order.p
    scaled = p * logs
    shift = scaled.max()
    lse = shift + np.log(np.exp(scaled - shift).sum())
    return float(np.exp((lse - np.log(n)) / p))


def holder_mean(ratios: RatioSequence, order: HolderOrder) -> float:
    """The power mean of order p, with the geometric mean as the p -> 0 branch."""
    return _holder_mean_from_logs(ratios.log_ratios, order)


def holder_mean_masked(logs: LogRatioSequence, order: HolderOrder) -> float:
    """Power mean over the valid positions only; masked tokens do not count."""
    return _holder_mean_from_logs(logs.valid_logs(), order)


def gradient_weights(ratios: RatioSequence, order: HolderOrder) -> WeightDistribution:
    """Softmax of p * log r over tokens; exactly uniform on the zero branch."""
    logs = ratios.log_ratios
    n = logs.size
    if order.is_zero:
        return WeightDistribution(np.full(n, 1.0 / n))
    scaled = order.p * logs
    scaled -= scaled.max()
    w = np.exp(scaled)
    return WeightDistribution(w / w.sum())


def weighted_log_mean(ratios: RatioSequence, order: HolderOrder) -> float:
    """Weight-averaged log-ratio, bounded by [min log r, max log r]."""
    w = gradient_weights(ratios, order).weights
    return float(w @ ratios.log_ratios)


def weight_p_derivative(
    ratios: RatioSequence, order: HolderOrder, token_index: int
) -> float:
    """d W_t / d p = W_t (log r_t - mu(p))."""
    n = len(ratios)
    if not 0 <= token_index < n:
        raise DomainError(f"token_index {token_index} out of range for n={n}")
    w = gradient_weights(ratios, order).weights
    logs = ratios.log_ratios
    mu = float(w @ logs)
    return float(w[token_index] * (logs[token_index] - mu))


def mu_p_derivative(ratios: RatioSequence, order: HolderOrder) -> float:
    """d mu / d p: the weighted variance of the log-ratios, always >= 0."""
    w = gradient_weights(ratios, order).weights
    logs = ratios.log_ratios
    mu = float(w @ logs)
    return float(w @ (logs - mu) ** 2)


def shannon_entropy(weights: WeightDistribution) -> float:
    """-sum W ln W with the 0 ln 0 = 0 convention."""
    w = weights.weights
    nz = w[w > 0.0]
    return float(-(nz * np.log(nz)).sum())


def entropy_p_derivative(ratios: RatioSequence, order: HolderOrder) -> float:
    """d H / d p = -p * Var_W(log r); zero at p = 0, negative-signed with p."""
    return -order.p * mu_p_derivative(ratios, order)


def hhi(weights: WeightDistribution) -> float:
    """Herfindahl-Hirschman index sum W^2, in [1/n, 1]."""
    return float(np.sum(weights.weights**2))


def limit_weights(
    ratios: RatioSequence, direction: int, tie_rtol: float = 1e-12
) -> WeightDistribution:
    """The p -> +inf (direction > 0) or p -> -inf (direction < 0) weight limit:
    uniform over the argmax (resp. argmin) set, ties resolved at tie_rtol."""
    if direction == 0:
        raise DomainError("direction must be nonzero")
    r = ratios.ratios
    extremum = r.max() if direction > 0 else r.min()
    on_set = np.isclose(r, extremum, rtol=tie_rtol, atol=0.0)
    w = np.where(on_set, 1.0 / on_set.sum(), 0.0)
    return WeightDistribution(w)
