"""Diagnostics over batches and run logs: log-ratio envelopes, weight
entropy/concentration profiles, and the variance-bound curve."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from holderpo.core import (
    DomainError,
    HolderOrder,
    RatioSequence,
    gradient_weights,
    hhi,
    shannon_entropy,
)
from holderpo.objectives import GroupBatch, variance_bound_term


@dataclass(frozen=True)
class UpdateMetrics:
    """Per-update telemetry emitted by the training loop."""

    step: int
    p_value: float
    objective: float
    grad_norm: float
    policy_entropy: float
    log_ratio_max: float
    log_ratio_min: float
    clip_fraction: float
    mean_reward: float
    v_of_p: float

    def __post_init__(self):
        if self.log_ratio_min > self.log_ratio_max:
            raise DomainError("log_ratio_min must not exceed log_ratio_max")

    def to_dict(self) -> dict:
        return asdict(self)


def ratio_envelopes(batch: GroupBatch) -> tuple[float, float]:
    """(max, min) of log r over all valid tokens in the batch."""
    logs = [r.log_ratio_sequence().valid_logs() for r in batch.rollouts]
    if not logs:
        raise DomainError("batch has no rollouts")
    stacked = np.concatenate(logs)
    return float(stacked.max()), float(stacked.min())


def weight_profile(
    ratios: RatioSequence, p_grid: Sequence[float]
) -> list[tuple[float, float, float]]:
    """Rows of (p, Shannon entropy, HHI) of the gradient weights."""
    if len(p_grid) == 0:
        raise DomainError("p_grid must be non-empty")
    rows = []
    for p in p_grid:
        w = gradient_weights(ratios, HolderOrder(p))
        rows.append((float(p), shannon_entropy(w), hhi(w)))
    return rows


def v_curve(
    samples: Sequence[GroupBatch], p_grid: Sequence[float]
) -> list[tuple[float, float]]:
    """Rows of (p, V(p)) with V the empirical mean of A^2 rho^2."""
    if len(p_grid) == 0:
        raise DomainError("p_grid must be non-empty")
    return [
        (float(p), variance_bound_term(samples, HolderOrder(p))) for p in p_grid
    ]


def table_to_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Render a table as CSV text with a fixed header row."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()
