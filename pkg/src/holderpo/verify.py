"""Executable checks for every theorem, lemma, and identity the library
relies on.  Each check runs over randomized instances, reports its worst
observed error, and never raises on failure: the report carries the
verdicts.  Deterministic given (seed, instance_count)."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from holderpo.core import (
    HolderOrder,
    RatioSequence,
    WeightDistribution,
    entropy_p_derivative,
    gradient_weights,
    hhi,
    holder_mean,
    limit_weights,
    mu_p_derivative,
    shannon_entropy,
    weight_p_derivative,
    weighted_log_mean,
)
from holderpo.objectives import (
    ClipConfig,
    GroupBatch,
    RolloutRecord,
    advantage_estimates,
    grad_estimator_seq_clip,
    grad_estimator_token_clip,
    grad_estimator_unclipped,
    grad_rho,
    second_moment_orthogonal,
    surrogate_seq_clip,
    surrogate_token_clip,
    surrogate_unclipped,
    variance_bound_term,
)
from holderpo.sim import PolicyParams

P_GRID = (-5.0, -3.0, -2.0, -1.0, -0.5, -1e-7, 0.0, 1e-7, 0.5, 1.0, 2.0, 3.0, 5.0)
LIMIT_P = 40.0
STRICT_SLACK = 1e-12
FD_STEP = 1e-5
FD_RTOL = 1e-6
POLICY_FD_RTOL = 1e-4
KINK_MARGIN = 1e-3

# Orders used in p-derivative checks disable the geometric snap so finite
# differences see the smooth function everywhere.
def _smooth(p: float) -> HolderOrder:
    return HolderOrder(p, zero_threshold=1e-300)


@dataclass
class CheckResult:
    name: str
    claim: str
    status: str = "pass"  # pass | fail | skip
    worst_error: float = 0.0
    detail: str = ""

    def observe(self, error: float, ok: bool, detail: str = "") -> None:
        if error > self.worst_error:
            self.worst_error = error
        if not ok and self.status != "fail":
            self.status = "fail"
            self.detail = detail

    def skip(self, reason: str) -> None:
        if self.status == "pass" and self.worst_error == 0.0:
            self.status = "skip"
            self.detail = reason

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "claim": self.claim,
            "status": self.status,
            "worst_error": self.worst_error,
            "detail": self.detail,
        }


@dataclass
class Report:
    seed: int
    instance_count: int
    results: list[CheckResult] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(r.status != "fail" for r in self.results)

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "instance_count": self.instance_count,
                "all_passed": self.all_passed,
                "checks": [r.to_dict() for r in self.results],
            },
            indent=2,
        )

    def to_text(self) -> str:
        lines = []
        for r in self.results:
            line = f"[{r.status.upper():4s}] {r.name}  (worst error {r.worst_error:.3e})"
            if r.detail:
                line += f"  -- {r.detail}"
            lines.append(line)
        verdict = "ALL CHECKS PASSED" if self.all_passed else "FAILURES PRESENT"
        lines.append(verdict)
        return "\n".join(lines)


def _random_ratios(rng, n_min=2, n_max=64) -> RatioSequence:
    n = int(rng.integers(n_min, n_max + 1))
    return RatioSequence(np.exp(rng.uniform(-2.0, 2.0, n)))


def _central_diff(f: Callable[[float], float], x: float, h: float = FD_STEP) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def _rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b), 1e-12)
    return abs(a - b) / scale


# ----------------------------------------------------------------------
# holder_core checks
# ----------------------------------------------------------------------


def check_special_case_means(rng, instances) -> CheckResult:
    res = CheckResult(
        "special_case_means",
        "p = 1, 0, -1 recover the arithmetic, geometric, harmonic means",
    )
    for _ in range(instances):
        r = _random_ratios(rng)
        x = r.ratios
        pairs = [
            (holder_mean(r, HolderOrder(1.0)), x.mean()),
            (holder_mean(r, HolderOrder(0.0)), np.exp(np.log(x).mean())),
            (holder_mean(r, HolderOrder(-1.0)), 1.0 / (1.0 / x).mean()),
        ]
        for got, want in pairs:
            err = _rel_err(got, want)
            res.observe(err, err <= 1e-12, f"got {got}, want {want}")
    return res


def check_geometric_limit(rng, instances) -> CheckResult:
    res = CheckResult(
        "geometric_limit",
        "the mean at p = +-1e-7 is within rel. 1e-5 of the geometric mean",
    )
    for _ in range(instances):
        r = _random_ratios(rng)
        geo = float(np.exp(np.log(r.ratios).mean()))
        for p in (1e-7, -1e-7):
            got = holder_mean(r, _smooth(p))
            err = _rel_err(got, geo)
            res.observe(err, err <= 1e-5, f"gap {err:.2e} at p={p}")
    return res


def check_mean_monotone(rng, instances) -> CheckResult:
    res = CheckResult(
        "mean_monotone_in_p",
        "the power mean strictly increases in p for non-uniform ratios",
    )
    tested = 0
    for _ in range(instances):
        r = _random_ratios(rng)
        if np.ptp(np.log(r.ratios)) < 1e-9:
            continue
        tested += 1
        vals = [holder_mean(r, HolderOrder(p)) for p in P_GRID]
        diffs = np.diff(vals)
        err = max(0.0, float(-diffs.min()))
        res.observe(err, bool(np.all(diffs > -STRICT_SLACK)), "non-increasing step")
    if tested == 0:
        res.skip("all instances degenerate (uniform ratios)")
    return res


def check_weights_normalized(rng, instances) -> CheckResult:
    res = CheckResult(
        "weights_normalized", "gradient weights sum to 1 within 1e-10"
    )
    for _ in range(instances):
        r = _random_ratios(rng)
        for p in P_GRID + (LIMIT_P, -LIMIT_P):
            s = gradient_weights(r, HolderOrder(p)).weights.sum()
            err = abs(s - 1.0)
            res.observe(err, err <= 1e-10, f"sum {s} at p={p}")
    return res


def check_weight_derivative_sum_zero(rng, instances) -> CheckResult:
    res = CheckResult(
        "weight_derivative_sum_zero",
        "per-token weight p-derivatives sum to zero (normalization preserved)",
    )
    for _ in range(instances):
        r = _random_ratios(rng)
        for p in (-3.0, -1.0, 0.0, 1.0, 3.0):
            total = sum(
                weight_p_derivative(r, HolderOrder(p), t) for t in range(len(r))
            )
            err = abs(total)
            res.observe(err, err <= 1e-10, f"sum {total} at p={p}")
    return res


def check_weight_derivative_fd(
    rng,
    instances,
    derivative_fn: Callable[[RatioSequence, HolderOrder, int], float] = weight_p_derivative,
) -> CheckResult:
    """The derivative_fn hook lets the test suite verify this check rejects
    a corrupted formula."""
    res = CheckResult(
        "weight_derivative_vs_fd",
        "dW/dp = W (log r - mu) matches central finite differences",
    )
    for _ in range(instances):
        r = _random_ratios(rng)
        p = float(rng.uniform(-5.0, 5.0))
        t = int(rng.integers(0, len(r)))
        analytic = derivative_fn(r, _smooth(p), t)
        fd = _central_diff(
            lambda q: gradient_weights(r, _smooth(q)).weights[t], p
        )
        err = _rel_err(analytic, fd)
        res.observe(err, err <= FD_RTOL, f"analytic {analytic}, fd {fd}")
    return res


def check_mu_derivative(rng, instances) -> CheckResult:
    res = CheckResult(
        "mu_derivative_vs_fd",
        "dmu/dp equals the weighted log-ratio variance, and is >= 0",
    )
    for _ in range(instances):
        r = _random_ratios(rng)
        p = float(rng.uniform(-5.0, 5.0))
        analytic = mu_p_derivative(r, _smooth(p))
        res.observe(max(0.0, -analytic), analytic >= 0.0, "negative variance")
        fd = _central_diff(lambda q: weighted_log_mean(r, _smooth(q)), p)
        err = _rel_err(analytic, fd)
        res.observe(err, err <= FD_RTOL, f"analytic {analytic}, fd {fd}")
    return res


def check_entropy_derivative_fd(rng, instances) -> CheckResult:
    res = CheckResult(
        "entropy_derivative_vs_fd",
        "dH/dp = -p Var_W(log r) matches central finite differences",
    )
    for _ in range(instances):
        r = _random_ratios(rng)
        p = float(rng.uniform(-5.0, 5.0))
        analytic = entropy_p_derivative(r, _smooth(p))
        fd = _central_diff(
            lambda q: shannon_entropy(gradient_weights(r, _smooth(q))), p
        )
        err = _rel_err(analytic, fd)
        res.observe(err, err <= FD_RTOL, f"analytic {analytic}, fd {fd}")
    return res


def check_entropy_peak(rng, instances) -> CheckResult:
    res = CheckResult(
        "entropy_peak_at_zero",
        "weight entropy peaks at p = 0 with value ln n and strictly "
        "decreases in |p| for non-uniform ratios",
    )
    tested = 0
    grid = np.array([0.0, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0])
    for _ in range(instances):
        r = _random_ratios(rng)
        if np.ptp(np.log(r.ratios)) < 1e-6:
            continue
        tested += 1
        n = len(r)
        h0 = shannon_entropy(gradient_weights(r, HolderOrder(0.0)))
        err = abs(h0 - math.log(n))
        res.observe(err, err <= 1e-12, "entropy at p=0 is not ln n")
        for sign in (1.0, -1.0):
            vals = [
                shannon_entropy(gradient_weights(r, HolderOrder(sign * p)))
                for p in grid
            ]
            diffs = np.diff(vals)
            err = max(0.0, float(diffs.max()))
            res.observe(
                err,
                bool(np.all(diffs < STRICT_SLACK)),
                f"entropy not decreasing in |p| (sign {sign:+.0f})",
            )
    if tested == 0:
        res.skip("all instances degenerate (uniform ratios)")
    return res


def check_limit_concentration(rng, instances) -> CheckResult:
    res = CheckResult(
        "limit_concentration",
        "at p = +-40 with a log-gap >= 0.5, mass >= 0.999 sits on the "
        "argmax/argmin set, whose limit is limit_weights",
    )
    tested = 0
    for _ in range(instances):
        r = _random_ratios(rng)
        logs = np.log(r.ratios)
        order_idx = np.argsort(logs)
        if logs[order_idx[-1]] - logs[order_idx[-2]] < 0.5:
            continue
        if logs[order_idx[1]] - logs[order_idx[0]] < 0.5:
            continue
        tested += 1
        for p, direction in ((LIMIT_P, 1), (-LIMIT_P, -1)):
            w = gradient_weights(r, HolderOrder(p)).weights
            lim = limit_weights(r, direction).weights
            mass = float(w[lim > 0.0].sum())
            err = max(0.0, 0.999 - mass)
            res.observe(err, mass >= 0.999, f"mass {mass} at p={p}")
    if tested == 0:
        res.skip("no instance with a 0.5 log-gap at both extremes")
    return res


def check_weight_rise_fall(rng, instances) -> CheckResult:
    res = CheckResult(
        "weight_rise_then_fall",
        "a non-maximal token's weight rises then strictly falls once the "
        "weighted log mean crosses its log-ratio; crossing bracketed by "
        "bisection",
    )
    tested = 0
    for _ in range(instances):
        n = int(rng.integers(3, 16))
        logs = np.sort(rng.uniform(-2.0, 2.0, n))
        if logs[-1] - logs[-2] < 0.05 or logs[1] - logs[0] < 0.05:
            continue
        r = RatioSequence(np.exp(logs))
        t = int(rng.integers(1, n - 1))  # strictly interior log-ratio
        if logs[t] - logs[0] < 0.05 or logs[-1] - logs[t] < 0.05:
            continue
        tested += 1

        def gap(p: float) -> float:
            return weighted_log_mean(r, HolderOrder(p)) - logs[t]

        lo, hi = -60.0, 60.0
        if not (gap(lo) < 0.0 < gap(hi)):
            res.observe(1.0, False, "crossing not bracketed on [-60, 60]")
            continue
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if gap(mid) < 0.0:
                lo = mid
            else:
                hi = mid
        p_t = 0.5 * (lo + hi)

        before = np.linspace(-10.0, p_t - 0.2, 25)
        after = np.linspace(p_t + 0.2, p_t + 12.0, 25)
        w_before = [gradient_weights(r, HolderOrder(p)).weights[t] for p in before]
        w_after = [gradient_weights(r, HolderOrder(p)).weights[t] for p in after]
        d_before = np.diff(w_before)
        d_after = np.diff(w_after)
        res.observe(
            max(0.0, float(-d_before.min())),
            bool(np.all(d_before > -STRICT_SLACK)),
            "weight not rising before the crossing",
        )
        res.observe(
            max(0.0, float(d_after.max())),
            bool(np.all(d_after < STRICT_SLACK)),
            "weight not strictly falling after the crossing",
        )
    if tested == 0:
        res.skip("no usable interior-token instance drawn")
    return res


def check_hhi_profile(rng, instances) -> CheckResult:
    res = CheckResult(
        "hhi_profile",
        "HHI is minimized at p = 0 (value 1/n) and approaches 1 at p = +-40",
    )
    for _ in range(instances):
        r = _random_ratios(rng)
        n = len(r)
        h0 = hhi(gradient_weights(r, HolderOrder(0.0)))
        err = abs(h0 - 1.0 / n)
        res.observe(err, err <= 1e-12, "HHI at p=0 is not 1/n")
        for p in P_GRID:
            h = hhi(gradient_weights(r, HolderOrder(p)))
            err = max(0.0, h0 - h - 1e-15)
            res.observe(err, h >= h0 - 1e-15, f"HHI below uniform at p={p}")
    return res


# ----------------------------------------------------------------------
# objectives checks
# ----------------------------------------------------------------------


def _random_policy(rng, length=4, vocab=5) -> PolicyParams:
    return PolicyParams(rng.normal(scale=0.5, size=(length, vocab)))


def _random_batch(
    rng, policy_old: PolicyParams, policy_new: PolicyParams, group_size=4
) -> GroupBatch:
    """A group sampled from the old policy with logprobs under both."""
    probs = policy_old.probs()
    length, vocab = probs.shape
    rollouts = []
    for _ in range(group_size):
        tokens = np.array(
            [rng.choice(vocab, p=probs[pos]) for pos in range(length)]
        )
        rollouts.append(
            RolloutRecord(
                token_ids=tokens,
                old_logprobs=policy_old.token_logprobs(tokens),
                new_logprobs=policy_new.token_logprobs(tokens),
                reward=float(rng.integers(0, 2)),
                mask=np.ones(length, dtype=bool),
            )
        )
    return GroupBatch(rollouts)


def _away_from_kinks(batch: GroupBatch, order, clip: ClipConfig) -> bool:
    from holderpo.objectives import _rho

    for rollout in batch.rollouts:
        rho = _rho(rollout, order)
        if min(abs(rho - clip.low), abs(rho - clip.high)) < KINK_MARGIN:
            return False
        ratios = np.exp(rollout.log_ratio_sequence().valid_logs())
        if np.min(np.abs(ratios - clip.low)) < KINK_MARGIN:
            return False
        if np.min(np.abs(ratios - clip.high)) < KINK_MARGIN:
            return False
    return True


def _fd_policy_gradient(objective: Callable[[PolicyParams], float],
                        policy: PolicyParams, h=FD_STEP) -> np.ndarray:
    flat = policy.logits.ravel().copy()
    grad = np.zeros_like(flat)
    for j in range(flat.size):
        bumped = flat.copy()
        bumped[j] = flat[j] + h
        plus = objective(PolicyParams(bumped.reshape(policy.logits.shape)))
        bumped[j] = flat[j] - h
        minus = objective(PolicyParams(bumped.reshape(policy.logits.shape)))
        grad[j] = (plus - minus) / (2.0 * h)
    return grad


def check_grad_rho_forms(rng, instances) -> CheckResult:
    res = CheckResult(
        "grad_rho_two_forms",
        "rho * sum W g equals rho^{1-p}/n sum r^p g to 1e-10 relative",
    )
    for _ in range(instances):
        n = int(rng.integers(2, 12))
        d = int(rng.integers(2, 8))
        r = RatioSequence(np.exp(rng.uniform(-2.0, 2.0, n)))
        grads = rng.normal(size=(n, d))
        p = float(rng.uniform(-5.0, 5.0))
        order = HolderOrder(p)
        got = grad_rho(r, grads, order)
        rho = holder_mean(r, order)
        if order.is_zero:
            alt = rho * grads.mean(axis=0)
        else:
            alt = rho ** (1.0 - p) / n * (r.ratios**p @ grads)
        scale = max(np.abs(got).max(), np.abs(alt).max(), 1e-12)
        err = float(np.abs(got - alt).max() / scale)
        res.observe(err, err <= 1e-10, f"forms differ by rel {err:.2e}")
    return res


def check_grad_rho_fd(rng, instances) -> CheckResult:
    res = CheckResult(
        "grad_rho_vs_fd",
        "grad of the aggregated ratio over policy logits matches central "
        "finite differences within rel. 1e-4",
    )
    for _ in range(max(1, instances // 4)):
        policy_old = _random_policy(rng)
        policy = PolicyParams(policy_old.logits + rng.normal(scale=0.1,
                                                             size=policy_old.logits.shape))
        probs = policy_old.probs()
        tokens = np.array(
            [rng.choice(policy_old.vocab, p=probs[pos])
             for pos in range(policy_old.length)]
        )
        p = float(rng.uniform(-4.0, 4.0))
        order = HolderOrder(p)

        def rho_of(candidate: PolicyParams) -> float:
            delta = candidate.token_logprobs(tokens) - policy_old.token_logprobs(tokens)
            return holder_mean(RatioSequence(np.exp(delta)), order)

        analytic = grad_rho(
            RatioSequence(
                np.exp(policy.token_logprobs(tokens) - policy_old.token_logprobs(tokens))
            ),
            policy.score_gradients(tokens),
            order,
        )
        fd = _fd_policy_gradient(rho_of, policy)
        scale = max(np.abs(analytic).max(), np.abs(fd).max(), 1e-12)
        err = float(np.abs(analytic - fd).max() / scale)
        res.observe(err, err <= POLICY_FD_RTOL, f"rel err {err:.2e} at p={p}")
    return res


def check_estimators_vs_fd(rng, instances) -> CheckResult:
    res = CheckResult(
        "estimators_vs_fd",
        "all three gradient estimators match central finite differences of "
        "their objectives away from clip kinks",
    )
    clip = ClipConfig(0.2)
    done = 0
    attempts = 0
    target = max(1, instances // 10)
    while done < target and attempts < target * 20:
        attempts += 1
        policy_old = _random_policy(rng)
        policy = PolicyParams(
            policy_old.logits + rng.normal(scale=0.15, size=policy_old.logits.shape)
        )
        batch = _random_batch(rng, policy_old, policy)
        p = float(rng.uniform(-3.0, 3.0))
        order = HolderOrder(p)
        if not _away_from_kinks(batch, order, clip):
            continue
        if np.all(batch.advantages == 0.0):
            continue
        done += 1

        def refreshed(candidate: PolicyParams) -> GroupBatch:
            from holderpo.sim import refresh_logprobs

            return refresh_logprobs(batch, candidate)

        cases = [
            (
                grad_estimator_unclipped([refreshed(policy)], policy, order).vector,
                lambda c: surrogate_unclipped(refreshed(c), order),
            ),
            (
                grad_estimator_seq_clip([refreshed(policy)], policy, order, clip).vector,
                lambda c: surrogate_seq_clip(refreshed(c), order, clip),
            ),
            (
                grad_estimator_token_clip([refreshed(policy)], policy, order, clip).vector,
                lambda c: surrogate_token_clip(refreshed(c), order, clip),
            ),
        ]
        for analytic, objective in cases:
            fd = _fd_policy_gradient(objective, policy)
            scale = max(np.abs(analytic).max(), np.abs(fd).max(), 1e-9)
            err = float(np.abs(analytic - fd).max() / scale)
            res.observe(err, err <= POLICY_FD_RTOL, f"rel err {err:.2e} at p={p}")
    if done == 0:
        res.skip("no kink-free instance drawn")
    return res


def check_reinforce_invariance(rng, instances) -> CheckResult:
    res = CheckResult(
        "reinforce_invariance_at_center",
        "with all ratios 1 the unclipped estimator is p-invariant and equals "
        "the advantage-weighted mean score gradient",
    )
    for _ in range(max(1, instances // 10)):
        policy = _random_policy(rng)
        batch = _random_batch(rng, policy, policy)
        reference = np.zeros(policy.param_dim)
        for rollout, adv in zip(batch.rollouts, batch.advantages):
            grads = policy.score_gradients(rollout.token_ids)
            reference += adv * grads.mean(axis=0)
        reference /= batch.group_size
        for p in (-5.0, -1.0, 0.0, 1.0, 5.0):
            got = grad_estimator_unclipped([batch], policy, HolderOrder(p)).vector
            err = float(np.abs(got - reference).max())
            res.observe(err, err <= 1e-10, f"p-dependence at center, p={p}")
    return res


def check_seq_clip_contraction(rng, instances) -> CheckResult:
    res = CheckResult(
        "seq_clip_norm_contraction",
        "per-sequence clipped gradient norm^2 never exceeds the unclipped one",
    )
    clip = ClipConfig(0.2)
    for _ in range(max(1, instances // 5)):
        policy_old = _random_policy(rng)
        policy = PolicyParams(
            policy_old.logits + rng.normal(scale=0.3, size=policy_old.logits.shape)
        )
        batch = _random_batch(rng, policy_old, policy)
        from holderpo.sim import refresh_logprobs

        batch = refresh_logprobs(batch, policy)
        p = float(rng.uniform(-3.0, 3.0))
        order = HolderOrder(p)
        for rollout, adv in zip(batch.rollouts, batch.advantages):
            if adv == 0.0:
                continue
            ratios = rollout.ratio_sequence()
            g = adv * grad_rho(ratios, policy.score_gradients(rollout.token_ids), order)
            rho = holder_mean(ratios, order)
            indicator = 0.0 if (
                (adv > 0.0 and rho > clip.high) or (adv < 0.0 and rho < clip.low)
            ) else 1.0
            clipped_sq = indicator * float(g @ g)
            err = max(0.0, clipped_sq - float(g @ g))
            res.observe(err, clipped_sq <= float(g @ g) + 1e-15, "norm grew")
    return res


def check_variance_term_monotone(rng, instances) -> CheckResult:
    res = CheckResult(
        "variance_term_monotone",
        "V(p) = E[A^2 rho^2] strictly increases in p on non-degenerate samples",
    )
    tested = 0
    for _ in range(max(1, instances // 5)):
        policy_old = _random_policy(rng)
        policy = PolicyParams(
            policy_old.logits + rng.normal(scale=0.2, size=policy_old.logits.shape)
        )
        batch = _random_batch(rng, policy_old, policy)
        from holderpo.sim import refresh_logprobs

        batch = refresh_logprobs(batch, policy)
        if np.all(batch.advantages == 0.0):
            continue
        degenerate = all(
            np.ptp(r.log_ratio_sequence().valid_logs()) < 1e-9
            for r in batch.rollouts
        )
        if degenerate:
            continue
        tested += 1
        grid = (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)
        vals = [variance_bound_term([batch], HolderOrder(p)) for p in grid]
        diffs = np.diff(vals)
        err = max(0.0, float(-diffs.min()))
        res.observe(err, bool(np.all(diffs > -STRICT_SLACK)), "V(p) not increasing")
    if tested == 0:
        res.skip("all sampled batches degenerate")
    return res


def check_second_moment_factorization(rng, instances) -> CheckResult:
    res = CheckResult(
        "second_moment_factorization",
        "with explicit orthonormal score vectors the exact gradient norm^2 "
        "equals A^2 M^2 rho^2 HHI to 1e-10",
    )
    for _ in range(instances):
        n = int(rng.integers(2, 10))
        r = RatioSequence(np.exp(rng.uniform(-1.5, 1.5, n)))
        p = float(rng.uniform(-4.0, 4.0))
        order = HolderOrder(p)
        adv = float(rng.uniform(-2.0, 2.0))
        m = float(rng.uniform(0.5, 3.0))
        grads = m * np.eye(n)  # orthogonal rows, norm M each
        g = adv * grad_rho(r, grads, order)
        exact = float(g @ g)
        formula = second_moment_orthogonal(adv, m, r, order)
        err = _rel_err(exact, formula)
        res.observe(err, err <= 1e-10, f"exact {exact}, formula {formula}")
    return res


def check_second_moment_pstar(rng, instances) -> CheckResult:
    res = CheckResult(
        "second_moment_pstar_nonpositive",
        "the grid minimizer of A^2 M^2 rho^2 HHI over [-10, 10] is <= 0, and "
        "the curve strictly increases on (0, 10]",
    )
    tested = 0
    grid = np.linspace(-10.0, 10.0, 201)
    for _ in range(instances):
        r = _random_ratios(rng, n_max=32)
        if np.ptp(np.log(r.ratios)) < 1e-6:
            continue
        tested += 1
        vals = np.array(
            [second_moment_orthogonal(1.0, 1.0, r, HolderOrder(p)) for p in grid]
        )
        p_star = grid[int(np.argmin(vals))]
        res.observe(max(0.0, p_star), p_star <= 0.0, f"p* = {p_star}")
        positive = vals[grid > 0.0]
        diffs = np.diff(positive)
        err = max(0.0, float(-diffs.min()))
        res.observe(err, bool(np.all(diffs > -STRICT_SLACK)),
                    "not increasing on (0, 10]")
    if tested == 0:
        res.skip("all instances degenerate (uniform ratios)")
    return res


def check_schedule_amplification(rng, instances) -> CheckResult:
    res = CheckResult(
        "schedule_amplification_bound",
        "for n=101 with one ratio R=4 among ones, W(2)/W(0) >= C R^2 with "
        "C = S(0) / (R^2 + S(2))",
    )
    n, big = 101, 4.0
    ratios = RatioSequence(np.concatenate(([big], np.ones(n - 1))))
    w_high = gradient_weights(ratios, HolderOrder(2.0)).weights[0]
    w_stat = gradient_weights(ratios, HolderOrder(0.0)).weights[0]
    s = float(n - 1)  # sum of p-th powers of the unit background, any p
    c = s / (big**2.0 + s)
    lhs = w_high / w_stat
    rhs = c * big**2.0
    err = max(0.0, rhs - lhs)
    res.observe(err, lhs >= rhs, f"ratio {lhs:.4f} < bound {rhs:.4f}")
    res.detail = res.detail or f"ratio {lhs:.4f} >= bound {rhs:.4f}"
    return res


def check_schedule_contraction(rng, instances) -> CheckResult:
    res = CheckResult(
        "schedule_variance_contraction",
        "V(p_low) < V(p_stat) whenever p_low < p_stat on non-degenerate samples",
    )
    tested = 0
    for _ in range(max(1, instances // 5)):
        policy_old = _random_policy(rng)
        policy = PolicyParams(
            policy_old.logits + rng.normal(scale=0.2, size=policy_old.logits.shape)
        )
        batch = _random_batch(rng, policy_old, policy)
        from holderpo.sim import refresh_logprobs

        batch = refresh_logprobs(batch, policy)
        if np.all(batch.advantages == 0.0):
            continue
        if all(
            np.ptp(r.log_ratio_sequence().valid_logs()) < 1e-9
            for r in batch.rollouts
        ):
            continue
        tested += 1
        p_stat = float(rng.uniform(-1.0, 2.0))
        p_low = p_stat - float(rng.uniform(0.5, 3.0))
        v_low = variance_bound_term([batch], HolderOrder(p_low))
        v_stat = variance_bound_term([batch], HolderOrder(p_stat))
        err = max(0.0, v_low - v_stat)
        res.observe(err, v_low < v_stat, f"V({p_low:.2f}) >= V({p_stat:.2f})")
    if tested == 0:
        res.skip("all sampled batches degenerate")
    return res


CHECKS: dict[str, Callable] = {
    "special_case_means": check_special_case_means,
    "geometric_limit": check_geometric_limit,
    "mean_monotone_in_p": check_mean_monotone,
    "weights_normalized": check_weights_normalized,
    "weight_derivative_sum_zero": check_weight_derivative_sum_zero,
    "weight_derivative_vs_fd": check_weight_derivative_fd,
    "mu_derivative_vs_fd": check_mu_derivative,
    "entropy_derivative_vs_fd": check_entropy_derivative_fd,
    "entropy_peak_at_zero": check_entropy_peak,
    "limit_concentration": check_limit_concentration,
    "weight_rise_then_fall": check_weight_rise_fall,
    "hhi_profile": check_hhi_profile,
    "grad_rho_two_forms": check_grad_rho_forms,
    "grad_rho_vs_fd": check_grad_rho_fd,
    "estimators_vs_fd": check_estimators_vs_fd,
    "reinforce_invariance_at_center": check_reinforce_invariance,
    "seq_clip_norm_contraction": check_seq_clip_contraction,
    "variance_term_monotone": check_variance_term_monotone,
    "second_moment_factorization": check_second_moment_factorization,
    "second_moment_pstar_nonpositive": check_second_moment_pstar,
    "schedule_amplification_bound": check_schedule_amplification,
    "schedule_variance_contraction": check_schedule_contraction,
}


def check_all(
    seed: int = 0,
    instance_count: int = 100,
    only: Sequence[str] | None = None,
) -> Report:
    """Run every registered check (or the named subset) over randomized
    instances; failures become report entries, never exceptions."""
    if instance_count < 1:
        raise ValueError("instance_count must be >= 1")
    names = list(CHECKS) if only is None else list(only)
    report = Report(seed=seed, instance_count=instance_count)
    for name in names:
        if name not in CHECKS:
            raise KeyError(f"unknown check {name!r}; known: {sorted(CHECKS)}")
        rng = np.random.default_rng(
            np.random.SeedSequence(
                entropy=seed, spawn_key=(zlib.crc32(name.encode()),)
            )
        )
        report.results.append(CHECKS[name](rng, instance_count))
    return report
