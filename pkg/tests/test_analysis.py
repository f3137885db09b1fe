"""Diagnostics: envelopes, weight profiles, the V(p) curve, CSV export."""

import math

import numpy as np
import pytest

from holderpo import DomainError, HolderOrder, RatioSequence, UpdateMetrics
from holderpo.analysis import ratio_envelopes, table_to_csv, v_curve, weight_profile

from conftest import make_group


def metrics_kwargs(**overrides):
    base = dict(
        step=0, p_value=1.0, objective=0.0, grad_norm=0.0, policy_entropy=1.0,
        log_ratio_max=0.2, log_ratio_min=-0.1, clip_fraction=0.0,
        mean_reward=0.5, v_of_p=1.0,
    )
    base.update(overrides)
    return base


class TestUpdateMetrics:
    def test_round_trips_to_dict(self):
        m = UpdateMetrics(**metrics_kwargs())
        assert m.to_dict()["log_ratio_max"] == 0.2

    def test_rejects_inverted_envelope(self):
        with pytest.raises(DomainError):
            UpdateMetrics(**metrics_kwargs(log_ratio_max=-1.0, log_ratio_min=0.0))


class TestRatioEnvelopes:
    def test_zero_at_trust_region_center(self):
        batch = make_group([[0.0, 0.0]] * 2, [1.0, 0.0])
        assert ratio_envelopes(batch) == (0.0, 0.0)

    def test_single_displaced_token(self):
        batch = make_group([[0.3, 0.0], [0.0, 0.0]], [1.0, 0.0])
        assert ratio_envelopes(batch) == pytest.approx((0.3, 0.0))

    def test_matches_brute_force_scan(self, rng):
        rows = rng.uniform(-0.7, 0.7, size=(3, 5))
        batch = make_group(rows, [1.0, 0.0, 1.0])
        assert ratio_envelopes(batch) == pytest.approx(
            (rows.max(), rows.min())
        )


class TestWeightProfile:
    def test_zero_point(self):
        rows = weight_profile(RatioSequence(np.array([2.0, 8.0])), [0.0])
        p, entropy, concentration = rows[0]
        assert p == 0.0
        assert entropy == pytest.approx(math.log(2.0))
        assert concentration == pytest.approx(0.5)

    def test_entropy_unimodal_on_symmetric_grid(self):
        r = RatioSequence(np.exp(np.array([-1.0, 0.2, 0.9])))
        grid = np.linspace(-4, 4, 17)
        entropies = [row[1] for row in weight_profile(r, grid)]
        peak = int(np.argmax(entropies))
        assert grid[peak] == pytest.approx(0.0)
        assert np.all(np.diff(entropies[: peak + 1]) >= -1e-12)
        assert np.all(np.diff(entropies[peak:]) <= 1e-12)

    def test_uniform_ratios_flat(self):
        rows = weight_profile(RatioSequence(np.full(4, 2.0)), [-2.0, 0.0, 2.0])
        np.testing.assert_allclose([row[1] for row in rows], math.log(4.0))
        np.testing.assert_allclose([row[2] for row in rows], 0.25)

    def test_empty_grid_rejected(self):
        with pytest.raises(DomainError):
            weight_profile(RatioSequence(np.array([2.0])), [])


class TestVCurve:
    def test_flat_at_unit_ratios(self):
        batch = make_group([[0.0, 0.0]] * 2, [1.0, 0.0])
        expect = float(np.mean(batch.advantages**2))
        for _, v in v_curve([batch], [-2.0, 0.0, 2.0]):
            assert v == pytest.approx(expect)

    def test_strictly_increasing_on_nonuniform_sample(self):
        batch = make_group([[0.4, -0.3, 0.1], [0.0, 0.0, 0.0]], [1.0, 0.0])
        values = [v for _, v in v_curve([batch], np.linspace(-3, 3, 13))]
        assert np.all(np.diff(values) > 0.0)

    def test_single_rollout_hand_value(self):
        batch = make_group([[math.log(5.0)] * 2, [0.0] * 2], [1.0, 0.0])
        batch.advantages = np.array([1.0, 0.0])
        rows = v_curve([batch], [1.0])
        assert rows[0] == (1.0, pytest.approx(12.5))


class TestTableToCsv:
    def test_fixed_header_and_rows(self):
        text = table_to_csv(("a", "b"), [[1, 2.5], ["x", -1]])
        assert text == "a,b\n1,2.5\nx,-1\n"
