"""Prior scores, the uplift Gini and eligibility checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmce.data import Dataset
from mmce.datagen import GenConfig, emit_dataset
from mmce.errors import ValidationError
from mmce.evaluation import (
    Stratification,
    eligibility_check,
    evaluate,
    gain_curve_gini,
    macro_curve,
    marginal_effect_score,
    monotonicity_score,
    observed_gini,
    positivity_check,
    stratification_score,
    stratify,
)
from mmce.model import ResponseCurve, build_model
from mmce.training import TrainConfig, fit


def _curve(values, grid=None, id=0):
    values = np.asarray(values, dtype=np.float64)
    grid = np.arange(values.size, dtype=np.float64) if grid is None else np.asarray(grid, dtype=np.float64)
    return ResponseCurve(id, grid, np.ones_like(values), values, values, float(values[0]), values - values[0])


def _oracle_gini(scores, gains):
    """Loop implementation: sort, accumulate, trapezoid over tie blocks."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    total = sum(gains)
    n = len(scores)
    xs, ys = [0.0], [0.0]
    acc = 0.0
    i = 0
    while i < n:
        j = i
        while j < n and scores[order[j]] == scores[order[i]]:
            acc += gains[order[j]]
            j += 1
        xs.append(j / n)
        ys.append(acc / total)
        i = j
    area = sum((xs[k] - xs[k - 1]) * (ys[k] + ys[k - 1]) / 2 for k in range(1, len(xs)))
    return 2 * area - 1


@pytest.fixture(scope="module")
def beta0():
    return emit_dataset(GenConfig(n_riders=50000, bias_strength=0.0, seed=0))


@pytest.fixture(scope="module")
def beta09():
    return emit_dataset(GenConfig(n_riders=10000, bias_strength=0.9, seed=0))


class TestMonotonicity:
    def test_ordered(self):
        assert monotonicity_score([_curve([1, 2, 3])]) == 1.0

    def test_hand_count(self):
        assert monotonicity_score([_curve([1, 3, 2])]) == pytest.approx(2 / 3)

    def test_mean_over_curves(self):
        assert monotonicity_score([_curve([1, 2, 3]), _curve([3, 2, 1])]) == pytest.approx((1 + 1 / 3) / 2)

    def test_tolerance(self):
        assert monotonicity_score([_curve([1.0, 1.0 - 1e-13, 2.0])]) == 1.0

    def test_grid_mismatch(self):
        with pytest.raises(ValidationError):
            monotonicity_score([_curve([1, 2]), _curve([1, 2], grid=[0, 2])])

    def test_single_level(self):
        with pytest.raises(ValidationError):
            monotonicity_score([_curve([1.0])])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=12), st.floats(-1e3, 1e3))
    def test_shift_invariant(self, values, c):
        v = np.asarray(values)
        # the shift can move a 1e-12 tie; keep values on a coarse lattice
        v = np.round(v, 2)
        a = monotonicity_score(v.reshape(1, -1))
        b = monotonicity_score((v + np.round(c, 2)).reshape(1, -1))
        assert a == b and 0.0 <= a <= 1.0


class TestStratification:
    def test_ordered_family(self):
        grid = [0, 1, 2]
        s = Stratification.from_totals(grid, [[1, 4, 6], [2, 4, 5], [3, 4, 4.5]])
        assert stratification_score(s) == 1.0

    def test_crossing_pair(self):
        # the low stratum gains more at t=1 but less at t=2: only the top one counts
        s = Stratification.from_totals([0, 1, 2], [[1, 3, 3.5], [2, 3.5, 5]])
        assert stratification_score(s) == 0.5

    def test_single_stratum(self):
        with pytest.raises(ValidationError):
            stratification_score(Stratification.from_totals([0, 1], [[1, 2]]))

    def test_empty_stratum(self):
        s = Stratification.from_totals([0, 1], [[1, 2], [2, 3]])
        s.sizes = np.array([5, 0])
        with pytest.raises(ValidationError):
            stratification_score(s)

    def test_stratify_orders_by_score(self):
        curves = [_curve([v, v + 10 - v]) for v in (5.0, 1.0, 3.0, 2.0)]
        s = stratify(curves, [5.0, 1.0, 3.0, 2.0], K=2)
        np.testing.assert_array_equal(s.natural, [1.5, 4.0])
        np.testing.assert_array_equal(s.sizes, [2, 2])


class TestMarginalEffect:
    def test_concave(self):
        g = [0, 1, 2, 3]
        s = Stratification.from_totals(g, [[0, 2, 3, 3.5], [1, 2, 2.5, 2.7]])
        assert marginal_effect_score(s) == 1.0

    def test_convex(self):
        g = np.array([0, 1, 2, 3.0])
        s = Stratification.from_totals(g, [g**2, 2 * g**2])
        assert marginal_effect_score(s) == 0.0

    def test_mixed(self):
        g = np.array([0, 1, 2, 3.0])
        s = Stratification.from_totals(g, [np.sqrt(g), g**2, np.log1p(g)])
        assert marginal_effect_score(s) == pytest.approx(2 / 3)

    def test_needs_positive_levels(self):
        s = Stratification.from_totals([0, 1], [[0, 1], [0, 2]])
        with pytest.raises(ValidationError):
            marginal_effect_score(s)


class TestGroundTruthPriors:
    def test_truth_scores_perfect(self, beta0):
        _, truth = beta0
        curves = [_curve(truth.orders[i], truth.grid, int(truth.ids[i])) for i in range(0, 50000, 10)]
        s = stratify(curves, truth.ability[::10], K=9)
        assert monotonicity_score(curves) == 1.0
        assert stratification_score(s) == 1.0
        assert marginal_effect_score(s) == 1.0


class TestGini:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        scores = rng.integers(0, 20, size=300).astype(float)
        gains = rng.normal(1.0, 2.0, size=300)
        assert gain_curve_gini(scores, gains) == pytest.approx(
            float(np.clip(_oracle_gini(list(scores), list(gains)), -1, 1)), abs=1e-12)

    def test_reversed_is_antisymmetric(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=500)
        gains = rng.uniform(0, 3, size=500)
        assert gain_curve_gini(-scores, gains) == pytest.approx(-gain_curve_gini(scores, gains), abs=1e-12)

    def test_rank_invariance(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(size=400)
        gains = rng.uniform(0, 3, size=400)
        assert gain_curve_gini(np.exp(3 * scores), gains) == gain_curve_gini(scores, gains)

    def test_zero_total_gain(self):
        with pytest.raises(ValidationError):
            gain_curve_gini([1, 2], [1.0, -1.0])

    def test_constant_predictions_near_zero(self, beta0):
        data, truth = beta0
        hold = data.subset(np.arange(10000))
        sub = truth.subset(hold.ids)
        g = observed_gini(np.zeros(len(hold)), hold, sub.natural)
        assert abs(g) < 0.05

    def test_true_increments_close_to_oracle(self, beta0):
        data, truth = beta0
        sub = truth.subset(data.ids)
        true_inc = sub.at(data.ids, data.t) - sub.natural
        g = observed_gini(true_inc, data, sub.natural)
        treated = ~data.blank
        oracle = gain_curve_gini(true_inc[treated], true_inc[treated])
        assert g == pytest.approx(oracle, abs=0.02)

    def test_needs_blank_rows(self, beta0):
        data, truth = beta0
        treated = data.treated_part()
        with pytest.raises(ValidationError):
            observed_gini(np.zeros(len(treated)), treated, np.zeros(len(treated)))


class TestPositivity:
    def test_random_assignment_supported(self):
        data, _ = emit_dataset(GenConfig(n_riders=10000, bias_strength=0.0, seed=1))
        assert positivity_check(data).flagged() == []

    def test_full_bias_flags_ability_feature(self):
        data, _ = emit_dataset(GenConfig(n_riders=10000, bias_strength=1.0, noise=0.0, seed=1))
        report = positivity_check(data)
        assert 0 in report.flagged_features()
        assert all(f < 4 for f in report.flagged_features())

    def test_single_row(self):
        data = Dataset([0], [[1.0, 2.0]], [1.0], [1.0], [3.0], [False])
        report = positivity_check(data, n_bins=4)
        assert len(report.flagged()) == len(report.bins) == 8

    def test_bins_validated(self):
        data = Dataset([0], [[1.0]], [1.0], [1.0], [3.0], [False])
        with pytest.raises(ValidationError):
            positivity_check(data, n_bins=1)


class TestEligibility:
    def test_random_assignment_eligible(self, beta0):
        data, _ = beta0
        verdict = eligibility_check(data)
        assert verdict.eligible, verdict.reasons

    def test_biased_ineligible(self, beta09):
        data, _ = beta09
        verdict = eligibility_check(data)
        assert not verdict.eligible
        assert any(r.startswith("macro monotonicity") for r in verdict.reasons)

    def test_sutva_gate(self, beta0):
        data, _ = beta0
        verdict = eligibility_check(data, sutva=False)
        assert not verdict.eligible and verdict.reasons == ["SUTVA not affirmed"]

    def test_macro_curve_shape(self, beta0):
        data, _ = beta0
        ts, ys = macro_curve(data)
        assert ts.size == 11 and ts[0] == 0.0 and np.all(np.diff(ts) > 0)


class TestEvaluate:
    def test_report(self, beta0):
        data, truth = beta0
        train, hold = data.subset(np.arange(4000)), data.subset(np.arange(40000, 50000))
        model = fit(train, TrainConfig(hidden=(8,), epochs=2), log=lambda s: None)
        report = evaluate(model, hold, truth)
        assert report.monotonicity == 1.0
        for v in (report.stratification, report.marginal_effect):
            assert 0.0 <= v <= 1.0
        assert -1.0 <= report.gini <= 1.0
        assert report.curve_mae > 0
        text = report.to_text()
        keys = [line.split("=", 1)[0] for line in text.splitlines()]
        assert keys == ["monotonicity", "stratification", "marginal_effect", "gini", "eligible",
                        "macro_monotonicity", "positivity_flagged_bins", "positivity_flagged_features",
                        "reasons", "curve_mae"]

    def test_untrained_model_scores_monotone(self, beta09):
        data, _ = beta09
        model = build_model("mmce3", "isotonic", data.n_features, (4,), t_max=5.0, seed=3)
        report = evaluate(model, data.subset(np.arange(2000)))
        assert report.monotonicity == 1.0
        assert report.curve_mae is None
