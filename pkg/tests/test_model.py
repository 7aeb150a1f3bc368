"""Scheme composition, prediction identities and curve decomposition."""

import numpy as np
import pytest
from scipy.special import expit

from mmce import tensor as tc
from mmce.errors import ConfigError, DomainError
from mmce.evaluation import monotonicity_score
from mmce.heads import HeadKind, treatment_grid
from mmce.model import (
    SchemeKind,
    build_model,
    decompose,
    head_groups,
    predict_attendance,
    predict_curve,
    predict_curves,
    predict_orders,
    predict_orders_pa,
    set_head_bias,
    trunk_groups,
)

SCHEMES = list(SchemeKind)
HEADS = list(HeadKind)
GRID = treatment_grid(5.0)


def _model(scheme="mmce2", head="sshaped", seed=0, d=4, hidden=(6, 5)):
    return build_model(scheme, head, d, hidden, t_max=5.0, seed=seed)


def _perturb(model, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    for name in model.store:
        model.store[name] = model.store[name] + rng.normal(scale=scale, size=model.store[name].size)
    return model


class TestConstruction:
    def test_group_layout(self):
        assert _model("minimalist").store.names() == ["shared_trunk", "orders_head"]
        assert _model("dualtask").store.names() == [
            "shared_trunk", "natural_orders", "incremental_orders_head"]
        assert _model("mmce1").store.names() == [
            "attendance_trunk", "orders_trunk", "natural_attendance", "natural_orders",
            "incremental_attendance_head", "incremental_orders_head"]
        assert _model("mmce2").store.names() == [
            "shared_trunk", "natural_attendance", "natural_orders",
            "incremental_attendance_head", "incremental_orders_head"]
        assert trunk_groups("sequence") == ["attendance_trunk", "orders_trunk"]
        assert head_groups("mmce3") == ["attendance_head", "orders_head"]

    def test_unknown_scheme(self):
        with pytest.raises(ConfigError, match="unknown scheme"):
            SchemeKind.parse("mmce4")

    def test_seeded(self):
        a, b = _model(seed=3), _model(seed=3)
        for name in a.store:
            assert a.store[name].tobytes() == b.store[name].tobytes()

    def test_width_mismatch(self):
        with pytest.raises(ConfigError):
            _model().predict(np.ones((2, 3)), [0.0, 1.0])

    def test_negative_treatment(self):
        with pytest.raises(DomainError):
            predict_orders(_model(), np.ones(4), -0.5)


class TestPredictions:
    def test_attendance_at_zero_is_sigmoid_of_natural_logit(self):
        m = _perturb(_model(), 1)
        x = np.linspace(-1, 1, 4)
        assert predict_attendance(m, x, 0.0) == expit(m.natural_logit(x[None, :]))[0]

    def test_zero_weight_model_half_attendance(self):
        m = _model()
        for name in m.store:
            m.store[name] = np.zeros(m.store[name].size)
        assert predict_attendance(m, np.ones(4), 0.0) == 0.5

    @pytest.mark.parametrize("scheme", ["sequence", "mmce1", "mmce2", "mmce3"])
    def test_product_identity(self, scheme):
        m = _perturb(_model(scheme), 2)
        x = np.array([0.3, -0.2, 1.0, 0.5])
        for t in GRID:
            prod = predict_attendance(m, x, t) * predict_orders_pa(m, x, t)
            assert abs(predict_orders(m, x, t) - prod) <= 1e-12

    def test_attendance_zero_fixture(self):
        m = _model("mmce2")
        set_head_bias(m, "natural_attendance", 0, -800.0)
        assert predict_orders(m, np.ones(4), 2.0) == pytest.approx(0.0, abs=1e-300)

    @pytest.mark.parametrize("scheme", ["minimalist", "dualtask"])
    def test_no_attendance_chain(self, scheme):
        m = _perturb(_model(scheme), 3)
        x = np.ones(4)
        assert predict_attendance(m, x, 1.0) == 1.0
        assert predict_orders(m, x, 1.0) == predict_orders_pa(m, x, 1.0)

    def test_orders_pa_at_zero_is_natural(self):
        m = _perturb(_model("mmce2"), 4)
        x = np.ones((1, 4))
        from mmce.heads import softplus

        h = tc.mlp_apply(m.store["shared_trunk"], m.layer_spec, x, activate_last=True).value
        nat = tc.mlp_apply(m.store["natural_orders"], [m.width, 1], h).value[0, 0]
        assert predict_orders_pa(m, x[0], 0.0) == pytest.approx(float(softplus(nat)), rel=1e-15)


class TestMonotone:
    @pytest.mark.parametrize("scheme", SCHEMES)
    @pytest.mark.parametrize("head", HEADS)
    def test_curves_monotone_under_random_weights(self, scheme, head):
        m = _perturb(_model(scheme, head, seed=5), 6, scale=2.0)
        X = np.random.default_rng(7).normal(size=(20, 4))
        curves = predict_curves(m, X, GRID)
        assert monotonicity_score(curves) == 1.0
        assert monotonicity_score(curves, "attendance") == 1.0
        assert monotonicity_score(curves, "orders_pa") == 1.0
        for c in curves:
            assert np.all(c.attendance >= 0) and np.all(c.attendance <= 1)
            assert np.all(c.orders >= 0)


class TestCurves:
    def test_single_level_grid(self):
        c = predict_curve(_model(), np.ones(4), [0.0])
        np.testing.assert_array_equal(c.incremental, [0.0])

    def test_decomposition_sums_back(self):
        m = _perturb(_model("mmce1"), 8)
        c = predict_curve(m, np.ones(4), GRID)
        np.testing.assert_array_equal(c.natural + c.incremental, c.orders)
        assert c.incremental[0] == 0.0
        np.testing.assert_allclose(c.orders, c.attendance * c.orders_pa, rtol=0, atol=1e-12)

    def test_decompose(self):
        m = _perturb(_model(), 9)
        x = np.full(4, 0.2)
        nat0, inc0 = decompose(m, x, 0.0)
        assert inc0 == 0.0
        prev = 0.0
        for t in GRID[1:]:
            nat, inc = decompose(m, x, t)
            assert nat == nat0
            assert inc >= prev
            prev = inc

    def test_batched_matches_single(self):
        m = _perturb(_model("sequence", "log"), 10)
        X = np.random.default_rng(0).normal(size=(3, 4))
        batch = predict_curves(m, X, GRID, ids=[7, 8, 9])
        for i, c in enumerate(batch):
            assert c.id == 7 + i
            np.testing.assert_allclose(c.orders, predict_curve(m, X[i], GRID).orders, rtol=1e-14)


class TestSchemeEquivalence:
    def test_mmce1_matches_mmce2_with_copied_trunk(self):
        m2 = _perturb(_model("mmce2"), 11)
        m1 = _model("mmce1")
        m1.store["attendance_trunk"] = m2.store["shared_trunk"]
        m1.store["orders_trunk"] = m2.store["shared_trunk"]
        for name in head_groups("mmce2"):
            m1.store[name] = m2.store[name]
        x = np.array([[0.5, -1.0, 0.25, 2.0]])
        for t in (0.0, 0.7, 3.3):
            a = m1.predict(x, [t])
            b = m2.predict(x, [t])
            for key in a:
                assert a[key].tobytes() == b[key].tobytes()


class TestIndependentRecomputation:
    def test_orders_pa_from_weights(self):
        """Second implementation of mmce2 orders_pa from the raw parameter vectors."""
        m = _perturb(_model("mmce2", "sshaped", seed=3), 3, scale=0.5)
        x = np.ones(4)
        t = 2.0
        flat = m.store["shared_trunk"]
        h = x
        pos = 0
        for n_in, n_out in zip(m.layer_spec[:-1], m.layer_spec[1:]):
            W = flat[pos : pos + n_in * n_out].reshape(n_in, n_out)
            pos += n_in * n_out
            h = np.tanh(h @ W + flat[pos : pos + n_out])
            pos += n_out

        def proj(name, k):
            v = m.store[name]
            return h @ v[: m.width * k].reshape(m.width, k) + v[m.width * k :]

        nat = proj("natural_orders", 1)[0]
        a_raw, b = proj("incremental_orders_head", 2)
        a = np.log1p(np.exp(a_raw))
        D = m.D_orders
        expected = np.log1p(np.exp(nat)) + D / (1 + np.exp(-(a * t - b))) - D / (1 + np.exp(b))
        assert predict_orders_pa(m, x, t) == pytest.approx(expected, rel=1e-12)
