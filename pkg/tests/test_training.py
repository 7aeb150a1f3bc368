"""Composite loss, phase freezing and the fit driver."""

import math

import numpy as np
import pytest

from mmce import tensor as tc
from mmce.data import Dataset
from mmce.datagen import GenConfig, emit_dataset
from mmce.errors import ConfigError, ValidationError
from mmce.model import build_model, incremental_groups, natural_groups
from mmce.training import (
    TrainConfig,
    composite_loss,
    fit,
    init_model,
    loss_terms,
    train_phase_incremental,
    train_phase_natural,
)


@pytest.fixture(scope="module")
def small():
    data, truth = emit_dataset(GenConfig(n_riders=1200, n_features=4, bias_strength=0.5, seed=5))
    return data, truth


def _cfg(**kw):
    base = dict(hidden=(8,), epochs=3, batch_size=64, lr=3e-3)
    base.update(kw)
    return TrainConfig(**base)


def _snapshot(model, names):
    return {n: model.store[n].tobytes() for n in names}


class TestCompositeLoss:
    def _tiny(self):
        """1 feature -> 1 hidden unit, mmce2, linear heads, hand-set weights."""
        m = build_model("mmce2", "linear", 1, (1,), t_max=2.0)
        m.store["shared_trunk"] = [0.5, 0.1]  # h = tanh(0.5 x + 0.1)
        m.store["natural_attendance"] = [0.8, -0.2]
        m.store["natural_orders"] = [1.5, 0.3]
        m.store["incremental_attendance_head"] = [0.4, 0.0]
        m.store["incremental_orders_head"] = [-0.6, 0.2]
        return m

    def test_hand_computed(self):
        m = self._tiny()
        x, t, att, orders = 2.0, 1.5, 1.0, 4.0
        sp = lambda z: math.log1p(math.exp(z))
        h = math.tanh(0.5 * x + 0.1)
        logit = (0.8 * h - 0.2) + sp(0.4 * h + 0.0) * t
        pa = sp(1.5 * h + 0.3) + sp(-0.6 * h + 0.2) * t
        p = 1.0 / (1.0 + math.exp(-logit))
        bce = -(att * math.log(p) + (1 - att) * math.log(1 - p))
        mse = (p * pa - orders) ** 2
        batch = Dataset([0], [[x]], [t], [att], [orders], [False])
        assert composite_loss(m, batch, 2.0, 0.5) == pytest.approx(2.0 * bce + 0.5 * mse, rel=1e-13)

    def test_pure_cross_entropy(self):
        m = self._tiny()
        batch = Dataset([0, 1], [[0.3], [-1.0]], [0.0, 1.0], [0.0, 1.0], [0.0, 2.5], [True, False])
        params = {n: tc.Var(m.store[n]) for n in m.store}
        _, lp, _ = loss_terms(m, params, batch, 1.0, 0.0)
        assert composite_loss(m, batch, 1.0, 0.0) == float(lp.value)

    def test_perfect_orders_fixture(self):
        m = self._tiny()
        X = np.array([[0.1], [0.9]])
        t = np.array([0.5, 1.0])
        orders = m.predict(X, t)["orders"]
        batch = Dataset([0, 1], X, t, [1.0, 1.0], orders, [False, False])
        params = {n: tc.Var(m.store[n]) for n in m.store}
        _, _, lo = loss_terms(m, params, batch, 1.0, 1.0)
        assert float(lo.value) == 0.0

    def test_empty_batch(self):
        m = self._tiny()
        with pytest.raises(ValidationError):
            composite_loss(m, Dataset([], np.zeros((0, 1)), [], [], [], []))

    def test_whole_space_mse(self, small):
        data, _ = small
        cfg = _cfg()
        m = init_model(data, cfg)
        batch = data.subset(np.arange(200))
        attended = batch.subset(batch.attendance > 0)
        assert len(attended) < len(batch)
        params = {n: tc.Var(m.store[n]) for n in m.store}
        _, _, lo_all = loss_terms(m, params, batch, 1.0, 1.0)
        _, _, lo_att = loss_terms(m, params, attended, 1.0, 1.0)
        assert float(lo_all.value) != float(lo_att.value)

    def test_gradient_fidelity(self, small):
        data, _ = small
        m = build_model("mmce2", "sshaped", data.n_features, (3,), t_max=5.0, seed=1)
        batch = data.subset(np.arange(6))
        err = tc.grad_check(m.store, lambda p: loss_terms(m, p, batch, 1.0, 1.0)[0])
        assert err < 1e-4


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(loss_a=0.0), dict(loss_b=-1.0), dict(epochs=0),
                                    dict(batch_size=0), dict(lr=0.0), dict(scheme="bogus"),
                                    dict(head="cubic")])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw).validate()


class TestPhases:
    def test_natural_phase_freezes_incremental(self, small):
        data, _ = small
        cfg = _cfg()
        m = init_model(data, cfg)
        inc = incremental_groups(m.scheme)
        before = _snapshot(m, inc)
        nat_before = _snapshot(m, natural_groups(m.scheme))
        hist = train_phase_natural(m, data.blank_part(), cfg, log=lambda s: None)
        assert _snapshot(m, inc) == before
        assert _snapshot(m, natural_groups(m.scheme)) != nat_before
        assert hist[-1]["loss"] < hist[0]["loss"]
        assert all(m.store.is_trainable(n) for n in m.store)

    def test_natural_phase_rejects_treated(self, small):
        data, _ = small
        m = init_model(data, _cfg())
        with pytest.raises(ValidationError):
            train_phase_natural(m, data, _cfg(), log=lambda s: None)

    def test_empty_blank_set_leaves_model(self, small):
        data, _ = small
        m = init_model(data, _cfg())
        before = _snapshot(m, m.store.names())
        with pytest.raises(ValidationError):
            train_phase_natural(m, data.subset(np.zeros(len(data), dtype=bool)), _cfg(), log=lambda s: None)
        assert _snapshot(m, m.store.names()) == before

    def test_incremental_phase_freezes_natural(self, small):
        data, _ = small
        cfg = _cfg()
        m = init_model(data, cfg)
        train_phase_natural(m, data.blank_part(), cfg, log=lambda s: None)
        nat = natural_groups(m.scheme)
        before = _snapshot(m, nat)
        t0_before = m.predict(data.X, 0.0)["orders"].tobytes()
        hist = train_phase_incremental(m, data.treated_part(), cfg, log=lambda s: None)
        assert _snapshot(m, nat) == before
        assert m.predict(data.X, 0.0)["orders"].tobytes() == t0_before
        assert hist[-1]["loss"] < hist[0]["loss"]

    def test_incremental_phase_rejects_blank(self, small):
        data, _ = small
        m = init_model(data, _cfg())
        with pytest.raises(ValidationError):
            train_phase_incremental(m, data, _cfg(), log=lambda s: None)


class TestFit:
    def test_deterministic(self, small):
        data, _ = small
        a = fit(data, _cfg(epochs=2), log=lambda s: None)
        b = fit(data, _cfg(epochs=2), log=lambda s: None)
        for name in a.store:
            assert a.store[name].tobytes() == b.store[name].tobytes()

    def test_two_phase_log_lines(self, small):
        data, _ = small
        lines = []
        fit(data, _cfg(epochs=2, scheme="mmce1"), log=lines.append)
        assert [l.split()[0] for l in lines] == ["phase=natural"] * 2 + ["phase=incremental"] * 2
        assert lines[0].startswith("phase=natural epoch=1 loss=")
        assert "loss_p=" in lines[0] and "loss_o=" in lines[0]

    @pytest.mark.parametrize("scheme", ["mmce3", "minimalist", "sequence"])
    def test_single_phase(self, small, scheme):
        data, _ = small
        lines = []
        fit(data, _cfg(epochs=1, scheme=scheme), log=lines.append)
        assert len(lines) == 1 and lines[0].startswith("phase=joint epoch=1")

    def test_missing_group(self, small):
        data, _ = small
        with pytest.raises(ValidationError):
            fit(data.blank_part(), _cfg(scheme="mmce2"), log=lambda s: None)
        with pytest.raises(ValidationError):
            fit(data.treated_part(), _cfg(scheme="dualtask"), log=lambda s: None)

    def test_history(self, small):
        data, _ = small
        hist = []
        fit(data, _cfg(epochs=2), log=lambda s: None, history=hist)
        assert [h["phase"] for h in hist] == ["natural", "natural", "incremental", "incremental"]
