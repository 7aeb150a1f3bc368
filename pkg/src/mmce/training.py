"""Composite loss and the blank-then-treated training procedure."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from . import tensor as tc
from .data import Dataset
from .errors import ConfigError, NumericError, ValidationError
from .heads import HeadKind, inv_softplus, treatment_grid
from .model import (
    DEFAULT_D_ATTENDANCE,
    MmceModel,
    SchemeKind,
    build_model,
    head_groups,
    incremental_groups,
    natural_groups,
    set_head_bias,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    scheme: str = "mmce2"
    head: str = "sshaped"
    hidden: tuple[int, ...] = (64, 64)
    loss_a: float = 1.0
    loss_b: float = 1.0
    epochs: int = 20
    batch_size: int = 256
    lr: float = 1e-3
    seed: int = 0
    D_attendance: float = DEFAULT_D_ATTENDANCE

    def validate(self) -> "TrainConfig":
        SchemeKind.parse(self.scheme)
        HeadKind.parse(self.head)
        if not (self.loss_a > 0 and self.loss_b > 0):
            raise ConfigError("loss weights a and b must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        return self

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def loss_terms(model: MmceModel, params: dict, batch: Dataset, a: float, b: float):
    """Graph nodes (total, loss_p or None, loss_o) for one batch."""
    if len(batch) == 0:
        raise ValidationError("loss needs a non-empty batch")
    out = model.forward(params, batch.X, batch.t)
    resid = out["orders"] - batch.orders
    loss_o = tc.mean(tc.square(resid))
    if out["logit"] is None:
        return b * loss_o, None, loss_o
    z = out["logit"]
    # binary cross-entropy on the logit scale
    loss_p = tc.mean(tc.softplus(z) - z * batch.attendance)
    return a * loss_p + b * loss_o, loss_p, loss_o


def composite_loss(model: MmceModel, batch: Dataset, a: float = 1.0, b: float = 1.0) -> float:
    params = {name: tc.Var(model.store[name]) for name in model.store}
    total, _, _ = loss_terms(model, params, batch, a, b)
    value = float(total.value)
    if not math.isfinite(value):
        raise NumericError("composite loss is not finite")
    return value


def _run_phase(model, data, cfg, phase, trainable, log) -> list[dict]:
    store = model.store
    saved = {name: store.is_trainable(name) for name in store}
    for name in store:
        store.set_trainable(name, name in trainable)
    state = tc.OptimState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, {"natural": 1, "incremental": 2, "joint": 3}[phase]])
    n = len(data)
    history = []
    try:
        for epoch in range(1, cfg.epochs + 1):
            perm = rng.permutation(n)
            sums = np.zeros(3)
            for start in range(0, n, cfg.batch_size):
                batch = data.subset(perm[start : start + cfg.batch_size])
                holder = {}

                def fn(params, batch=batch):
                    total, lp, lo = loss_terms(model, params, batch, cfg.loss_a, cfg.loss_b)
                    holder["p"] = 0.0 if lp is None else float(lp.value)
                    holder["o"] = float(lo.value)
                    return total

                tape = tc.record(store, fn)
                if not math.isfinite(float(tape.loss.value)):
                    raise NumericError(f"loss became non-finite in phase {phase} epoch {epoch}")
                grads = tc.backward(store, tape)
                tc.optimizer_step(store, grads, state)
                sums += len(batch) * np.array([float(tape.loss.value), holder["p"], holder["o"]])
            loss, lp, lo = sums / n
            history.append({"phase": phase, "epoch": epoch, "loss": loss, "loss_p": lp, "loss_o": lo})
            log(f"phase={phase} epoch={epoch} loss={loss:.6g} loss_p={lp:.6g} loss_o={lo:.6g}")
    finally:
        for name, flag in saved.items():
            store.set_trainable(name, flag)
    return history


def _default_log(line: str) -> None:
    logger.info(line)


def train_phase_natural(model: MmceModel, blank_data: Dataset, cfg: TrainConfig,
                        log: Callable[[str], None] = _default_log) -> list[dict]:
    """Fit trunk and natural heads on blank rows; incremental heads stay frozen."""
    if len(blank_data) == 0:
        raise ValidationError("natural phase needs blank-group data")
    if not np.all(blank_data.blank):
        raise ValidationError("natural phase accepts blank-group rows only")
    return _run_phase(model, blank_data, cfg, "natural", set(natural_groups(model.scheme)), log)


def train_phase_incremental(model: MmceModel, treated_data: Dataset, cfg: TrainConfig,
                            log: Callable[[str], None] = _default_log) -> list[dict]:
    """Fit incremental heads on treated rows; every natural group stays frozen."""
    if len(treated_data) == 0:
        raise ValidationError("incremental phase needs treated-group data")
    if np.any(treated_data.blank):
        raise ValidationError("incremental phase accepts treated-group rows only")
    return _run_phase(model, treated_data, cfg, "incremental",
                      set(incremental_groups(model.scheme)), log)


def train_joint(model: MmceModel, data: Dataset, cfg: TrainConfig,
                log: Callable[[str], None] = _default_log) -> list[dict]:
    if len(data) == 0:
        raise ValidationError("training needs data")
    return _run_phase(model, data, cfg, "joint", set(model.store.names()), log)


def init_model(data: Dataset, cfg: TrainConfig) -> MmceModel:
    """Build a model sized from the data, with label-informed output biases."""
    cfg.validate()
    scheme = SchemeKind.parse(cfg.scheme)
    t_max = max(float(np.max(data.t)), 0.1)
    positive = data.orders[data.orders > 0]
    D_orders = float(np.percentile(positive if positive.size else [1.0], 99))
    model = build_model(
        scheme, cfg.head, data.n_features, cfg.hidden, grid=treatment_grid(t_max),
        D_orders=D_orders, D_attendance=cfg.D_attendance, seed=cfg.seed,
    )
    ref = data.blank_part() if scheme.two_phase and np.any(data.blank) else data
    att_rate = float(np.clip(ref.attendance.mean(), 1e-3, 1 - 1e-3))
    attended = ref.orders[ref.attendance > 0]
    pa_mean = float(attended.mean()) if attended.size else 1.0
    if not scheme.has_attendance:
        pa_mean = float(ref.orders.mean()) or 1.0
    groups = head_groups(scheme)
    if "natural_orders" in groups:
        set_head_bias(model, "natural_orders", 0, float(inv_softplus(pa_mean)))
    if "natural_attendance" in groups:
        set_head_bias(model, "natural_attendance", 0, math.log(att_rate / (1 - att_rate)))
    if "orders_head" in groups:
        set_head_bias(model, "orders_head", 0, float(inv_softplus(pa_mean)))
    if "attendance_head" in groups:
        set_head_bias(model, "attendance_head", 0, math.log(att_rate / (1 - att_rate)))
    return model


def fit(data: Dataset, cfg: TrainConfig, log: Callable[[str], None] = _default_log,
        history: list | None = None) -> MmceModel:
    """Train a fresh model; two-phase for split schemes, single-phase otherwise."""
    cfg.validate()
    data.validate()
    scheme = SchemeKind.parse(cfg.scheme)
    if scheme.two_phase:
        blank, treated = data.blank_part(), data.treated_part()
        if len(blank) == 0 or len(treated) == 0:
            raise ValidationError(f"scheme {scheme.value} needs both blank and treated rows")
    elif len(data) == 0:
        raise ValidationError("training needs data")
    model = init_model(data, cfg)
    hist = []
    if scheme.two_phase:
        hist += train_phase_natural(model, blank, cfg, log)
        hist += train_phase_incremental(model, treated, cfg, log)
    else:
        hist += train_joint(model, data, cfg, log)
    if history is not None:
        history.extend(hist)
    return model
