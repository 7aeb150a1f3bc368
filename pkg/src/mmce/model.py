"""Backbone + monotone-head compositions for the six modelling schemes.

Every scheme maps features through a tanh MLP trunk to *parameter nodes*
which drive monotone heads of the treatment.  The treatment never enters
the trunk, so monotonicity in ``t`` holds for any parameter values.

=============  ===========  ==========  =========================================
scheme         attendance   trunks      natural / incremental split
=============  ===========  ==========  =========================================
minimalist     no           shared      no   (one orders head)
dualtask       no           shared      yes  (natural orders + incremental head)
sequence       yes          separate    no
mmce1          yes          separate    yes
mmce2          yes          shared      yes
mmce3          yes          shared      no
=============  ===========  ==========  =========================================

With a split, attendance is ``sigmoid(natural_logit + delta_att(t))`` and
post-attendance orders are ``softplus(natural_raw) + delta_orders(t)``,
where the deltas vanish at ``t = 0``.  Without a split each head carries
its own intercept node in the same group.  Orders are always
``attendance * post_attendance_orders``; schemes without an attendance
chain report attendance as 1.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import tensor as tc
from .errors import ConfigError, DomainError
from .heads import HeadKind, delta_arity, delta_var, treatment_grid, validate_grid

DEFAULT_HIDDEN = (64, 64)
DEFAULT_D_ATTENDANCE = 6.0
PREDICT_CHUNK = 1 << 15


class SchemeKind(str, enum.Enum):
    MINIMALIST = "minimalist"
    DUALTASK = "dualtask"
    SEQUENCE = "sequence"
    MMCE1 = "mmce1"
    MMCE2 = "mmce2"
    MMCE3 = "mmce3"

    @classmethod
    def parse(cls, value) -> "SchemeKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown scheme {value!r} (expected one of {names})") from None

    @property
    def has_attendance(self) -> bool:
        return self not in (SchemeKind.MINIMALIST, SchemeKind.DUALTASK)

    @property
    def split(self) -> bool:
        """Natural and incremental parts live in separate groups."""
        return self in (SchemeKind.DUALTASK, SchemeKind.MMCE1, SchemeKind.MMCE2)

    @property
    def separate_trunks(self) -> bool:
        return self in (SchemeKind.SEQUENCE, SchemeKind.MMCE1)

    @property
    def two_phase(self) -> bool:
        return self.split


def trunk_groups(scheme: SchemeKind) -> list[str]:
    scheme = SchemeKind.parse(scheme)
    if scheme.separate_trunks:
        return ["attendance_trunk", "orders_trunk"]
    return ["shared_trunk"]


def head_groups(scheme: SchemeKind) -> list[str]:
    scheme = SchemeKind.parse(scheme)
    if scheme is SchemeKind.MINIMALIST:
        return ["orders_head"]
    if scheme is SchemeKind.DUALTASK:
        return ["natural_orders", "incremental_orders_head"]
    if scheme.split:
        return [
            "natural_attendance",
            "natural_orders",
            "incremental_attendance_head",
            "incremental_orders_head",
        ]
    return ["attendance_head", "orders_head"]


def natural_groups(scheme) -> list[str]:
    """Groups trained on blank data (everything but incremental heads)."""
    return [g for g in trunk_groups(scheme) + head_groups(scheme) if not g.startswith("incremental_")]


def incremental_groups(scheme) -> list[str]:
    return [g for g in head_groups(scheme) if g.startswith("incremental_")]


@dataclass
class ResponseCurve:
    id: int
    grid: np.ndarray
    attendance: np.ndarray
    orders_pa: np.ndarray
    orders: np.ndarray
    natural: float
    incremental: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.orders


@dataclass
class MmceModel:
    scheme: SchemeKind
    head: HeadKind
    layer_spec: list[int]
    store: tc.ParameterStore
    grid: np.ndarray
    D_orders: float = 10.0
    D_attendance: float = DEFAULT_D_ATTENDANCE
    N: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.layer_spec[0]

    @property
    def width(self) -> int:
        return self.layer_spec[-1]

    def head_width(self, group: str) -> int:
        k = delta_arity(self.head, self.N)
        if group.startswith("natural_"):
            return 1
        if group.startswith("incremental_"):
            return k
        return 1 + k

    # -- differentiable forward -------------------------------------------

    def _trunk(self, params, name, X) -> tc.Var:
        return tc.mlp_apply(params[name], self.layer_spec, X, activate_last=True)

    def _proj(self, params, group, h) -> tc.Var:
        return tc.mlp_apply(params[group], [self.width, self.head_width(group)], h)

    def forward(self, params: dict, X: np.ndarray, t: np.ndarray) -> dict:
        """Graph outputs for a batch: ``logit`` (or None), ``orders_pa``, ``orders``."""
        scheme = self.scheme
        if scheme.separate_trunks:
            h_att = self._trunk(params, "attendance_trunk", X)
            h_ord = self._trunk(params, "orders_trunk", X)
        else:
            h_att = h_ord = self._trunk(params, "shared_trunk", X)

        if scheme.split:
            nat = self._proj(params, "natural_orders", h_ord)[:, 0]
            inc = self._proj(params, "incremental_orders_head", h_ord)
            orders_pa = tc.softplus(nat) + delta_var(self.head, inc, t, self.D_orders, self.N)
        else:
            raw = self._proj(params, "orders_head", h_ord)
            orders_pa = tc.softplus(raw[:, 0]) + delta_var(
                self.head, raw[:, 1:], t, self.D_orders, self.N
            )

        if not scheme.has_attendance:
            return {"logit": None, "orders_pa": orders_pa, "orders": orders_pa}

        if scheme.split:
            nat = self._proj(params, "natural_attendance", h_att)[:, 0]
            inc = self._proj(params, "incremental_attendance_head", h_att)
            logit = nat + delta_var(self.head, inc, t, self.D_attendance, self.N)
        else:
            raw = self._proj(params, "attendance_head", h_att)
            logit = raw[:, 0] + delta_var(self.head, raw[:, 1:], t, self.D_attendance, self.N)
        return {"logit": logit, "orders_pa": orders_pa, "orders": tc.sigmoid(logit) * orders_pa}

    # -- plain prediction ------------------------------------------------------

    def _check_inputs(self, X, t):
        X = np.asarray(X, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ConfigError(f"expected feature width {self.n_features}, got shape {X.shape}")
        t = np.broadcast_to(t, (X.shape[0],)).astype(np.float64)
        if np.any(t < 0):
            raise DomainError("treatment must be non-negative")
        return X, t

    def predict(self, X, t) -> dict[str, np.ndarray]:
        """Batched predictions: attendance, orders_pa, orders (arrays of len n)."""
        X, t = self._check_inputs(X, t)
        params = {name: tc.Var(self.store[name]) for name in self.store}
        parts = []
        # fixed-size chunks bound the memory held by the forward graph
        for start in range(0, max(X.shape[0], 1), PREDICT_CHUNK):
            out = self.forward(params, X[start : start + PREDICT_CHUNK], t[start : start + PREDICT_CHUNK])
            pa = out["orders_pa"].value
            att = np.ones_like(pa) if out["logit"] is None else expit(out["logit"].value)
            parts.append((att, pa, out["orders"].value))
        att, pa, orders = (np.concatenate(col) for col in zip(*parts))
        return {"attendance": att, "orders_pa": pa, "orders": orders}

    def natural_logit(self, X) -> np.ndarray:
        X, t = self._check_inputs(X, 0.0)
        params = {name: tc.Var(self.store[name]) for name in self.store}
        out = self.forward(params, X, t)
        if out["logit"] is None:
            return np.full(X.shape[0], math.inf)
        return out["logit"].value


def build_model(
    scheme,
    head,
    n_features: int,
    hidden=DEFAULT_HIDDEN,
    *,
    grid=None,
    t_max: float = 5.0,
    D_orders: float = 10.0,
    D_attendance: float = DEFAULT_D_ATTENDANCE,
    N: int | None = None,
    seed: int = 0,
) -> MmceModel:
    """Construct a model with seeded fan-in uniform initialization."""
    scheme = SchemeKind.parse(scheme)
    head = HeadKind.parse(head)
    if n_features < 1:
        raise ConfigError("need at least one feature")
    grid = treatment_grid(t_max) if grid is None else validate_grid(grid)
    if N is None:
        N = max(1, int(math.ceil(grid[-1])))
    if not D_orders > 0 or not D_attendance > 0:
        raise ConfigError("s-shaped ceilings must be positive")
    layer_spec = [int(n_features)] + [int(h) for h in hidden]
    model = MmceModel(
        scheme, head, layer_spec, tc.ParameterStore(), np.asarray(grid, dtype=np.float64),
        float(D_orders), float(D_attendance), int(N),
    )
    rng = np.random.default_rng(seed)
    for name in trunk_groups(scheme):
        model.store.add(name, tc.init_mlp(rng, layer_spec))
    for name in head_groups(scheme):
        model.store.add(name, tc.init_mlp(rng, [model.width, model.head_width(name)]))
    return model


def set_head_bias(model: MmceModel, group: str, index: int, value: float) -> None:
    """Overwrite one output bias of a head projection."""
    k = model.head_width(group)
    vals = model.store[group].copy()
    vals[model.width * k + index] = value
    model.store[group] = vals


# ---------------------------------------------------------------------------
# per-individual API


def _row(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(1, -1)


def predict_attendance(model: MmceModel, x, t: float) -> float:
    return float(model.predict(_row(x), [t])["attendance"][0])


def predict_orders_pa(model: MmceModel, x, t: float) -> float:
    return float(model.predict(_row(x), [t])["orders_pa"][0])


def predict_orders(model: MmceModel, x, t: float) -> float:
    return float(model.predict(_row(x), [t])["orders"][0])


def decompose(model: MmceModel, x, t: float) -> tuple[float, float]:
    """(natural, incremental) with natural = orders at t=0."""
    row = _row(x)
    orders = model.predict(np.repeat(row, 2, axis=0), [0.0, t])["orders"]
    return float(orders[0]), float(orders[1] - orders[0])


def predict_curves(model: MmceModel, X, grid=None, ids=None) -> list[ResponseCurve]:
    """Response curves for every row of ``X`` over ``grid``."""
    grid = model.grid if grid is None else validate_grid(grid)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    n, g = X.shape[0], grid.size
    ids = np.arange(n) if ids is None else np.asarray(ids)
    pred = model.predict(np.repeat(X, g, axis=0), np.tile(grid, n))
    att = pred["attendance"].reshape(n, g)
    pa = pred["orders_pa"].reshape(n, g)
    orders = pred["orders"].reshape(n, g)
    curves = []
    for i in range(n):
        natural = orders[i, 0]
        curves.append(
            ResponseCurve(
                int(ids[i]), grid, att[i], pa[i], orders[i], float(natural), orders[i] - natural
            )
        )
    return curves


def predict_curve(model: MmceModel, x, grid=None, id: int = 0) -> ResponseCurve:
    return predict_curves(model, _row(x), grid, [id])[0]
