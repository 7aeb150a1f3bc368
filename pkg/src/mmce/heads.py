"""Monotone response functions of the treatment amount.

Four families are available, each non-decreasing in ``t`` whenever its
sign-constrained parameters are non-negative:

* ``linear``    y = a*t + b
* ``log``       y = a*log(t+1) + b
* ``sshaped``   y = D / (1 + exp(-a*t + b))
* ``isotonic``  y = sum_i w_i * [i <= t],  w_i >= 0

Raw (unconstrained) parameters are mapped through softplus, so any finite
raw vector yields a monotone head.  The scalar functions here are the
reference implementation; :func:`delta_var` is the batched, differentiable
version used inside models.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .errors import ConfigError, DomainError, ValidationError

GRID_STEP = 0.1
MONOTONE_TOL = 1e-12


class HeadKind(str, enum.Enum):
    LINEAR = "linear"
    LOG = "log"
    SSHAPED = "sshaped"
    ISOTONIC = "isotonic"

    @classmethod
    def parse(cls, value) -> "HeadKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown head kind {value!r} (expected one of {names})") from None


@dataclass(frozen=True)
class HeadParams:
    kind: HeadKind
    a: float = 0.0
    b: float = 0.0
    D: float = 1.0
    w: tuple[float, ...] = ()

    @property
    def N(self) -> int:
        return len(self.w) - 1


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


def raw_arity(kind: HeadKind, N: int | None = None) -> int:
    kind = HeadKind.parse(kind)
    if kind is HeadKind.ISOTONIC:
        if N is None or N < 0:
            raise ConfigError("isotonic head needs a non-negative N")
        return N + 1
    return 2


def param_transform(raw, kind, D: float = 1.0) -> HeadParams:
    """Map an unconstrained raw vector to constraint-satisfying parameters.

    ``linear``/``log``/``sshaped`` take ``[a_raw, b]``; ``isotonic`` takes
    ``N + 1`` raw weights.  ``D`` is the fixed ceiling of the s-shaped head.
    """
    kind = HeadKind.parse(kind)
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    if kind is HeadKind.ISOTONIC:
        if raw.size < 1:
            raise ConfigError("isotonic head needs at least one raw weight")
        return HeadParams(kind, w=tuple(float(v) for v in softplus(raw)))
    if raw.size != 2:
        raise ConfigError(f"{kind.value} head takes 2 raw parameters, got {raw.size}")
    if kind is HeadKind.SSHAPED and not D > 0:
        raise ConfigError("s-shaped ceiling D must be positive")
    return HeadParams(kind, a=float(softplus(raw[0])), b=float(raw[1]), D=float(D))


def isotonic_encode(t: int, N: int) -> np.ndarray:
    """Cumulative 0/1 code of length N+1: position i is 1 iff i <= t."""
    if int(t) != t or not 0 <= t <= N:
        raise DomainError(f"isotonic encoding needs an integer 0 <= t <= {N}, got {t}")
    return (np.arange(N + 1) <= t).astype(np.float64)


def isotonic_level(t, N: int | None = None):
    """Nearest integer level (halves round up) used to encode a real t."""
    level = np.floor(np.asarray(t, dtype=np.float64) + 0.5).astype(np.int64)
    if N is not None and np.any(level > N):
        raise DomainError(f"treatment rounds above the isotonic maximum N={N}")
    return level


def head_eval(kind, params: HeadParams, t: float) -> float:
    kind = HeadKind.parse(kind)
    if t < 0:
        raise DomainError(f"treatment must be non-negative, got {t}")
    if kind is HeadKind.LINEAR:
        return params.a * t + params.b
    if kind is HeadKind.LOG:
        return params.a * math.log1p(t) + params.b
    if kind is HeadKind.SSHAPED:
        return params.D / (1.0 + math.exp(-params.a * t + params.b))
    level = int(isotonic_level(t, params.N))
    # correctly rounded so the sum does not depend on accumulation order
    return math.fsum(params.w[: level + 1])


def head_delta(kind, params: HeadParams, t: float) -> float:
    """head_eval(t) - head_eval(0); exactly zero at t = 0."""
    kind = HeadKind.parse(kind)
    if t < 0:
        raise DomainError(f"treatment must be non-negative, got {t}")
    if t == 0:
        return 0.0
    if kind is HeadKind.ISOTONIC:
        level = int(isotonic_level(t, params.N))
        return math.fsum(params.w[1 : level + 1])
    return head_eval(kind, params, t) - head_eval(kind, params, 0.0)


def treatment_grid(t_max: float, step: float = GRID_STEP) -> np.ndarray:
    """0, step, 2*step, ..., t_max, rounded to one decimal."""
    if t_max < 0:
        raise DomainError("t_max must be non-negative")
    k = int(round(t_max / step))
    return np.round(np.arange(k + 1) * step, 10)


def validate_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0 or grid[0] != 0.0:
        raise ValidationError("treatment grid must start at 0")
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("treatment grid must be strictly increasing")
    return grid


def check_monotone(kind, params: HeadParams, grid) -> bool:
    grid = validate_grid(grid)
    ys = np.array([head_eval(kind, params, float(t)) for t in grid])
    return bool(np.all(np.diff(ys) >= -MONOTONE_TOL))


# ---------------------------------------------------------------------------
# batched differentiable versions


def delta_arity(kind, N: int | None = None) -> int:
    """Number of raw shape nodes a delta head consumes."""
    kind = HeadKind.parse(kind)
    if kind in (HeadKind.LINEAR, HeadKind.LOG):
        return 1
    if kind is HeadKind.SSHAPED:
        return 2
    if N is None or N < 1:
        raise ConfigError("isotonic head needs N >= 1")
    return N


def delta_var(kind, raw: tc.Var, t: np.ndarray, D: float = 1.0, N: int | None = None) -> tc.Var:
    """Batched head_delta: ``raw`` is (n, delta_arity), ``t`` is (n,)."""
    kind = HeadKind.parse(kind)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise DomainError("treatment must be non-negative")
    if kind is HeadKind.LINEAR:
        return tc.softplus(raw[:, 0]) * t
    if kind is HeadKind.LOG:
        return tc.softplus(raw[:, 0]) * np.log1p(t)
    if kind is HeadKind.SSHAPED:
        a = tc.softplus(raw[:, 0])
        b = raw[:, 1]
        return D * (tc.sigmoid(a * t - b) - tc.sigmoid(-1.0 * b))
    level = isotonic_level(t, N)
    mask = (np.arange(1, N + 1)[None, :] <= level[:, None]).astype(np.float64)
    return tc.sum_(tc.softplus(raw) * mask, axis=1)


def head_params_from_delta_raw(kind, raw_row, D: float = 1.0) -> HeadParams:
    """HeadParams equivalent to one row of delta-head raw nodes (b/w0 = 0)."""
    kind = HeadKind.parse(kind)
    raw_row = np.asarray(raw_row, dtype=np.float64)
    if kind in (HeadKind.LINEAR, HeadKind.LOG):
        return HeadParams(kind, a=float(softplus(raw_row[0])), b=0.0)
    if kind is HeadKind.SSHAPED:
        return HeadParams(kind, a=float(softplus(raw_row[0])), b=float(raw_row[1]), D=float(D))
    return HeadParams(kind, w=(0.0,) + tuple(float(v) for v in softplus(raw_row)))
