"""Synthetic rider populations with confounded incentive assignment.

Each rider has a latent ability ``u`` in [0, 1].  Ground-truth responses:

    attendance(t)   = sigmoid(0.5 + 0.8 u + 0.14 (1 - 0.4 u) t)
    orders_pa(t)    = 1.5 + 20 u + 6 (1 - 0.5 u) log(1 + 1.1 t)
    orders(t)       = attendance(t) * orders_pa(t)

so able riders have higher natural orders and smaller, concave increments.
The historical policy hands larger incentives to weaker riders with weight
``bias_strength``, which makes naive observational curves slope downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from .data import Dataset, GroundTruth, write_dataset, write_truth
from .errors import ConfigError, DomainError
from .heads import GRID_STEP, treatment_grid

ATT_BASE, ATT_ABILITY = 0.5, 0.8
ATT_SLOPE, ATT_SLOPE_DECAY = 0.14, 0.4
PA_BASE, PA_ABILITY = 1.5, 20.0
PA_GAIN, PA_GAIN_DECAY = 6.0, 0.5
PA_RATE = 1.1

_FEATURE_MAPS = (
    lambda u: u,
    lambda u: u * u,
    np.sqrt,
    lambda u: np.sin(0.5 * np.pi * u),
)


@dataclass
class GenConfig:
    n_riders: int = 10000
    n_features: int = 8
    bias_strength: float = 0.9
    blank_fraction: float = 0.2
    t_max: float = 5.0
    noise: float = 0.1
    outcome_noise: float = 0.5
    long_tail: bool = True
    seed: int = 0

    def validate(self) -> "GenConfig":
        if self.n_riders < 0:
            raise ConfigError("n_riders must be >= 0")
        if self.n_features < 1:
            raise ConfigError("n_features must be >= 1")
        if not 0.0 <= self.bias_strength <= 1.0:
            raise ConfigError("bias_strength must lie in [0, 1]")
        if not 0.0 < self.blank_fraction < 1.0:
            raise ConfigError("blank_fraction must lie in (0, 1)")
        if not self.t_max >= GRID_STEP or abs(round(self.t_max / GRID_STEP) * GRID_STEP - self.t_max) > 1e-9:
            raise ConfigError("t_max must be a positive multiple of 0.1")
        if self.noise < 0 or self.outcome_noise < 0:
            raise ConfigError("noise scales must be non-negative")
        return self

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class Rider:
    id: int
    ability: float
    x: tuple[float, ...]
    att_intercept: float
    att_slope: float
    pa_base: float
    pa_gain: float
    t_max: float
    blank: bool = False


def _make_riders(ids, ability, X, blank, t_max) -> list[Rider]:
    a0, a1, b0, c = _truth_params(ability)
    return [
        Rider(int(i), float(u), tuple(float(v) for v in x), float(p), float(q), float(r), float(s),
              float(t_max), bool(bl))
        for i, u, x, p, q, r, s, bl in zip(ids, ability, X, a0, a1, b0, c, blank)
    ]


def _truth_params(u):
    u = np.asarray(u, dtype=np.float64)
    return (ATT_BASE + ATT_ABILITY * u, ATT_SLOPE * (1.0 - ATT_SLOPE_DECAY * u),
            PA_BASE + PA_ABILITY * u, PA_GAIN * (1.0 - PA_GAIN_DECAY * u))


def true_curves(ability, t):
    """Vectorized (attendance, orders_pa, orders) for abilities x treatments."""
    a0, a1, b0, c = _truth_params(ability)
    t = np.asarray(t, dtype=np.float64)
    att = expit(a0 + a1 * t)
    pa = b0 + c * np.log1p(PA_RATE * t)
    return att, pa, att * pa


def gen_population(cfg: GenConfig) -> list[Rider]:
    """Riders with features and ground-truth curves, deterministic per seed."""
    ids, ability, X, blank = _population_arrays(cfg.validate())
    return _make_riders(ids, ability, X, blank, cfg.t_max)


def _population_arrays(cfg: GenConfig):
    rng = np.random.default_rng([cfg.seed, 0])
    n, d = cfg.n_riders, cfg.n_features
    ability = rng.uniform(0.0, 1.0, size=n)
    n_linked = max(1, math.ceil(d / 2))
    X = np.empty((n, d))
    for j in range(d):
        if j < n_linked:
            X[:, j] = _FEATURE_MAPS[j % len(_FEATURE_MAPS)](ability) + cfg.noise * rng.standard_normal(n)
        else:
            X[:, j] = rng.standard_normal(n)
    n_blank = int(round(cfg.blank_fraction * n))
    blank = np.zeros(n, dtype=bool)
    blank[rng.permutation(n)[:n_blank]] = True
    return np.arange(n, dtype=np.int64), ability, X, blank


def true_orders(rider: Rider, t: float) -> float:
    if not 0.0 <= t <= rider.t_max + 1e-12:
        raise DomainError(f"treatment {t} outside [0, {rider.t_max}]")
    return float(true_curves(rider.ability, t)[2])


def policy_treatments(ability, blank, cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """Historical allocation: inverse-ability with weight beta, uniform otherwise."""
    ability = np.asarray(ability, dtype=np.float64)
    n = ability.size
    beta = cfg.bias_strength
    uniform = rng.uniform(0.0, cfg.t_max, size=n)
    jitter = rng.standard_normal(n)
    raw = beta * cfg.t_max * (1.0 - ability) + (1.0 - beta) * uniform + cfg.noise * jitter
    t = np.clip(np.round(raw / GRID_STEP) * GRID_STEP, GRID_STEP, cfg.t_max)
    t = np.round(t, 10)
    return np.where(np.asarray(blank, dtype=bool), 0.0, t)


def assign_treatment(rider: Rider, cfg: GenConfig, rng: np.random.Generator) -> float:
    return float(policy_treatments([rider.ability], [rider.blank], cfg, rng)[0])


def sample_outcomes(ability, t, cfg: GenConfig, rng: np.random.Generator):
    """Draw (attendance, orders) for abilities at treatments ``t``."""
    att_p, pa, _ = true_curves(ability, t)
    return draw_outcomes(att_p, pa, cfg, rng)


def draw_outcomes(att_p, pa, cfg: GenConfig, rng: np.random.Generator):
    """Bernoulli attendance, then a noisy amount around ``pa`` for attendees."""
    att_p = np.asarray(att_p, dtype=np.float64)
    n = att_p.size
    attended = rng.uniform(size=n) < att_p
    eps = rng.standard_normal(n)
    s = cfg.outcome_noise
    if cfg.long_tail:
        # mean-preserving lognormal
        amount = pa * np.exp(s * eps - 0.5 * s * s)
    else:
        amount = np.maximum(pa + s * eps, 0.0)
    orders = np.where(attended, amount, 0.0)
    return attended.astype(np.float64), orders


def sample_outcome(rider: Rider, t: float, rng: np.random.Generator, cfg: GenConfig | None = None):
    cfg = cfg or GenConfig()
    att, orders = sample_outcomes([rider.ability], [t], cfg, rng)
    return int(att[0]), float(orders[0])


def ground_truth(ids, ability, t_max: float) -> GroundTruth:
    grid = treatment_grid(t_max)
    att, pa, orders = true_curves(np.asarray(ability)[:, None], grid[None, :])
    return GroundTruth(np.asarray(ids, dtype=np.int64), np.asarray(ability, dtype=np.float64),
                       grid, att, pa, orders)


def emit_dataset(cfg: GenConfig, data_path=None, truth_path=None) -> tuple[Dataset, GroundTruth]:
    """Generate one observational dataset plus its ground-truth sidecar."""
    cfg.validate()
    ids, ability, X, blank = _population_arrays(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    t = policy_treatments(ability, blank, cfg, rng)
    attendance, orders = sample_outcomes(ability, t, cfg, rng)
    data = Dataset(ids, X, t, attendance, orders, blank).validate()
    truth = ground_truth(ids, ability, cfg.t_max)
    if data_path is not None:
        write_dataset(data, data_path)
    if truth_path is not None:
        write_truth(truth, truth_path)
    return data, truth


def observational_slope(data: Dataset) -> float:
    """OLS slope of observed orders on treatment over all rows."""
    if len(data) < 2 or np.ptp(data.t) == 0:
        return 0.0
    t = data.t - data.t.mean()
    return float(np.dot(t, data.orders - data.orders.mean()) / np.dot(t, t))
