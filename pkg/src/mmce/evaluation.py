"""Prior-based scores, the uplift Gini and observational-data eligibility.

Without randomized data, response models are judged against business
priors: curves rise with the incentive, weaker riders gain more from it,
and the return per unit of incentive is highest at the smallest amount.
Observational data may additionally serve as an evaluation set once it
shows treatment support across feature bins and its own macro-level
curve passes the monotonicity prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, GroundTruth
from .errors import ValidationError
from .heads import MONOTONE_TOL
from .model import MmceModel, ResponseCurve, predict_curves

DEFAULT_STRATA = 9
DEFAULT_MONO_THRESHOLD = 0.9


def _curve_matrix(curves, attr: str = "orders") -> tuple[np.ndarray, np.ndarray]:
    """Stack curves into (n, g) values plus their common grid."""
    if isinstance(curves, np.ndarray):
        values = np.atleast_2d(np.asarray(curves, dtype=np.float64))
        return values, np.arange(values.shape[1], dtype=np.float64)
    curves = list(curves)
    if not curves:
        raise ValidationError("no curves given")
    grid = np.asarray(curves[0].grid)
    for c in curves[1:]:
        if c.grid.shape != grid.shape or np.any(c.grid != grid):
            raise ValidationError(f"curve {c.id} is on a different grid")
    return np.stack([np.asarray(getattr(c, attr), dtype=np.float64) for c in curves]), grid


def monotonicity_score(curves, attr: str = "orders") -> float:
    """Mean over curves of (1 + #ordered adjacent pairs) / #levels."""
    values, _ = _curve_matrix(curves, attr)
    g = values.shape[1]
    if g < 2:
        raise ValidationError("monotonicity needs at least two treatment levels")
    ordered = np.sum(values[:, 1:] >= values[:, :-1] - MONOTONE_TOL, axis=1)
    return float(np.mean((1 + ordered) / g))


@dataclass
class Stratification:
    """Per-stratum mean curves, strata ordered from low to high ability."""

    grid: np.ndarray
    total: np.ndarray  # (K, g)
    natural: np.ndarray  # (K,)
    incremental: np.ndarray  # (K, g)
    sizes: np.ndarray = field(default=None)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.total = np.atleast_2d(np.asarray(self.total, dtype=np.float64))
        self.natural = np.asarray(self.natural, dtype=np.float64).reshape(-1)
        self.incremental = np.atleast_2d(np.asarray(self.incremental, dtype=np.float64))
        if self.sizes is None:
            self.sizes = np.ones(self.total.shape[0], dtype=np.int64)
        self.sizes = np.asarray(self.sizes, dtype=np.int64)

    @property
    def K(self) -> int:
        return self.total.shape[0]

    @classmethod
    def from_totals(cls, grid, totals) -> "Stratification":
        totals = np.atleast_2d(np.asarray(totals, dtype=np.float64))
        return cls(grid, totals, totals[:, 0], totals - totals[:, :1])


def stratify(curves, ability_score, K: int = DEFAULT_STRATA) -> Stratification:
    """Split curves into K equal-size strata by ascending ability score."""
    values, grid = _curve_matrix(curves)
    score = np.asarray(ability_score, dtype=np.float64).reshape(-1)
    if score.size != values.shape[0]:
        raise ValidationError("one ability score per curve is required")
    if K < 1 or K > values.shape[0]:
        raise ValidationError(f"cannot form {K} non-empty strata from {values.shape[0]} curves")
    chunks = np.array_split(np.argsort(score, kind="stable"), K)
    total = np.stack([values[c].mean(axis=0) for c in chunks])
    return Stratification(grid, total, total[:, 0], total - total[:, :1],
                          np.array([c.size for c in chunks]))


def _check_strata(strat: Stratification):
    if strat.K < 2:
        raise ValidationError("need at least two strata")
    if np.any(strat.sizes <= 0):
        raise ValidationError("empty stratum")


def stratification_score(strat: Stratification) -> float:
    """Share of strata whose increment curve dominates every abler stratum."""
    _check_strata(strat)
    pos = strat.grid > 0
    inc = strat.incremental[:, pos]
    hits = 0
    for s in range(strat.K):
        higher = inc[s + 1 :]
        if higher.size == 0 or np.all(inc[s] >= higher - MONOTONE_TOL):
            hits += 1
    return hits / strat.K


def marginal_effect_score(strat: Stratification) -> float:
    """Share of strata whose incremental ROI peaks at the lowest positive level."""
    _check_strata(strat)
    pos = strat.grid > 0
    if pos.sum() < 2:
        raise ValidationError("marginal effect needs at least two positive treatment levels")
    roi = strat.incremental[:, pos] / strat.grid[pos]
    return float(np.mean(np.argmax(roi, axis=1) == 0))


# ---------------------------------------------------------------------------
# Gini


def gain_curve_gini(scores, gains) -> float:
    """2 * area under the normalized cumulative-gain curve - 1.

    Individuals are ranked by descending score; tied scores form one block
    so the curve is linear across them.  The result is clipped to [-1, 1]
    (mixed-sign gains can push a noisy curve slightly outside).
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    gains = np.asarray(gains, dtype=np.float64).reshape(-1)
    if scores.size != gains.size or scores.size == 0:
        raise ValidationError("scores and gains must be non-empty and aligned")
    total = gains.sum()
    if total == 0:
        raise ValidationError("total gain is zero; the gain curve cannot be normalized")
    order = np.argsort(-scores, kind="stable")
    s, gsum = scores[order], np.cumsum(gains[order])
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    x = np.concatenate([[0.0], (ends + 1) / scores.size])
    y = np.concatenate([[0.0], gsum[ends] / total])
    area = float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))
    return float(np.clip(2.0 * area - 1.0, -1.0, 1.0))


def observed_gains(holdout: Dataset, strata_score, n_strata: int = 10) -> np.ndarray:
    """Treated orders minus the blank mean of the same stratum."""
    strata_score = np.asarray(strata_score, dtype=np.float64).reshape(-1)
    if strata_score.size != len(holdout):
        raise ValidationError("one stratum score per holdout row is required")
    blank = holdout.blank
    if not blank.any():
        raise ValidationError("holdout has no blank rows to form a baseline")
    if blank.all():
        raise ValidationError("holdout has no treated rows")
    edges = np.quantile(strata_score[blank], np.linspace(0, 1, n_strata + 1)[1:-1])
    stratum = np.searchsorted(edges, strata_score, side="right")
    overall = holdout.orders[blank].mean()
    baseline = np.array([
        holdout.orders[blank & (stratum == k)].mean() if np.any(blank & (stratum == k)) else overall
        for k in range(n_strata)
    ])
    treated = ~blank
    return holdout.orders[treated] - baseline[stratum[treated]]


def predicted_increments(model: MmceModel, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """(natural, incremental at observed t) for every row."""
    n = len(data)
    X2 = np.concatenate([data.X, data.X])
    t2 = np.concatenate([np.zeros(n), data.t])
    orders = model.predict(X2, t2)["orders"]
    return orders[:n], orders[n:] - orders[:n]


def gini_score(model: MmceModel, holdout: Dataset, strata_score=None, n_strata: int = 10) -> float:
    """Gini of predicted increments against blank-baselined observed gains.

    ``strata_score`` matches treated rows to blank rows; it defaults to the
    model's own natural-orders prediction.
    """
    natural, inc = predicted_increments(model, holdout)
    return observed_gini(inc, holdout, natural if strata_score is None else strata_score, n_strata)


def observed_gini(pred_increments, holdout: Dataset, strata_score, n_strata: int = 10) -> float:
    """Gini of any per-row increment prediction (only treated rows are ranked)."""
    pred_increments = np.asarray(pred_increments, dtype=np.float64).reshape(-1)
    if pred_increments.size != len(holdout):
        raise ValidationError("one predicted increment per holdout row is required")
    gains = observed_gains(holdout, strata_score, n_strata)
    return gain_curve_gini(pred_increments[~holdout.blank], gains)


# ---------------------------------------------------------------------------
# causal-assumption checks


@dataclass
class BinSupport:
    feature: int
    bin: int
    lo: float
    hi: float
    n: int
    levels: tuple[int, ...]

    @property
    def flagged(self) -> bool:
        return len(self.levels) < 2


@dataclass
class PositivityReport:
    n_bins: int
    bins: list[BinSupport]

    def flagged(self, features=None) -> list[BinSupport]:
        return [b for b in self.bins if b.flagged and (features is None or b.feature in features)]

    def flagged_features(self) -> list[int]:
        return sorted({b.feature for b in self.flagged()})


def treatment_deciles(t, t_max: float) -> np.ndarray:
    """Equal-width decile (0..9) of each positive treatment within (0, t_max]."""
    t = np.asarray(t, dtype=np.float64)
    if t_max <= 0:
        return np.zeros(t.shape, dtype=np.int64)
    return np.clip(np.ceil(t / t_max * 10.0 - 1e-9).astype(np.int64) - 1, 0, 9)


def positivity_check(data: Dataset, n_bins: int = 10) -> PositivityReport:
    """Treatment support of treated rows inside quantile bins of each feature."""
    if n_bins < 2:
        raise ValidationError("n_bins must be >= 2")
    treated = ~data.blank
    t = data.t[treated]
    levels = treatment_deciles(t, float(t.max()) if t.size else 0.0)
    bins = []
    for j in range(data.n_features):
        col = data.X[:, j]
        edges = np.quantile(col, np.linspace(0, 1, n_bins + 1)) if col.size else np.zeros(n_bins + 1)
        idx = np.clip(np.searchsorted(edges[1:-1], data.X[treated, j], side="right"), 0, n_bins - 1)
        for k in range(n_bins):
            in_bin = idx == k
            bins.append(BinSupport(j, k, float(edges[k]), float(edges[k + 1]), int(in_bin.sum()),
                                   tuple(int(v) for v in np.unique(levels[in_bin]))))
    return PositivityReport(n_bins, bins)


def macro_curve(data: Dataset, n_levels: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Mean observed orders for the blank group and each treated decile.

    Returns (mean treatment, mean orders) per level, ordered by treatment.
    """
    ts, ys = [], []
    if data.blank.any():
        ts.append(0.0)
        ys.append(float(data.orders[data.blank].mean()))
    treated = data.treated_part()
    if len(treated):
        order = np.argsort(treated.t, kind="stable")
        for chunk in np.array_split(order, min(n_levels, len(treated))):
            ts.append(float(treated.t[chunk].mean()))
            ys.append(float(treated.orders[chunk].mean()))
    return np.array(ts), np.array(ys)


@dataclass
class Eligibility:
    eligible: bool
    reasons: list[str]
    macro_score: float
    flagged_bins: int


def eligibility_check(
    data: Dataset,
    important_features=None,
    threshold: float = DEFAULT_MONO_THRESHOLD,
    sutva: bool = True,
    n_bins: int = 10,
) -> Eligibility:
    """Decide whether observational data may stand in as an evaluation set."""
    if len(data) == 0:
        raise ValidationError("eligibility needs data")
    reasons = []
    features = list(range(data.n_features)) if important_features is None else list(important_features)
    flagged = positivity_check(data, n_bins).flagged(set(features))
    if flagged:
        feats = sorted({b.feature for b in flagged})
        reasons.append(f"positivity: {len(flagged)} degenerate bins on features {feats}")
    _, ys = macro_curve(data)
    macro = monotonicity_score(ys.reshape(1, -1)) if ys.size >= 2 else 0.0
    if macro < threshold:
        reasons.append(f"macro monotonicity {macro:.3f} below {threshold}")
    if not sutva:
        reasons.append("SUTVA not affirmed")
    return Eligibility(not reasons, reasons, macro, len(flagged))


# ---------------------------------------------------------------------------
# full report


@dataclass
class EvalReport:
    monotonicity: float
    stratification: float
    marginal_effect: float
    gini: float | None
    eligibility: Eligibility
    positivity: PositivityReport
    curve_mae: float | None = None
    strata: Stratification | None = None

    def to_text(self) -> str:
        lines = [
            f"monotonicity={self.monotonicity!r}",
            f"stratification={self.stratification!r}",
            f"marginal_effect={self.marginal_effect!r}",
            f"gini={'nan' if self.gini is None else repr(self.gini)}",
            f"eligible={str(self.eligibility.eligible).lower()}",
            f"macro_monotonicity={self.eligibility.macro_score!r}",
            f"positivity_flagged_bins={self.eligibility.flagged_bins}",
            f"positivity_flagged_features={','.join(map(str, self.positivity.flagged_features()))}",
            f"reasons={'; '.join(self.eligibility.reasons)}",
        ]
        if self.curve_mae is not None:
            lines.append(f"curve_mae={self.curve_mae!r}")
        return "\n".join(lines) + "\n"


def evaluate(
    model: MmceModel,
    holdout: Dataset,
    truth: GroundTruth | None = None,
    K: int = DEFAULT_STRATA,
    important_features=None,
    threshold: float = DEFAULT_MONO_THRESHOLD,
    sutva: bool = True,
    n_bins: int = 10,
) -> EvalReport:
    """Run every metric on one holdout set."""
    eligibility = eligibility_check(holdout, important_features, threshold, sutva, n_bins)
    positivity = positivity_check(holdout, n_bins)
    grid = model.grid if truth is None else truth.grid
    curves = predict_curves(model, holdout.X, grid, holdout.ids)
    sub = truth.subset(holdout.ids) if truth is not None else None
    ability = sub.ability if sub is not None else np.array([c.natural for c in curves])
    strat = stratify(curves, ability, min(K, len(curves)))
    try:
        gini = gini_score(model, holdout, None if sub is None else sub.natural)
    except ValidationError:
        gini = None
    mae = None
    if sub is not None:
        pred = np.stack([c.orders for c in curves])
        mae = float(np.mean(np.abs(pred - sub.orders)))
    return EvalReport(
        monotonicity_score(curves),
        stratification_score(strat) if strat.K >= 2 else float("nan"),
        marginal_effect_score(strat) if strat.K >= 2 else float("nan"),
        gini,
        eligibility,
        positivity,
        mae,
        strat,
    )
