"""Budget-constrained incentive allocation over predicted response curves.

The objective is total predicted *incremental* orders: natural orders
accrue whether or not an incentive is paid.  Each rider receives exactly
one level of a candidate grid, the cost of a level is its amount, and the
summed cost may not exceed the budget.

Costs are counted in integer ticks of the 0.1 treatment resolution so that
feasibility is decided exactly rather than up to float rounding.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, ValidationError
from .heads import GRID_STEP, validate_grid
from .model import ResponseCurve

BRUTEFORCE_LIMIT = 10**7
_CHUNK = 1 << 16


def _ticks(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    k = np.round(t / GRID_STEP)
    if np.any(np.abs(k * GRID_STEP - t) > 1e-9):
        raise ValidationError("allocation levels must lie on the 0.1 treatment lattice")
    return k.astype(np.int64)


@dataclass
class AllocationProblem:
    """Riders' curves, a budget and the candidate levels to choose from."""

    curves: list[ResponseCurve]
    budget: float
    grid: np.ndarray | None = None

    def __post_init__(self):
        self.curves = list(self.curves)
        if not self.curves:
            raise ValidationError("allocation needs at least one rider")
        if not (math.isfinite(self.budget) and self.budget >= 0):
            raise ValidationError(f"budget must be a finite non-negative number, got {self.budget}")
        base = np.asarray(self.curves[0].grid, dtype=np.float64)
        self.grid = validate_grid(base if self.grid is None else self.grid)
        ids = [c.id for c in self.curves]
        if len(set(ids)) != len(ids):
            raise ValidationError("rider ids must be unique")
        cols = []
        for c in self.curves:
            g = np.asarray(c.grid, dtype=np.float64)
            idx = np.searchsorted(g, self.grid)
            if np.any(idx >= g.size) or np.any(g[np.minimum(idx, g.size - 1)] != self.grid):
                raise ValidationError(f"candidate grid is not contained in the grid of rider {c.id}")
            if c.incremental[0] != 0.0:
                raise ValidationError(f"rider {c.id}: incremental value at t=0 must be 0")
            cols.append(idx)
        self._idx = cols
        self.costs = _ticks(self.grid)
        self.budget_ticks = int(math.floor(self.budget / GRID_STEP + 1e-9))

    @property
    def ids(self) -> list[int]:
        return [c.id for c in self.curves]

    def values(self) -> np.ndarray:
        """(riders, levels) predicted increments on the candidate grid."""
        return np.stack([np.asarray(c.incremental)[i] for c, i in zip(self.curves, self._idx)])


@dataclass
class Assignment:
    """Chosen level per rider, with the summed cost and predicted increment."""

    ids: np.ndarray
    t: np.ndarray
    increments: np.ndarray

    @property
    def total_cost(self) -> float:
        return math.fsum(float(v) for v in self.t)

    @property
    def total_incremental(self) -> float:
        return math.fsum(float(v) for v in self.increments)

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(t) for i, t in zip(self.ids, self.t)}

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "t", "cost", "pred_incremental"])
            for i, t, v in zip(self.ids, self.t, self.increments):
                w.writerow([int(i), repr(float(t)), repr(float(t)), repr(float(v))])


def _assignment(p: AllocationProblem, levels) -> Assignment:
    levels = np.asarray(levels, dtype=np.int64)
    values = p.values()
    return Assignment(np.array(p.ids, dtype=np.int64), p.grid[levels],
                      values[np.arange(len(levels)), levels])


def upper_hull(costs, values) -> list[int]:
    """Indices of the rising part of the upper concave envelope through (0, 0).

    Points lying exactly on a hull edge are kept, so equal-width concave
    curves keep every level.
    """
    hull = [0]
    for j in range(1, len(costs)):
        if values[j] <= values[hull[-1]]:
            continue
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b when it lies strictly below the chord a -> j
            lhs = (values[b] - values[a]) * (costs[j] - costs[a])
            rhs = (values[j] - values[a]) * (costs[b] - costs[a])
            if lhs < rhs:
                hull.pop()
            else:
                break
        hull.append(j)
    return hull


def allocate_greedy(p: AllocationProblem) -> Assignment:
    """Marginal-ROI greedy over concavified frontiers, then a fill pass.

    When a rider's next frontier step no longer fits the remaining budget,
    the frontier is rebuilt over the levels that still fit.
    """
    values = p.values()
    costs = p.costs
    order = sorted(range(len(p.curves)), key=lambda r: p.curves[r].id)
    level = np.zeros(len(p.curves), dtype=np.int64)
    left = p.budget_ticks

    def frontier(r, limit):
        cur = level[r]
        cand = [j for j in range(cur, len(costs)) if costs[j] - costs[cur] <= limit]
        return [cand[k] for k in upper_hull(costs[cand] - costs[cur], values[r, cand] - values[r, cur])]

    hulls = {r: frontier(r, left) for r in order}

    def push(heap, r):
        h = hulls[r]
        if len(h) > 1:
            a, b = h[0], h[1]
            ratio = (values[r, b] - values[r, a]) / (costs[b] - costs[a])
            heapq.heappush(heap, (-ratio, p.curves[r].id, costs[b], r))

    heap = []
    for r in order:
        push(heap, r)
    while heap:
        _, _, _, r = heapq.heappop(heap)
        h = hulls[r]
        step = costs[h[1]] - costs[h[0]]
        if step > left:
            hulls[r] = frontier(r, left)
        else:
            left -= step
            level[r] = h[1]
            hulls[r] = h[1:]
        push(heap, r)

    # spend leftovers on the best single-rider upgrade, hull or not
    while True:
        best = None
        for r in order:
            cur = level[r]
            for j in range(cur + 1, len(costs)):
                extra = costs[j] - costs[cur]
                gain = values[r, j] - values[r, cur]
                if extra <= left and gain > 0 and (best is None or gain > best[0]):
                    best = (gain, r, j, extra)
        if best is None:
            break
        _, r, j, extra = best
        level[r] = j
        left -= extra
    return _assignment(p, level)


def allocate_bruteforce(p: AllocationProblem) -> Assignment:
    """Exact optimum by enumeration; ties go to the lexicographically smallest levels."""
    values = p.values()
    n, L = values.shape
    if L**n > BRUTEFORCE_LIMIT:
        raise ValidationError(f"{L}^{n} combinations exceed the enumeration limit {BRUTEFORCE_LIMIT}")
    order = np.array(sorted(range(n), key=lambda r: p.curves[r].id))
    radix = L ** np.arange(n - 1, -1, -1, dtype=np.int64)
    best_gain, best = -np.inf, None
    # lexicographic enumeration in chunks; argmax keeps the first maximum
    for start in range(0, L**n, _CHUNK):
        k = np.arange(start, min(start + _CHUNK, L**n), dtype=np.int64)
        combos = (k[:, None] // radix[None, :]) % L
        cost = p.costs[combos].sum(axis=1)
        gain = values[order[None, :], combos].sum(axis=1)
        gain = np.where(cost <= p.budget_ticks, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain, best = gain[i], combos[i]
    level = np.zeros(n, dtype=np.int64)
    level[order] = best
    return _assignment(p, level)


def roi(curve: ResponseCurve, t: float) -> float:
    """Predicted increment per unit of incentive at a positive grid level."""
    if not t > 0:
        raise DomainError("ROI is defined for positive treatments only")
    grid = np.asarray(curve.grid)
    hit = np.flatnonzero(np.isclose(grid, t, rtol=0.0, atol=1e-9))
    if hit.size == 0:
        raise ValidationError(f"treatment {t} is not on the curve grid")
    return float(curve.incremental[hit[0]]) / float(grid[hit[0]])
