"""Observational dataset container, ground-truth sidecar and their CSV forms."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

BLANK = "blank"
TREATED = "treated"


@dataclass(frozen=True)
class Example:
    id: int
    x: tuple[float, ...]
    t: float
    attendance: int
    orders: float
    group: str


@dataclass
class Dataset:
    """Column-oriented collection of examples."""

    ids: np.ndarray
    X: np.ndarray
    t: np.ndarray
    attendance: np.ndarray
    orders: np.ndarray
    blank: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        n = self.ids.size
        X = np.asarray(self.X, dtype=np.float64)
        self.X = X.reshape(0, X.shape[-1] if X.ndim == 2 else 0) if n == 0 else X.reshape(n, -1)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.attendance = np.asarray(self.attendance, dtype=np.float64).reshape(-1)
        self.orders = np.asarray(self.orders, dtype=np.float64).reshape(-1)
        self.blank = np.asarray(self.blank, dtype=bool).reshape(-1)
        for name in ("t", "attendance", "orders", "blank"):
            if getattr(self, name).size != n:
                raise ValidationError(f"column {name!r} has the wrong length")

    def __len__(self) -> int:
        return self.ids.size

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def validate(self) -> "Dataset":
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.t))
                and np.all(np.isfinite(self.orders))):
            raise ValidationError("dataset contains non-finite values")
        if np.any(self.t < 0):
            raise ValidationError("treatments must be non-negative")
        if np.any(self.t[self.blank] != 0):
            raise ValidationError("blank-group rows must have t = 0")
        if not np.all(np.isin(self.attendance, (0.0, 1.0))):
            raise ValidationError("attendance labels must be 0 or 1")
        if np.any(self.orders < 0):
            raise ValidationError("orders must be non-negative")
        if np.any(self.orders[self.attendance == 0] != 0):
            raise ValidationError("absent riders must have zero orders")
        return self

    def subset(self, mask) -> "Dataset":
        return Dataset(self.ids[mask], self.X[mask], self.t[mask], self.attendance[mask],
                       self.orders[mask], self.blank[mask])

    def blank_part(self) -> "Dataset":
        return self.subset(self.blank)

    def treated_part(self) -> "Dataset":
        return self.subset(~self.blank)

    def examples(self) -> list[Example]:
        return [
            Example(int(i), tuple(float(v) for v in x), float(t), int(a), float(o),
                    BLANK if b else TREATED)
            for i, x, t, a, o, b in zip(self.ids, self.X, self.t, self.attendance,
                                        self.orders, self.blank)
        ]

    @classmethod
    def from_examples(cls, examples) -> "Dataset":
        examples = list(examples)
        if not examples:
            raise ValidationError("no examples")
        for ex in examples:
            if ex.group not in (BLANK, TREATED):
                raise ValidationError(f"unknown group {ex.group!r}")
        return cls(
            [e.id for e in examples], [e.x for e in examples], [e.t for e in examples],
            [e.attendance for e in examples], [e.orders for e in examples],
            [e.group == BLANK for e in examples],
        )


@dataclass
class GroundTruth:
    """Exact response curves of every synthetic rider on a treatment grid."""

    ids: np.ndarray
    ability: np.ndarray
    grid: np.ndarray
    attendance: np.ndarray  # (n, g)
    orders_pa: np.ndarray
    orders: np.ndarray

    @property
    def natural(self) -> np.ndarray:
        return self.orders[:, 0]

    @property
    def incremental(self) -> np.ndarray:
        return self.orders - self.orders[:, :1]

    def subset(self, ids) -> "GroundTruth":
        pos = {int(i): k for k, i in enumerate(self.ids)}
        try:
            idx = np.array([pos[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"rider {exc.args[0]} missing from ground truth") from None
        return GroundTruth(self.ids[idx], self.ability[idx], self.grid, self.attendance[idx],
                           self.orders_pa[idx], self.orders[idx])

    def at(self, ids, t) -> np.ndarray:
        """True total orders of riders ``ids`` at treatments ``t`` on the grid."""
        sub = self.subset(ids)
        cols = np.searchsorted(self.grid, np.round(np.asarray(t, dtype=np.float64), 10))
        if np.any(cols >= self.grid.size) or np.any(self.grid[np.minimum(cols, self.grid.size - 1)] != np.round(t, 10)):
            raise ValidationError("treatment not on the ground-truth grid")
        return sub.orders[np.arange(len(sub.ids)), cols]


# ---------------------------------------------------------------------------
# CSV


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset(data: Dataset, path) -> None:
    path = Path(path)
    d = data.n_features
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *[f"x_{j}" for j in range(d)], "t", "attendance", "orders", "group"])
        for i in range(len(data)):
            w.writerow([
                int(data.ids[i]), *[_fmt(v) for v in data.X[i]], _fmt(data.t[i]),
                int(data.attendance[i]), _fmt(data.orders[i]),
                BLANK if data.blank[i] else TREATED,
            ])


def read_dataset(path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = rows[0]
    d = len(header) - 5
    expected = ["id", *[f"x_{j}" for j in range(d)], "t", "attendance", "orders", "group"]
    if d < 1 or header != expected:
        raise ValidationError(f"{path}: unexpected header {header}")
    body = rows[1:]
    try:
        groups = [r[-1] for r in body]
        if any(g not in (BLANK, TREATED) for g in groups):
            raise ValidationError(f"{path}: group must be 'blank' or 'treated'")
        data = Dataset(
            [int(r[0]) for r in body],
            np.array([[float(v) for v in r[1 : 1 + d]] for r in body]).reshape(len(body), d),
            [float(r[1 + d]) for r in body],
            [float(r[2 + d]) for r in body],
            [float(r[3 + d]) for r in body],
            [g == BLANK for g in groups],
        )
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"{path}: malformed row ({exc})") from None
    return data.validate()


TRUTH_HEADER = ["id", "ability", "t", "true_attendance", "true_orders_pa", "true_orders"]


def write_truth(truth: GroundTruth, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for k, rid in enumerate(truth.ids):
            for j, t in enumerate(truth.grid):
                w.writerow([int(rid), _fmt(truth.ability[k]), _fmt(t), _fmt(truth.attendance[k, j]),
                            _fmt(truth.orders_pa[k, j]), _fmt(truth.orders[k, j])])


def read_truth(path) -> GroundTruth:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != TRUTH_HEADER:
        raise ValidationError(f"{path}: unexpected ground-truth header")
    body = rows[1:]
    if not body:
        raise ValidationError(f"{path}: no rows")
    arr = np.array([[float(v) for v in r] for r in body])
    ids, first = np.unique(arr[:, 0].astype(np.int64), return_index=True)
    order = np.argsort(first)
    ids = ids[order]
    n = ids.size
    if arr.shape[0] % n:
        raise ValidationError(f"{path}: riders have unequal grid sizes")
    g = arr.shape[0] // n
    arr = arr.reshape(n, g, 6)
    return GroundTruth(arr[:, 0, 0].astype(np.int64), arr[:, 0, 1], arr[0, :, 2],
                       arr[:, :, 3], arr[:, :, 4], arr[:, :, 5])
