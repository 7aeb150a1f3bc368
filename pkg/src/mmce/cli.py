"""Batch command line: gen, train, curves, eval, allocate.

Exit codes: 0 ok, 2 configuration or validation error, 3 I/O error,
4 numeric failure, 5 holdout ineligible for evaluation.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as tc
from .allocate import AllocationProblem, allocate_bruteforce, allocate_greedy
from .data import read_dataset, read_truth
from .datagen import GenConfig, emit_dataset, observational_slope
from .errors import ConfigError, DomainError, NumericError, UsageError, ValidationError
from .evaluation import DEFAULT_MONO_THRESHOLD, DEFAULT_STRATA, eligibility_check, evaluate
from .heads import GRID_STEP, HeadKind, validate_grid
from .model import MmceModel, SchemeKind, head_groups, predict_curves, trunk_groups
from .training import TrainConfig, fit

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_INELIGIBLE = 0, 2, 3, 4, 5

MAGIC = "MMCE-MODEL v1"


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Flat key=value configuration shared by every subcommand."""

    # data generation
    n_riders: int = 10000
    n_features: int = 8
    bias_strength: float = 0.9
    blank_fraction: float = 0.2
    t_max: float = 5.0
    noise: float = 0.1
    outcome_noise: float = 0.5
    long_tail: bool = True
    seed: int = 0
    # training
    scheme: str = "mmce2"
    head: str = "sshaped"
    hidden: tuple[int, ...] = (64, 64)
    loss_a: float = 1.0
    loss_b: float = 1.0
    epochs: int = 20
    batch_size: int = 256
    lr: float = 1e-3
    D_attendance: float = 6.0
    # evaluation
    mono_threshold: float = DEFAULT_MONO_THRESHOLD
    strata: int = DEFAULT_STRATA
    n_bins: int = 10
    important_features: tuple[int, ...] = ()
    sutva: bool = True
    # allocation
    budget: float = 0.0
    alloc_step: float = GRID_STEP

    def gen_config(self) -> GenConfig:
        return GenConfig(**{k: getattr(self, k) for k in GenConfig.keys()})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in TrainConfig.keys()})

    def validate(self) -> "RunConfig":
        self.gen_config().validate()
        self.train_config().validate()
        if not 0.0 <= self.mono_threshold <= 1.0:
            raise ConfigError("mono_threshold must lie in [0, 1]")
        if self.strata < 2:
            raise ConfigError("strata must be >= 2")
        if self.n_bins < 2:
            raise ConfigError("n_bins must be >= 2")
        if any(j < 0 for j in self.important_features):
            raise ConfigError("important_features must be non-negative indices")
        if not self.budget >= 0:
            raise ConfigError("budget must be non-negative")
        k = round(self.alloc_step / GRID_STEP)
        if k < 1 or abs(k * GRID_STEP - self.alloc_step) > 1e-9:
            raise ConfigError("alloc_step must be a positive multiple of 0.1")
        return self


def _parse_value(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.replace(",", " ").split())
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_config(text: str) -> RunConfig:
    """Parse key=value lines; ``#`` starts a comment; unknown keys are rejected."""
    defaults = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, val, getattr(defaults, key))
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    return parse_config(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, val in asdict(cfg).items():
        if isinstance(val, (tuple, list)):
            val = ",".join(str(v) for v in val)
        elif isinstance(val, bool):
            val = str(val).lower()
        lines.append(f"{key}={val}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# model files


def save_model(model: MmceModel, path) -> None:
    """Write a text model file; floats use shortest round-trip repr."""
    lines = [
        MAGIC,
        f"scheme {model.scheme.value}",
        f"head {model.head.value}",
        "layers " + " ".join(str(w) for w in model.layer_spec),
        f"D_orders {model.D_orders!r}",
        f"D_attendance {model.D_attendance!r}",
        f"N {model.N}",
        "grid " + " ".join(repr(float(t)) for t in model.grid),
    ]
    for name in model.store:
        vals = model.store[name]
        lines.append(f"group {name} {vals.size}")
        lines.extend(repr(float(v)) for v in vals)
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> MmceModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MAGIC:
        found = lines[0].strip() if lines else "<empty>"
        raise ConfigError(f"{path}: unsupported model file header {found!r} (expected {MAGIC!r})")
    header = {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("group "):
        key, _, rest = lines[pos].partition(" ")
        header[key] = rest.split()
        pos += 1
    try:
        scheme = SchemeKind.parse(header["scheme"][0])
        head = HeadKind.parse(header["head"][0])
        layer_spec = [int(v) for v in header["layers"]]
        model = MmceModel(
            scheme, head, layer_spec, tc.ParameterStore(),
            validate_grid([float(v) for v in header["grid"]]),
            float(header["D_orders"][0]), float(header["D_attendance"][0]), int(header["N"][0]),
        )
        while pos < len(lines):
            tag, name, n = lines[pos].split()
            if tag != "group":
                raise ValueError(lines[pos])
            n = int(n)
            vals = [float(v) for v in lines[pos + 1 : pos + 1 + n]]
            if len(vals) != n:
                raise ValueError(f"group {name} is truncated")
            model.store.add(name, vals)
            pos += 1 + n
    except (KeyError, IndexError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed model file ({exc})") from None
    expected = trunk_groups(scheme) + head_groups(scheme)
    if model.store.names() != expected:
        raise ConfigError(f"{path}: groups {model.store.names()} do not match scheme {scheme.value}")
    for name in expected:
        spec = layer_spec if name in trunk_groups(scheme) else [model.width, model.head_width(name)]
        if model.store[name].size != tc.mlp_size(spec):
            raise ConfigError(f"{path}: group {name} has the wrong size")
    return model


# ---------------------------------------------------------------------------
# commands


def _truth_path(out: Path) -> Path:
    return out.with_name(out.stem + ".truth.csv")


def cmd_gen(args, cfg: RunConfig) -> int:
    out = Path(args.out or "data.csv")
    truth_out = Path(args.truth) if args.truth else _truth_path(out)
    data, _ = emit_dataset(cfg.gen_config(), out, truth_out)
    slope = observational_slope(data)
    sign = "negative" if slope < 0 else "non-negative"
    print(f"rows={len(data)} blank={int(data.blank.sum())} observational_slope={slope!r} "
          f"slope_sign={sign} data={out} truth={truth_out}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    data = read_dataset(_require(args.data, "--data"))
    model = fit(data, cfg.train_config(), log=print)
    save_model(model, args.out or "model.txt")
    return EXIT_OK


def _write_rows(path, header, rows) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if path:
            fh.close()


def cmd_curves(args, cfg: RunConfig) -> int:
    model = load_model(_require(args.model, "--model"))
    data = read_dataset(_require(args.data, "--data"))
    rows = []
    for c in predict_curves(model, data.X, model.grid, data.ids):
        for j, t in enumerate(c.grid):
            rows.append([c.id, repr(float(t)), repr(float(c.attendance[j])), repr(float(c.orders_pa[j])),
                         repr(float(c.orders[j])), repr(float(c.natural)), repr(float(c.incremental[j]))])
    _write_rows(args.out, ["id", "t", "attendance", "orders_pa", "orders", "natural", "incremental"], rows)
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    model = load_model(_require(args.model, "--model"))
    holdout = read_dataset(_require(args.data, "--data"))
    truth = read_truth(args.truth) if args.truth else None
    important = list(cfg.important_features) or None
    verdict = eligibility_check(holdout, important, cfg.mono_threshold, cfg.sutva, cfg.n_bins)
    if not verdict.eligible and not args.force:
        print("holdout is not eligible for evaluation:", file=sys.stderr)
        for reason in verdict.reasons:
            print(f"  {reason}", file=sys.stderr)
        return EXIT_INELIGIBLE
    report = evaluate(model, holdout, truth, cfg.strata, important, cfg.mono_threshold,
                      cfg.sutva, cfg.n_bins)
    text = report.to_text()
    if args.out:
        out = Path(args.out)
        out.write_text(text)
        strat = report.strata
        rows = [
            [s, repr(float(t)), repr(float(strat.total[s, j])), repr(float(strat.natural[s])),
             repr(float(strat.incremental[s, j]))]
            for s in range(strat.K) for j, t in enumerate(strat.grid)
        ]
        _write_rows(out.with_name(out.stem + ".strata.csv"),
                    ["stratum", "t", "total", "natural", "incremental"], rows)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_allocate(args, cfg: RunConfig) -> int:
    budget = cfg.budget if args.budget is None else args.budget
    if not budget >= 0:
        raise ConfigError(f"budget must be non-negative, got {budget}")
    model = load_model(_require(args.model, "--model"))
    data = read_dataset(_require(args.data, "--data"))
    stride = int(round(cfg.alloc_step / GRID_STEP))
    grid = model.grid[::stride]
    problem = AllocationProblem(predict_curves(model, data.X, grid, data.ids), budget)
    assignment = (allocate_bruteforce if args.exact else allocate_greedy)(problem)
    assignment.write_csv(args.out or "assignment.csv")
    summary = (f"riders={len(data)} budget={budget!r} cost={assignment.total_cost!r} "
               f"pred_incremental={assignment.total_incremental!r}")
    if args.truth:
        truth = read_truth(args.truth)
        realized = truth.at(assignment.ids, assignment.t) - truth.subset(assignment.ids).natural
        summary += f" realized_incremental={float(np.sum(realized))!r}"
    print(summary)
    return EXIT_OK


def _require(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmce", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value run configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output path")
        return p

    gen = common(sub.add_parser("gen", help="generate a synthetic dataset and its ground truth"))
    gen.add_argument("--truth", help="ground-truth output path (default <out>.truth.csv)")
    train = common(sub.add_parser("train", help="train a model"))
    train.add_argument("--data", help="training dataset CSV")
    curves = common(sub.add_parser("curves", help="emit per-rider response curves"))
    curves.add_argument("--model")
    curves.add_argument("--data")
    ev = common(sub.add_parser("eval", help="evaluate a model on a holdout"))
    ev.add_argument("--model")
    ev.add_argument("--data", help="holdout dataset CSV")
    ev.add_argument("--truth", help="ground-truth CSV for curve error")
    ev.add_argument("--force", action="store_true", help="evaluate even if the holdout is ineligible")
    alloc = common(sub.add_parser("allocate", help="allocate a budget over predicted curves"))
    alloc.add_argument("--model")
    alloc.add_argument("--data", help="population dataset CSV")
    alloc.add_argument("--budget", type=float)
    alloc.add_argument("--exact", action="store_true", help="use exhaustive search")
    alloc.add_argument("--truth", help="ground-truth CSV for realized increments")
    return parser


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "curves": cmd_curves, "eval": cmd_eval,
            "allocate": cmd_allocate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.validate()
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ValidationError, DomainError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
