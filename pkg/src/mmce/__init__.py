"""Monotone multi-effect response curves for incentive uplift modelling."""

from .allocate import AllocationProblem, Assignment, allocate_bruteforce, allocate_greedy, roi
from .data import Dataset, Example, GroundTruth, read_dataset, read_truth, write_dataset, write_truth
from .datagen import GenConfig, emit_dataset, gen_population, observational_slope, true_orders
from .errors import ConfigError, DomainError, MMCEError, NumericError, UsageError, ValidationError
from .evaluation import (
    EvalReport,
    eligibility_check,
    evaluate,
    gini_score,
    marginal_effect_score,
    monotonicity_score,
    positivity_check,
    stratification_score,
    stratify,
)
from .heads import HeadKind, HeadParams, head_delta, head_eval, param_transform
from .model import (
    MmceModel,
    ResponseCurve,
    SchemeKind,
    build_model,
    decompose,
    predict_attendance,
    predict_curves,
    predict_orders,
    predict_orders_pa,
)
from .training import TrainConfig, composite_loss, fit

__version__ = "0.1.0"
