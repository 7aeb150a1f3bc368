"""
Confounded incentives
=====================

A biased dispatch policy gives large incentives to riders who would deliver
little anyway. Raw data then suggests that incentives reduce orders, even
though every rider's true response curve rises with the incentive.
"""

import numpy as np

from mmce.datagen import GenConfig, emit_dataset, observational_slope
from mmce.evaluation import eligibility_check, macro_curve

# strong confounding: the policy targets low-ability riders
data, truth = emit_dataset(GenConfig(n_riders=20000, bias_strength=0.9, seed=0))
print("observational slope of orders on t:", round(observational_slope(data), 4))
print("every true curve increasing:", bool(np.all(np.diff(truth.orders, axis=1) > 0)))

# mean observed orders per treatment group, blank group first
ts, ys = macro_curve(data)
for t, y in zip(ts, ys):
    print(f"  t~{t:4.2f}  mean orders {y:6.3f}")

# the same data fails the checks that would make observational evaluation meaningful
verdict = eligibility_check(data)
print("eligible for evaluation:", verdict.eligible)
for reason in verdict.reasons:
    print("  ", reason)

# with random assignment the macro curve rises and the data passes
data0, _ = emit_dataset(GenConfig(n_riders=50000, bias_strength=0.0, seed=0))
print("random assignment eligible:", eligibility_check(data0).eligible)
