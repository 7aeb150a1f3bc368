"""
Spending a budget
=================

Turn predicted response curves into an incentive plan: greedy marginal ROI
over concavified curves, checked against exhaustive search on a small case.
"""

import numpy as np

from mmce.allocate import AllocationProblem, allocate_bruteforce, allocate_greedy, roi
from mmce.datagen import GenConfig, emit_dataset
from mmce.model import predict_curves
from mmce.training import TrainConfig, fit

data, truth = emit_dataset(GenConfig(n_riders=10000, bias_strength=0.0, seed=4))
model = fit(data, TrainConfig(), log=lambda s: None)

# 200 riders, incentive levels 0, 0.5, ..., 5
riders = data.subset(np.arange(200))
grid = model.grid[::5]
curves = predict_curves(model, riders.X, grid, riders.ids)
print("ROI of rider 0 per level:", [round(roi(curves[0], t), 3) for t in grid[1:]])

sub = truth.subset(riders.ids)
for budget in (20.0, 50.0, 100.0):
    plan = allocate_greedy(AllocationProblem(curves, budget))
    realized = truth.at(plan.ids, plan.t) - sub.natural
    print(f"budget {budget:5.1f}: cost {plan.total_cost:6.1f}  predicted gain {plan.total_incremental:7.3f}  "
          f"true gain {realized.sum():7.3f}")

# on a handful of riders, compare with the exact optimum
small = AllocationProblem(curves[:6], 6.0, grid=np.arange(0.0, 5.0, 1.0))
g, e = allocate_greedy(small), allocate_bruteforce(small)
print("greedy", round(g.total_incremental, 4), "exact", round(e.total_incremental, 4))
print("greedy plan", g.as_dict())
