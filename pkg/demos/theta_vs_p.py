"""Left-right crossing frequency against p and n, from one coupled plan.

Coupling across p makes every row monotone sample by sample.
"""
from fracperc.montecarlo import ExperimentPlan, estimate_theta

plan = ExperimentPlan(N=2, d=2, p_grid=[0.85, 0.9, 0.95, 0.99], n_grid=[2, 4, 6, 8], trials=2000, seed=1)
reports = estimate_theta(plan)
print("p     " + "".join(f"   n={n:<6d}" for n in plan.n_grid))
for i, p in enumerate(plan.p_grid):
    row = reports[i * len(plan.n_grid):(i + 1) * len(plan.n_grid)]
    print(f"{p:<6}" + "".join(f"  {r.estimate:.3f}   " for r in row))
