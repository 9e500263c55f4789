# %% [markdown]
# # Solving small QUBOs
# Build a random symmetric instance, add a cardinality penalty, and compare
# simulated annealing with brute-force enumeration.

# %%
import numpy as np

from caqubo.annealing import exhaustive_solve, repeated_solve_vote, simulated_anneal
from caqubo.qubo import QuboMatrix, add_cardinality_penalty, energy

rng = np.random.default_rng(0)
upper = np.triu(rng.uniform(-1, 1, (12, 12)))
qm = QuboMatrix(upper + np.triu(upper, 1).T)

# %% plain instance
sa = simulated_anneal(qm, seed=0)
ex = exhaustive_solve(qm)
print("SA        ", sa.mask.astype(int), round(sa.energy, 6))
print("exhaustive", ex.mask.astype(int), round(ex.energy, 6))

# %% the penalty pushes solutions towards exactly k ones
k = 4
gamma = 10 * qm.m * qm.max_abs()
pen = add_cardinality_penalty(qm, k, gamma)
best = exhaustive_solve(pen)
print("popcount under hard penalty:", best.popcount)
x = best.mask
print("penalty identity gap:", energy(pen, x) - energy(qm, x) - gamma * (x.sum() - k) ** 2)

# %% five seeds, majority vote
final, tally, runs = repeated_solve_vote(pen, n_runs=5)
print("tally:", tally)
print("voted:", final.astype(int))
