# %% [markdown]
# # Information and counterfactual feature scores
# Planted cluster features should carry more information about item
# popularity, and removing them should hurt the recommender more.

# %%
import numpy as np

from caqubo.counterfactual import counterfactual_scores
from caqubo.datasets import SyntheticSpec, generate_synthetic, split_holdout
from caqubo.infometrics import build_target, compute_mi_stats

urm, icm, planted = generate_synthetic(SyntheticSpec(seed=3))
split = split_holdout(urm, ratio=0.8, seed=3)
print("URM", urm.shape, "nnz", urm.nnz, "| ICM", icm.shape, "| planted", planted)

# %% mutual information against the popular-item target
stats = compute_mi_stats(icm, build_target(split.train))
is_planted = np.isin(np.arange(icm.shape[1]), planted)
print("mean MI  planted %.4f  noise %.4f" % (stats.mi[is_planted].mean(), stats.mi[~is_planted].mean()))

# %% leave-one-feature-out nDCG deltas
scores = counterfactual_scores(icm, split)
print("nDCG@10 with every feature: %.4f" % scores.base_ndcg)
print("mean e   planted %.4f  noise %.4f" % (scores.e[is_planted].mean(), scores.e[~is_planted].mean()))
top = np.argsort(-scores.e)[:10]
print("top-10 by e:", sorted(top.tolist()))
