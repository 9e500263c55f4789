"""Leave-one-feature-out impact of each ICM feature on Item-KNN nDCG."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .datasets import HoldoutSplit
from .itemknn import EvalParams, KnnParams, fit_item_knn, ndcg_at_k

__all__ = [
    "CounterfactualScores",
    "DegenerateFeatureSetError",
    "counterfactual_scores",
    "load_counterfactual",
    "save_counterfactual",
]


class DegenerateFeatureSetError(ValueError):
    """Removing a feature would leave nothing to fit on."""


@dataclass(frozen=True)
class CounterfactualScores:
    """Per-feature nDCG deltas ``e[i] = base_ndcg - ndcg_without[i]``.

    Arrays have one slot per ICM column; features that were not evaluated
    hold NaN and are False in `mask_evaluated`.
    """

    base_ndcg: float
    e: np.ndarray
    ndcg_without: np.ndarray
    eval: EvalParams
    knn: KnnParams
    mask_evaluated: np.ndarray

    @property
    def m(self) -> int:
        return self.e.size


def _ndcg_without(icm, split, knn, params, i):
    mask = np.ones(icm.shape[1], dtype=bool)
    mask[i] = False
    return ndcg_at_k(fit_item_knn(icm, mask, knn), split, params)


def counterfactual_scores(
    icm,
    split: HoldoutSplit,
    knn: KnnParams = KnnParams(),
    eval: EvalParams = EvalParams(),
    features=None,
    n_jobs: int = 1,
) -> CounterfactualScores:
    """Refit the recommender once per feature with that feature removed.

    Every evaluation, including the all-features baseline, uses the same
    `eval` parameters and therefore the same user sample. Output does not
    depend on `n_jobs`.
    """
    m = icm.shape[1]
    if m < 2:
        raise DegenerateFeatureSetError("need at least two features to remove one")
    feats = np.arange(m) if features is None else np.unique(np.asarray(list(features), dtype=np.int64))
    if feats.size and (feats[0] < 0 or feats[-1] >= m):
        raise ValueError("feature index out of range")

    base = ndcg_at_k(fit_item_knn(icm, np.ones(m, dtype=bool), knn), split, eval)
    if n_jobs == 1:
        values = [_ndcg_without(icm, split, knn, eval, int(i)) for i in feats]
    else:
        values = Parallel(n_jobs=n_jobs)(delayed(_ndcg_without)(icm, split, knn, eval, int(i)) for i in feats)

    without = np.full(m, np.nan)
    without[feats] = values
    e = np.full(m, np.nan)
    e[feats] = base - without[feats]
    evaluated = np.zeros(m, dtype=bool)
    evaluated[feats] = True
    return CounterfactualScores(
        base_ndcg=base, e=e, ndcg_without=without, eval=eval, knn=knn, mask_evaluated=evaluated
    )


def save_counterfactual(scores: CounterfactualScores, directory, extra=None) -> None:
    """Write ``e.tsv`` (index, e, nDCG without) and a ``e.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "e.tsv", "w", encoding="utf-8") as fh:
        fh.write("# feature\te\tndcg_without\n")
        for i in np.flatnonzero(scores.mask_evaluated):
            fh.write(f"{i}\t{float(scores.e[i])!r}\t{float(scores.ndcg_without[i])!r}\n")
    meta = {
        "m": scores.m,
        "base_ndcg": scores.base_ndcg,
        "eval": asdict(scores.eval),
        "knn": asdict(scores.knn),
    }
    if extra:
        meta.update(extra)
    (directory / "e.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_counterfactual(directory) -> CounterfactualScores:
    directory = Path(directory)
    meta = json.loads((directory / "e.json").read_text(encoding="utf-8"))
    m = int(meta["m"])
    e = np.full(m, np.nan)
    without = np.full(m, np.nan)
    evaluated = np.zeros(m, dtype=bool)
    with open(directory / "e.tsv", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            i, ev, nw = line.rstrip("\n").split("\t")
            i = int(i)
            e[i], without[i], evaluated[i] = float(ev), float(nw), True
    return CounterfactualScores(
        base_ndcg=float(meta["base_ndcg"]),
        e=e,
        ndcg_without=without,
        eval=EvalParams(**meta["eval"]),
        knn=KnnParams(**meta["knn"]),
        mask_evaluated=evaluated,
    )
