"""Content-based Item-KNN recommender and nDCG@k evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .datasets import HoldoutSplit, binarize

__all__ = [
    "EvalParams",
    "ItemSimilarityModel",
    "KnnParams",
    "NoEvaluableUsersError",
    "as_mask",
    "fit_item_knn",
    "ndcg_at_k",
    "sample_users",
    "score_users",
    "user_ndcg",
]

_BLOCK = 512


class NoEvaluableUsersError(ValueError):
    """No sampled user has a non-empty test set."""


def as_mask(bits, m: int | None = None) -> np.ndarray:
    """Coerce `bits` to a boolean selection mask, checking length and values."""
    arr = np.asarray(bits)
    if arr.ndim != 1:
        raise ValueError("mask must be one-dimensional")
    if arr.dtype != bool:
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        arr = arr.astype(bool)
    if m is not None and arr.size != m:
        raise ValueError(f"mask length {arr.size} != {m}")
    return arr


@dataclass(frozen=True)
class KnnParams:
    n_neighbors: int = 100
    shrink: float = 0.0

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")
        if self.shrink < 0:
            raise ValueError("shrink must be non-negative")


@dataclass(frozen=True)
class EvalParams:
    cutoff: int = 10
    user_sample_fraction: float = 1.0
    sample_seed: int = 0

    def __post_init__(self):
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        if not 0.0 < self.user_sample_fraction <= 1.0:
            raise ValueError("user_sample_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class ItemSimilarityModel:
    similarities: sp.csr_matrix
    params: KnnParams
    feature_mask: np.ndarray

    @property
    def n_items(self) -> int:
        return self.similarities.shape[0]


def fit_item_knn(icm, mask, params: KnnParams = KnnParams()) -> ItemSimilarityModel:
    """Fit cosine Item-KNN on the binarized ICM columns selected by `mask`.

    ``s_ij = v_i . v_j / (|v_i| |v_j| + shrink)``; each row keeps its
    `n_neighbors` largest positive values, ties going to the lower item index.
    The diagonal is always zero.
    """
    mask = as_mask(mask, icm.shape[1])
    if not mask.any():
        raise ValueError("cannot fit Item-KNN with an empty feature mask")
    x = binarize(icm)[:, np.flatnonzero(mask)].tocsr()
    n = x.shape[0]
    dots = (x @ x.T).tocsr()
    norms = np.sqrt(np.asarray(x.getnnz(axis=1), dtype=np.float64))
    k = min(params.n_neighbors, max(n - 1, 1))

    indptr = [0]
    indices, data = [], []
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        block = dots[start:stop].toarray()
        denom = np.outer(norms[start:stop], norms) + params.shrink
        with np.errstate(divide="ignore", invalid="ignore"):
            sim = np.where(denom > 0, block / denom, 0.0)
        sim[np.arange(stop - start), np.arange(start, stop)] = 0.0
        order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
        for r in range(stop - start):
            cols = order[r]
            vals = sim[r, cols]
            keep = vals > 0
            cols, vals = cols[keep], vals[keep]
            srt = np.argsort(cols)
            indices.append(cols[srt])
            data.append(vals[srt])
            indptr.append(indptr[-1] + cols.size)

    w = sp.csr_matrix(
        (
            np.concatenate(data) if data else np.empty(0),
            np.concatenate(indices) if indices else np.empty(0, dtype=np.int64),
            np.asarray(indptr),
        ),
        shape=(n, n),
    )
    return ItemSimilarityModel(similarities=w, params=params, feature_mask=mask.copy())


def _rank_rows(scores: np.ndarray, top_n: int):
    out = []
    for row in scores:
        cand = np.flatnonzero(row > 0)
        if cand.size == 0:
            out.append([])
            continue
        # stable sort on -score keeps ascending item index among ties
        order = cand[np.argsort(-row[cand], kind="stable")]
        out.append(order[:top_n].tolist())
    return out


def score_users(model: ItemSimilarityModel, urm_train, users, top_n: int = 10):
    """Rank unseen items for each user in `users`.

    The score of item ``j`` is the sum of ``similarity(j, l)`` over the
    user's training items ``l``. Training items are never recommended and
    only positively scored items are returned. Returns a list of item lists.
    """
    if urm_train.shape[1] != model.n_items:
        raise ValueError(f"URM has {urm_train.shape[1]} items, model has {model.n_items}")
    users = np.asarray(users, dtype=np.int64)
    profiles = binarize(urm_train)
    wt = model.similarities.T.tocsr()
    ranked = []
    for start in range(0, users.size, _BLOCK):
        prof = profiles[users[start : start + _BLOCK]]
        scores = (prof @ wt).toarray()
        scores[prof.toarray() > 0] = -np.inf
        ranked.extend(_rank_rows(scores, top_n))
    return ranked


def user_ndcg(ranked, relevant, cutoff: int) -> float:
    """Binary-relevance nDCG@cutoff of one ranked list."""
    relevant = set(relevant)
    if not relevant:
        raise ValueError("user has no relevant items")
    dcg = sum(1.0 / math.log2(r + 2) for r, item in enumerate(ranked[:cutoff]) if item in relevant)
    idcg = sum(1.0 / math.log2(r + 2) for r in range(min(cutoff, len(relevant))))
    return dcg / idcg


def sample_users(n_users: int, params: EvalParams) -> np.ndarray:
    """The evaluation population: all users, or a seeded sorted subsample."""
    if params.user_sample_fraction >= 1.0:
        return np.arange(n_users)
    size = max(1, math.ceil(params.user_sample_fraction * n_users))
    rng = np.random.default_rng(params.sample_seed)
    return np.sort(rng.choice(n_users, size=size, replace=False))


def ndcg_at_k(model: ItemSimilarityModel, split: HoldoutSplit, params: EvalParams = EvalParams(), per_user=False):
    """Mean nDCG@cutoff over sampled users whose test set is non-empty.

    With ``per_user=True`` returns ``(mean, users, values)`` instead.
    """
    test = binarize(split.test)
    users = sample_users(test.shape[0], params)
    users = users[np.diff(test.indptr)[users] > 0]
    if users.size == 0:
        raise NoEvaluableUsersError("no evaluable users: every sampled user has an empty test set")
    ranked = score_users(model, split.train, users, top_n=params.cutoff)
    values = np.array(
        [user_ndcg(r, test.indices[test.indptr[u] : test.indptr[u + 1]], params.cutoff) for u, r in zip(users, ranked)]
    )
    mean = float(math.fsum(values) / values.size)
    if per_user:
        return mean, users, values
    return mean
