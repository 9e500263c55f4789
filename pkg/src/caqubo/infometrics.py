"""Plug-in mutual information estimators over binary features (in nats)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import binarize

__all__ = [
    "MiStats",
    "TargetVector",
    "build_target",
    "compute_mi_stats",
    "conditional_mutual_information",
    "mutual_information",
]


@dataclass(frozen=True)
class TargetVector:
    values: np.ndarray
    derivation: str = "popularity-median"

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class MiStats:
    """MI(f_i; y) per feature and CMI(f_i; y | f_j) per ordered pair.

    ``cmi[i, j]`` conditions on feature ``j``; the matrix is not symmetric and
    its diagonal is stored as 0. `features` holds the global feature indices
    the rows refer to.
    """

    mi: np.ndarray
    cmi: np.ndarray
    features: np.ndarray

    @property
    def m(self) -> int:
        return self.mi.size

    def subset(self, local_idx) -> "MiStats":
        idx = np.asarray(local_idx, dtype=np.int64)
        return MiStats(mi=self.mi[idx], cmi=self.cmi[np.ix_(idx, idx)], features=self.features[idx])


def build_target(urm_train) -> TargetVector:
    """y_j = 1 iff item j has strictly more training interactions than the median item."""
    counts = np.asarray(binarize(urm_train).getnnz(axis=0), dtype=np.float64)
    y = (counts > np.median(counts)).astype(np.int8) if counts.size else np.zeros(0, dtype=np.int8)
    return TargetVector(values=y, derivation="popularity-median")


def _xlogx_ratio(joint, left, right, total):
    # sum of p(ab) ln(p(ab) / (p(a) p(b))) from counts, 0 ln 0 = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = joint / total * np.log(joint * total / (left * right))
    return np.where(joint > 0, terms, 0.0)


def _as_binary(v):
    return (np.asarray(v) != 0).astype(np.int64)


def mutual_information(f, y) -> float:
    """Plug-in MI between two binary vectors, from their 2x2 contingency table."""
    f = _as_binary(f)
    y = _as_binary(getattr(y, "values", y))
    if f.size != y.size or f.size == 0:
        raise ValueError("f and y must have the same non-zero length")
    n = f.size
    table = np.bincount(2 * f + y, minlength=4).reshape(2, 2).astype(np.float64)
    pf = table.sum(axis=1, keepdims=True)
    py = table.sum(axis=0, keepdims=True)
    return float(_xlogx_ratio(table, pf, py, float(n)).sum())


def conditional_mutual_information(f_i, y, f_j) -> float:
    """CMI(f_i; y | f_j) = sum_b p(f_j=b) MI(f_i; y | f_j=b); empty strata add 0."""
    f_i = _as_binary(f_i)
    f_j = _as_binary(f_j)
    y = _as_binary(getattr(y, "values", y))
    if not f_i.size == y.size == f_j.size:
        raise ValueError("inputs must have equal length")
    n = f_i.size
    total = 0.0
    for b in (0, 1):
        sel = f_j == b
        n_b = int(sel.sum())
        if n_b:
            total += n_b / n * mutual_information(f_i[sel], y[sel])
    return total


def compute_mi_stats(icm, y, feature_subset=None) -> MiStats:
    """MI and the full asymmetric CMI matrix for the selected feature columns.

    All 2x2x2 joint counts come from a handful of matrix products, so the
    cost is O(n_items * m^2) with no Python-level pair loop.
    """
    yv = _as_binary(getattr(y, "values", y)).astype(np.float64)
    if yv.size != icm.shape[0]:
        raise ValueError(f"target length {yv.size} != ICM rows {icm.shape[0]}")
    feats = np.arange(icm.shape[1]) if feature_subset is None else np.asarray(sorted(feature_subset), dtype=np.int64)
    x = binarize(icm)[:, feats].toarray()
    n = float(x.shape[0])
    m = feats.size
    if n == 0:
        return MiStats(mi=np.zeros(m), cmi=np.zeros((m, m)), features=feats)

    ones = np.ones_like(yv)
    cols = {1: x, 0: 1.0 - x}
    ys = {1: yv, 0: ones - yv}

    # MI: n(f_i=a, y=b)
    n_ab = {(a, b): cols[a].T @ ys[b] for a in (0, 1) for b in (0, 1)}
    n_a = {a: n_ab[a, 0] + n_ab[a, 1] for a in (0, 1)}
    n_b = {b: ys[b].sum() for b in (0, 1)}
    mi = sum(_xlogx_ratio(n_ab[a, b], n_a[a], n_b[b], n) for a in (0, 1) for b in (0, 1))

    # CMI: n(f_i=a, y=b, f_j=c) as an (i, j) matrix per cell
    cmi = np.zeros((m, m))
    for c in (0, 1):
        n_c = cols[c].sum(axis=0)[None, :]
        n_bc = {b: (ys[b] @ cols[c])[None, :] for b in (0, 1)}
        n_ac = {a: cols[a].T @ cols[c] for a in (0, 1)}
        for a in (0, 1):
            for b in (0, 1):
                n_abc = (cols[a] * ys[b][:, None]).T @ cols[c]
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = n_abc / n * np.log(n_abc * n_c / (n_ac[a] * n_bc[b]))
                cmi += np.where(n_abc > 0, t, 0.0)
    np.fill_diagonal(cmi, 0.0)
    return MiStats(mi=np.asarray(mi, dtype=np.float64), cmi=cmi, features=feats)
