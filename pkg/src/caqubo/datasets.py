"""Interaction (URM) and item-content (ICM) matrices.

Matrices are held as canonical :class:`scipy.sparse.csr_matrix` objects:
sorted column indices, no duplicates and no explicitly stored zeros. On disk
they are 0-based TAB-separated ``row  col  value`` triples; lines starting
with ``#`` are comments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DatasetError",
    "HoldoutSplit",
    "SyntheticSpec",
    "binarize",
    "canonical",
    "generate_synthetic",
    "load_sparse_matrix",
    "load_with_header",
    "read_shape_header",
    "save_sparse_matrix",
    "split_holdout",
]


class DatasetError(ValueError):
    """Raised for malformed matrix files or invalid dataset parameters."""


def canonical(matrix) -> sp.csr_matrix:
    """Return `matrix` as a CSR matrix in canonical form (float64)."""
    out = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
    out.sum_duplicates()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def binarize(matrix) -> sp.csr_matrix:
    """Nonzero entries become 1.0."""
    out = canonical(matrix)
    out.data[:] = 1.0
    return out


def load_sparse_matrix(path, expected_shape=None) -> sp.csr_matrix:
    """Read a TSV triple file into a canonical CSR matrix.

    Parameters
    ----------
    path : str or Path
        File with one ``row<TAB>col<TAB>value`` triple per line.
    expected_shape : tuple of int, optional
        If given, the matrix gets this shape and every index is checked
        against it. Otherwise the shape is ``(max_row + 1, max_col + 1)``.

    Raises
    ------
    DatasetError
        On a malformed line, an index outside `expected_shape`, a negative
        value, or a repeated ``(row, col)`` pair. The message names the
        offending line number.
    """
    rows, cols, vals = [], [], []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split("\t")
            if len(parts) != 3:
                raise DatasetError(f"{path}: line {lineno}: expected 3 tab-separated fields")
            try:
                r, c, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise DatasetError(f"{path}: line {lineno}: cannot parse {text!r}") from None
            if r < 0 or c < 0:
                raise DatasetError(f"{path}: line {lineno}: negative index")
            if not math.isfinite(v) or v < 0:
                raise DatasetError(f"{path}: line {lineno}: value must be finite and non-negative")
            if expected_shape is not None and (r >= expected_shape[0] or c >= expected_shape[1]):
                raise DatasetError(
                    f"{path}: line {lineno}: index ({r}, {c}) out of bounds for shape {tuple(expected_shape)}"
                )
            if (r, c) in seen:
                raise DatasetError(
                    f"{path}: line {lineno}: duplicate entry ({r}, {c}), first seen on line {seen[r, c]}"
                )
            seen[r, c] = lineno
            rows.append(r)
            cols.append(c)
            vals.append(v)

    if expected_shape is not None:
        shape = (int(expected_shape[0]), int(expected_shape[1]))
    else:
        shape = (max(rows, default=-1) + 1, max(cols, default=-1) + 1)
    coo = sp.coo_matrix(
        (np.asarray(vals, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=shape,
    )
    return canonical(coo)


def save_sparse_matrix(matrix, path, header: bool = True) -> None:
    """Write `matrix` as TSV triples; values use ``repr`` so they round-trip."""
    m = canonical(matrix)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# shape {m.shape[0]} {m.shape[1]}\n")
        for r in range(m.shape[0]):
            start, stop = m.indptr[r], m.indptr[r + 1]
            for c, v in zip(m.indices[start:stop], m.data[start:stop]):
                fh.write(f"{r}\t{int(c)}\t{float(v)!r}\n")


def read_shape_header(path):
    """Return the ``(rows, cols)`` recorded by :func:`save_sparse_matrix`, or None."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                return None
            parts = line[1:].split()
            if len(parts) == 3 and parts[0] == "shape":
                return int(parts[1]), int(parts[2])
    return None


def load_with_header(path) -> sp.csr_matrix:
    """Like :func:`load_sparse_matrix`, but honour a ``# shape`` header if present."""
    return load_sparse_matrix(path, read_shape_header(path))


@dataclass(frozen=True)
class HoldoutSplit:
    train: sp.csr_matrix
    test: sp.csr_matrix
    ratio: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.train.shape != self.test.shape:
            raise DatasetError(f"train shape {self.train.shape} != test shape {self.test.shape}")


def _test_size(n: int, ratio: float) -> int:
    if n < 2:
        return 0
    # round half up; rounding to 9 places first keeps 0.2 * 10 from landing at 1.999...
    raw = round((1.0 - ratio) * n, 9)
    return min(max(int(math.floor(raw + 0.5)), 1), n - 1)


def split_holdout(urm, ratio: float = 0.8, seed: int = 0) -> HoldoutSplit:
    """Per-user random train/test split.

    Each user with ``n >= 2`` interactions sends ``round_half_up((1 - ratio) * n)``
    of them to test, clamped to ``[1, n - 1]``. Users with a single
    interaction keep it in train.
    """
    if not 0.0 < ratio < 1.0:
        raise DatasetError(f"ratio must lie in (0, 1), got {ratio}")
    urm = canonical(urm)
    rng = np.random.default_rng(seed)
    test_mask = np.zeros(urm.nnz, dtype=bool)
    for u in range(urm.shape[0]):
        start, stop = urm.indptr[u], urm.indptr[u + 1]
        n_test = _test_size(stop - start, ratio)
        if n_test:
            picked = rng.permutation(stop - start)[:n_test]
            test_mask[start + picked] = True

    def _part(keep):
        data = np.where(keep, urm.data, 0.0)
        return canonical(sp.csr_matrix((data, urm.indices.copy(), urm.indptr.copy()), shape=urm.shape))

    return HoldoutSplit(train=_part(~test_mask), test=_part(test_mask), ratio=float(ratio), seed=int(seed))


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the planted-feature generator.

    Items belong to one of `n_informative` latent clusters, and each cluster has
    one indicator feature. Users prefer one or two clusters and mostly interact
    with items from them. Every other feature column is Bernoulli noise.
    """

    n_users: int = 200
    n_items: int = 300
    n_features: int = 50
    n_informative: int = 10
    noise_rate: float = 0.05
    interaction_density: float = 0.02
    seed: int = 0
    # share of each user's interactions drawn from preferred clusters
    affinity: float = 0.9

    def __post_init__(self):
        if min(self.n_users, self.n_items, self.n_features) < 1:
            raise DatasetError("n_users, n_items and n_features must be positive")
        if not 0 <= self.n_informative <= self.n_features:
            raise DatasetError("need 0 <= n_informative <= n_features")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise DatasetError("noise_rate must lie in [0, 1]")
        if not 0.0 < self.interaction_density < 1.0:
            raise DatasetError("interaction_density must lie in (0, 1)")
        if not 0.0 <= self.affinity <= 1.0:
            raise DatasetError("affinity must lie in [0, 1]")


def generate_synthetic(spec: SyntheticSpec):
    """Generate ``(urm, icm, planted)`` from `spec`; a pure function of `spec`.

    `planted` is a sorted tuple of the informative feature indices.
    """
    rng = np.random.default_rng(spec.seed)
    n_items, n_feat, n_inf = spec.n_items, spec.n_features, spec.n_informative

    planted = np.sort(rng.choice(n_feat, size=n_inf, replace=False)) if n_inf else np.empty(0, dtype=np.int64)
    noise_cols = np.setdiff1d(np.arange(n_feat), planted)

    icm = np.zeros((n_items, n_feat), dtype=np.float64)
    icm[:, noise_cols] = rng.random((n_items, noise_cols.size)) < spec.noise_rate

    # cluster popularity is Zipf-like so that membership also predicts item popularity
    item_pop = rng.lognormal(0.0, 0.5, size=n_items)
    if n_inf:
        cluster = rng.integers(n_inf, size=n_items)
        icm[np.arange(n_items), planted[cluster]] = 1.0
        cluster_weight = 1.0 / np.arange(1, n_inf + 1) ** 0.8
        cluster_weight = rng.permutation(cluster_weight / cluster_weight.sum())

    uniform = np.full(n_items, 1.0 / n_items)
    rows, cols = [], []
    for u in range(spec.n_users):
        n_u = int(min(max(2, rng.poisson(spec.interaction_density * n_items)), n_items))
        if n_inf:
            n_pref = 1 + int(rng.random() < 0.5)
            prefs = rng.choice(n_inf, size=min(n_pref, n_inf), replace=False, p=cluster_weight)
            w = item_pop * np.isin(cluster, prefs)
            p = spec.affinity * w / w.sum() + (1.0 - spec.affinity) * uniform
        else:
            p = uniform
        # cap so sampling without replacement cannot run out of mass
        n_u = min(n_u, int(np.count_nonzero(p)))
        items = rng.choice(n_items, size=n_u, replace=False, p=p / p.sum())
        rows.extend([u] * n_u)
        cols.extend(items.tolist())

    urm = sp.csr_matrix(
        (np.ones(len(rows)), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(spec.n_users, n_items),
    )
    return canonical(urm), canonical(icm), tuple(int(i) for i in planted)
