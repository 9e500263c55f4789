"""QUBO instances for feature selection.

A :class:`QuboMatrix` stores a symmetric coefficient matrix ``q`` and a
constant ``offset``; its energy is

    Y(x) = sum_i q_ii x_i + 2 sum_{i<j} q_ij x_i x_j + offset  (= x^T q x + offset)

for binary ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "CaquboParams",
    "QuboMatrix",
    "add_cardinality_penalty",
    "build_caqubo",
    "build_miqubo",
    "dump_qubo",
    "energy",
    "load_qubo",
    "scale",
]


@dataclass(frozen=True)
class QuboMatrix:
    q: np.ndarray
    offset: float = 0.0
    provenance: str = ""

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError(f"q must be square, got shape {q.shape}")
        if not np.array_equal(q, q.T):
            raise ValueError("q must be exactly symmetric; use QuboMatrix.from_raw for asymmetric input")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_raw(cls, r, offset=0.0, provenance="") -> "QuboMatrix":
        """Symmetrize by averaging; x^T r x only sees (r + r^T) / 2 anyway."""
        r = np.asarray(r, dtype=np.float64)
        return cls((r + r.T) / 2.0, offset, provenance)

    @property
    def m(self) -> int:
        return self.q.shape[0]

    def max_abs(self) -> float:
        return float(np.abs(self.q).max()) if self.q.size else 0.0


@dataclass(frozen=True)
class CaquboParams:
    """lam weighs the counterfactual term, mu rescales q, k and gamma shape the penalty."""

    lam: float = 0.0
    mu: float = 1.0
    k: int = 1
    gamma: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def _raw_mi_matrix(stats):
    r = -np.array(stats.cmi, dtype=np.float64)
    if r.shape != (stats.mi.size, stats.mi.size):
        raise ValueError("cmi shape does not match mi length")
    return r


def build_miqubo(stats) -> QuboMatrix:
    """-MI on the diagonal, -CMI off it."""
    r = _raw_mi_matrix(stats)
    np.fill_diagonal(r, -np.asarray(stats.mi, dtype=np.float64))
    return QuboMatrix.from_raw(r, 0.0, "miqubo")


def build_caqubo(stats, e, lam: float) -> QuboMatrix:
    """MIQUBO with ``-lam * e_i`` added to each diagonal entry.

    `e` is a :class:`~caqubo.counterfactual.CounterfactualScores` or a plain
    vector aligned with ``stats.mi``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    ev = np.asarray(getattr(e, "e", e), dtype=np.float64)
    if ev.shape != stats.mi.shape:
        raise ValueError(f"e has length {ev.size}, expected {stats.mi.size}")
    if np.isnan(ev).any():
        raise ValueError("counterfactual scores missing for some features")
    r = _raw_mi_matrix(stats)
    np.fill_diagonal(r, -np.asarray(stats.mi, dtype=np.float64) - lam * ev)
    return QuboMatrix.from_raw(r, 0.0, f"caqubo({lam:g})")


def scale(qm: QuboMatrix, mu: float) -> QuboMatrix:
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    return QuboMatrix(qm.q * mu, qm.offset * mu, f"{qm.provenance}|scaled({mu:g})")


def add_cardinality_penalty(qm: QuboMatrix, k: int, gamma: float = 1.0) -> QuboMatrix:
    """Add ``gamma * (sum(x) - k)**2`` exactly, constant included."""
    if k < 0 or k > qm.m:
        raise ValueError(f"k={k} outside [0, {qm.m}]")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    q = qm.q + gamma
    q[np.diag_indices(qm.m)] = qm.q.diagonal() + gamma * (1 - 2 * k)
    return QuboMatrix(q, qm.offset + gamma * k * k, f"{qm.provenance}|penalized({k},{gamma:g})")


def energy(qm: QuboMatrix, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (qm.m,):
        raise ValueError(f"mask length {x.size} != {qm.m}")
    return float(x @ qm.q @ x + qm.offset)


def dump_qubo(qm: QuboMatrix, path) -> None:
    """Header ``m offset``, then ``i j value`` per nonzero upper-triangle entry."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    iu, ju = np.triu_indices(qm.m)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{qm.m} {qm.offset!r}\n")
        for i, j in zip(iu, ju):
            v = qm.q[i, j]
            if v != 0:
                fh.write(f"{i} {j} {float(v)!r}\n")


def load_qubo(path) -> QuboMatrix:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: bad header, expected 'm offset'")
        m, offset = int(header[0]), float(header[1])
        q = np.zeros((m, m))
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}: line {lineno}: expected 'i j value'")
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            if not 0 <= i <= j < m:
                raise ValueError(f"{path}: line {lineno}: need 0 <= i <= j < m")
            q[i, j] = q[j, i] = v
    return QuboMatrix(q, offset, f"file({Path(path).name})")
