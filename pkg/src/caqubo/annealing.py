"""QUBO solvers: simulated annealing, exhaustive enumeration, repeated-run
voting, and partition-and-merge for feature sets too large for one solve.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .qubo import QuboMatrix, add_cardinality_penalty, build_caqubo, energy, scale

__all__ = [
    "AnnealSchedule",
    "PartitionPlan",
    "SolveResult",
    "SolverConfig",
    "enumerate_energies",
    "exhaustive_solve",
    "make_partition",
    "partition_solve",
    "repeated_solve_vote",
    "simulated_anneal",
    "solve",
    "vote",
]

EXHAUSTIVE_MAX_M = 25
_CHUNK_BITS = 16


@dataclass(frozen=True)
class AnnealSchedule:
    t_start: float
    t_end: float = 1e-3
    n_sweeps: int = 200

    def __post_init__(self):
        if not (self.t_start >= self.t_end > 0):
            raise ValueError(f"need t_start >= t_end > 0, got {self.t_start}, {self.t_end}")
        if self.n_sweeps < 1:
            raise ValueError("n_sweeps must be >= 1")

    @classmethod
    def default_for(cls, qm: QuboMatrix, t_end: float = 1e-3, n_sweeps: int = 200) -> "AnnealSchedule":
        """Start hot relative to the instance: t_start = 10 * max|q|."""
        return cls(max(10.0 * qm.max_abs(), t_end), t_end, n_sweeps)

    def temperatures(self) -> np.ndarray:
        if self.n_sweeps == 1:
            return np.array([self.t_start])
        return self.t_start * (self.t_end / self.t_start) ** (np.arange(self.n_sweeps) / (self.n_sweeps - 1))


@dataclass(frozen=True, eq=False)
class SolveResult:
    mask: np.ndarray
    energy: float
    seed: int | None
    n_energy_evals: int
    wall_time: float = 0.0

    @property
    def popcount(self) -> int:
        return int(self.mask.sum())


def simulated_anneal(qm: QuboMatrix, schedule: AnnealSchedule | None = None, seed: int = 0, init=None, debug=False):
    """Metropolis single-flip annealing; returns the best mask ever visited.

    Each sweep proposes one flip per variable in a random order. Energy
    changes are computed incrementally from the local field ``h = q x``.
    With ``debug=True`` the running energy is re-checked against a full
    evaluation after every accepted flip.
    """
    m = qm.m
    if m < 1:
        raise ValueError("empty QUBO")
    if schedule is None:
        schedule = AnnealSchedule.default_for(qm)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    q = qm.q
    diag = q.diagonal().copy()
    if init is None:
        x = (rng.random(m) < 0.5).astype(np.float64)
    else:
        x = np.asarray(init, dtype=np.float64).copy()
        if x.shape != (m,):
            raise ValueError("init mask has the wrong length")
    h = q @ x
    cur = float(x @ h + qm.offset)
    best, best_x = cur, x.copy()
    evals = 1

    for temp in schedule.temperatures():
        order = rng.permutation(m)
        u = rng.random(m)
        for step in range(m):
            i = order[step]
            s = 1.0 - 2.0 * x[i]
            delta = diag[i] + 2.0 * s * h[i]
            evals += 1
            if delta <= 0.0 or u[step] < math.exp(-delta / temp):
                x[i] += s
                h += s * q[:, i]
                cur += delta
                if debug:
                    full = energy(qm, x)
                    if abs(full - cur) > 1e-9 * max(1.0, abs(full)):
                        raise AssertionError(f"incremental energy {cur} drifted from {full}")
                if cur < best:
                    best, best_x = cur, x.copy()

    mask = best_x.astype(bool)
    return SolveResult(mask, energy(qm, mask), seed, evals, time.perf_counter() - t0)


def _bits(start, stop, m):
    ints = np.arange(start, stop, dtype=np.int64)
    # x_0 is the most significant bit, so integer order is lexicographic mask order
    shifts = np.arange(m - 1, -1, -1, dtype=np.int64)
    return ((ints[:, None] >> shifts) & 1).astype(np.float64)


def enumerate_energies(qm: QuboMatrix) -> np.ndarray:
    """Energy of every mask, indexed by its integer code (x_0 most significant)."""
    if qm.m > 20:
        raise ValueError("refusing to materialise more than 2^20 energies")
    b = _bits(0, 1 << qm.m, qm.m)
    return np.einsum("ij,jk,ik->i", b, qm.q, b) + qm.offset


def exhaustive_solve(qm: QuboMatrix) -> SolveResult:
    """Global minimum by enumeration; ties go to the lexicographically smallest mask."""
    m = qm.m
    if m > EXHAUSTIVE_MAX_M:
        raise ValueError(f"exhaustive search limited to m <= {EXHAUSTIVE_MAX_M}, got {m}")
    t0 = time.perf_counter()
    total = 1 << m
    chunk = 1 << _CHUNK_BITS
    best_e, best_code = math.inf, 0
    for start in range(0, total, chunk):
        b = _bits(start, min(start + chunk, total), m)
        e = ((b @ qm.q) * b).sum(axis=1)
        j = int(np.argmin(e))
        if e[j] < best_e:
            best_e, best_code = float(e[j]), start + j
    mask = _bits(best_code, best_code + 1, m)[0].astype(bool)
    return SolveResult(mask, energy(qm, mask), None, total, time.perf_counter() - t0)


def vote(masks, threshold: int | None = None):
    """Keep features selected in at least `threshold` masks (default: strict majority)."""
    masks = np.asarray(masks, dtype=bool)
    n_runs = masks.shape[0]
    if threshold is None:
        threshold = math.ceil(n_runs / 2)
    if not 1 <= threshold <= n_runs:
        raise ValueError(f"threshold must lie in [1, {n_runs}]")
    tally = masks.sum(axis=0)
    return tally >= threshold, tally


def repeated_solve_vote(qm, schedule=None, n_runs: int = 5, threshold: int | None = None, seeds=None, n_jobs=1):
    """Run SA `n_runs` times and vote. Returns ``(final_mask, tally, results)``.

    `seeds` defaults to ``0 .. n_runs-1``.
    """
    if seeds is None:
        seeds = list(range(n_runs))
    seeds = list(seeds)
    if len(seeds) != n_runs:
        raise ValueError("need exactly one seed per run")
    if n_jobs == 1:
        results = [simulated_anneal(qm, schedule, s) for s in seeds]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(simulated_anneal)(qm, schedule, s) for s in seeds)
    final, tally = vote([r.mask for r in results], threshold)
    return final, tally, results


@dataclass(frozen=True)
class SolverConfig:
    """How to solve one QUBO: ``kind`` is ``"sa"`` or ``"exhaustive"``.

    With ``t_start=None`` each instance gets
    :meth:`AnnealSchedule.default_for`, using `n_sweeps` and `t_end` from here.
    """

    kind: str = "sa"
    n_sweeps: int = 200
    t_start: float | None = None
    t_end: float = 1e-3
    n_runs: int = 1
    vote_threshold: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("sa", "exhaustive"):
            raise ValueError(f"unknown solver kind {self.kind!r}")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")

    def schedule_for(self, qm: QuboMatrix) -> AnnealSchedule:
        if self.t_start is None:
            return AnnealSchedule.default_for(qm, self.t_end, self.n_sweeps)
        return AnnealSchedule(self.t_start, self.t_end, self.n_sweeps)

    def seeds(self, offset: int = 0):
        return [self.seed + offset + r for r in range(self.n_runs)]


def solve(qm: QuboMatrix, config: SolverConfig = SolverConfig(), seed_offset: int = 0) -> SolveResult:
    """Solve `qm` per `config`; repeated SA runs are merged by voting."""
    if config.kind == "exhaustive":
        return exhaustive_solve(qm)
    schedule = config.schedule_for(qm)
    seeds = config.seeds(seed_offset)
    if config.n_runs == 1:
        return simulated_anneal(qm, schedule, seeds[0])
    t0 = time.perf_counter()
    final, _, results = repeated_solve_vote(qm, schedule, config.n_runs, config.vote_threshold, seeds)
    return SolveResult(
        final, energy(qm, final), seeds[0], sum(r.n_energy_evals for r in results), time.perf_counter() - t0
    )


@dataclass(frozen=True)
class PartitionPlan:
    subsets: tuple
    budgets: tuple

    @property
    def m(self) -> int:
        return sum(len(s) for s in self.subsets)


def make_partition(m: int, n: int, k: int) -> PartitionPlan:
    """Split ``range(m)`` into `n` contiguous blocks and share `k` among them.

    Earlier blocks take the extra element when `n` does not divide `m`.
    Budgets are proportional to block size, rounded by largest remainder
    with ties to the earlier block, so they always sum to `k`.
    """
    if not 1 <= n <= m:
        raise ValueError(f"need 1 <= n <= m, got n={n}, m={m}")
    if not 0 <= k <= m:
        raise ValueError(f"need 0 <= k <= m, got k={k}")
    base, extra = divmod(m, n)
    sizes = [base + 1 if i < extra else base for i in range(n)]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    subsets = tuple(range(int(bounds[i]), int(bounds[i + 1])) for i in range(n))

    # integer arithmetic keeps the remainders exact
    floors = [k * s // m for s in sizes]
    rems = [k * s % m for s in sizes]
    short = k - sum(floors)
    for i in sorted(range(n), key=lambda i: (-rems[i], i))[:short]:
        floors[i] += 1
    return PartitionPlan(subsets, tuple(floors))


def partition_solve(stats, e, params, plan: PartitionPlan, solver: SolverConfig = SolverConfig()):
    """Solve each block's CAQUBO separately and return the union of selections.

    Block ``i`` is built from the sub-blocks of `stats` and `e`, scaled by
    ``params.mu``, penalised towards its budget, and solved with seeds
    offset by ``i * solver.n_runs``. Returns ``(mask, block_results)``.
    """
    m = stats.mi.size
    if plan.m != m:
        raise ValueError(f"plan covers {plan.m} features, instance has {m}")
    ev = np.asarray(getattr(e, "e", e), dtype=np.float64)
    mask = np.zeros(m, dtype=bool)
    results = []
    for i, (block, k_i) in enumerate(zip(plan.subsets, plan.budgets)):
        idx = np.asarray(block, dtype=np.int64)
        qm = build_caqubo(stats.subset(idx), ev[idx], params.lam)
        qm = add_cardinality_penalty(scale(qm, params.mu), k_i, params.gamma)
        res = solve(qm, solver, seed_offset=i * solver.n_runs)
        mask[idx[res.mask]] = True
        results.append(res)
    return mask, results
