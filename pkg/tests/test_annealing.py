import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caqubo.annealing import (
    AnnealSchedule,
    SolverConfig,
    exhaustive_solve,
    make_partition,
    partition_solve,
    repeated_solve_vote,
    simulated_anneal,
    solve,
    vote,
)
from caqubo.infometrics import MiStats
from caqubo.qubo import CaquboParams, QuboMatrix, add_cardinality_penalty, build_caqubo, energy, scale


def random_qubo(rng, m):
    return QuboMatrix.from_raw(rng.uniform(-1, 1, (m, m)))


def brute_min(qm):
    """Minimum over itertools.product; first hit in lexicographic order wins."""
    best = None
    for bits in itertools.product((0, 1), repeat=qm.m):
        e = energy(qm, bits)
        if best is None or e < best[0]:
            best = (e, bits)
    return best


def test_separable_minimum():
    qm = QuboMatrix(np.diag([-1.0, 2.0, -3.0]))
    res = simulated_anneal(qm, seed=0)
    assert res.mask.tolist() == [True, False, True]
    assert res.energy == -4.0


def test_sa_matches_exhaustive_mostly():
    rng = np.random.default_rng(99)
    hits = 0
    for s in range(40):
        qm = random_qubo(rng, 12)
        sa, ex = simulated_anneal(qm, seed=s), exhaustive_solve(qm)
        assert sa.energy >= ex.energy - 1e-9
        hits += abs(sa.energy - ex.energy) <= 1e-9
    assert hits >= 37


def test_sa_deterministic(rng):
    qm = random_qubo(rng, 15)
    a, b = simulated_anneal(qm, seed=4), simulated_anneal(qm, seed=4)
    assert a.mask.tobytes() == b.mask.tobytes()
    assert (a.energy, a.seed, a.n_energy_evals) == (b.energy, b.seed, b.n_energy_evals)


def test_sa_result_energy_is_exact(rng):
    qm = add_cardinality_penalty(random_qubo(rng, 20), 5, 3.0)
    res = simulated_anneal(qm, seed=1)
    assert abs(res.energy - energy(qm, res.mask)) <= 1e-9
    assert res.n_energy_evals == 1 + 200 * 20


def test_sa_debug_incremental_check(rng):
    qm = add_cardinality_penalty(random_qubo(rng, 10), 4, 2.0)
    simulated_anneal(qm, AnnealSchedule(5.0, 1e-3, 50), seed=3, debug=True)


def test_sa_init_mask(rng):
    qm = random_qubo(rng, 6)
    # zero sweeps are not allowed, so use a frozen schedule and check we start from init
    res = simulated_anneal(qm, AnnealSchedule(1e-12, 1e-12, 1), seed=0, init=np.ones(6))
    assert res.energy <= energy(qm, np.ones(6))


def test_best_is_monotone_in_sweeps(rng):
    qm = random_qubo(rng, 14)
    energies = [simulated_anneal(qm, AnnealSchedule(0.5, 0.5, n), seed=8).energy for n in (1, 2, 5, 10, 40)]
    assert all(b <= a for a, b in zip(energies, energies[1:]))


@pytest.mark.parametrize("args", [(1.0, 2.0, 10), (1.0, 0.0, 10), (1.0, 0.1, 0)])
def test_bad_schedule(args):
    with pytest.raises(ValueError):
        AnnealSchedule(*args)


def test_default_schedule_scales_with_q():
    qm = QuboMatrix(np.array([[-4.0, 1.0], [1.0, 0.0]]))
    sched = AnnealSchedule.default_for(qm)
    assert (sched.t_start, sched.t_end, sched.n_sweeps) == (40.0, 1e-3, 200)
    temps = sched.temperatures()
    assert temps[0] == 40.0 and temps[-1] == pytest.approx(1e-3)
    assert np.all(np.diff(temps) < 0)


def test_exhaustive_examples():
    res = exhaustive_solve(QuboMatrix(np.array([[-5.0]])))
    assert res.mask.tolist() == [True] and res.energy == -5
    res = exhaustive_solve(QuboMatrix(np.zeros((4, 4))))
    assert res.mask.tolist() == [False] * 4 and res.energy == 0


def test_exhaustive_lexicographic_ties():
    # x0 and x1 are interchangeable, so [0, 1] must beat [1, 0]
    res = exhaustive_solve(QuboMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]])))
    assert res.mask.tolist() == [False, True]


def test_exhaustive_matches_itertools(rng):
    for _ in range(10):
        qm = random_qubo(rng, 7)
        e, bits = brute_min(qm)
        res = exhaustive_solve(qm)
        assert abs(res.energy - e) <= 1e-12
        assert res.mask.astype(int).tolist() == list(bits)


def test_exhaustive_hard_penalty_gives_k(rng):
    for _ in range(5):
        base = random_qubo(rng, 12)
        k = int(rng.integers(1, 12))
        qm = add_cardinality_penalty(base, k, 10 * base.max_abs() * 12)
        assert exhaustive_solve(qm).popcount == k


def test_exhaustive_guard():
    with pytest.raises(ValueError):
        exhaustive_solve(QuboMatrix(np.zeros((26, 26))))


def test_vote_four_of_five():
    masks = np.zeros((5, 3), dtype=bool)
    masks[:4, 1] = True  # f_j picked 4/5 times
    masks[2, 2] = True
    final, tally = vote(masks, 3)
    assert tally.tolist() == [0, 4, 1]
    assert final.tolist() == [False, True, False]


def test_vote_default_threshold_is_majority():
    masks = np.array([[1, 1], [1, 0], [0, 0], [1, 0]], dtype=bool)
    assert vote(masks)[0].tolist() == [True, False]  # threshold 2 of 4


def test_vote_is_order_independent(rng):
    masks = rng.integers(0, 2, (7, 9)).astype(bool)
    a = vote(masks, 4)[0]
    b = vote(masks[rng.permutation(7)], 4)[0]
    assert np.array_equal(a, b)


def test_repeated_single_run(rng):
    qm = random_qubo(rng, 8)
    final, tally, results = repeated_solve_vote(qm, None, 1, 1, [5])
    assert np.array_equal(final, simulated_anneal(qm, seed=5).mask)


def test_repeated_identical_seeds(rng):
    qm = random_qubo(rng, 10)
    _, tally, _ = repeated_solve_vote(qm, AnnealSchedule(1.0, 0.5, 3), 4, seeds=[2, 2, 2, 2])
    assert set(tally.tolist()) <= {0, 4}


def test_solve_dispatch(rng):
    qm = random_qubo(rng, 8)
    assert np.array_equal(solve(qm, SolverConfig("exhaustive")).mask, exhaustive_solve(qm).mask)
    voted = solve(qm, SolverConfig(n_runs=3, seed=10))
    final, _, _ = repeated_solve_vote(qm, AnnealSchedule.default_for(qm), 3, None, [10, 11, 12])
    assert np.array_equal(voted.mask, final)


def test_partition_examples():
    plan = make_partition(500, 5, 450)
    assert [len(s) for s in plan.subsets] == [100] * 5
    assert plan.budgets == (90,) * 5
    plan = make_partition(30, 1, 7)
    assert plan.subsets == (range(30),) and plan.budgets == (7,)
    plan = make_partition(10, 3, 5)
    assert [len(s) for s in plan.subsets] == [4, 3, 3]
    # quotas 2.0, 1.5, 1.5 -> floors 2, 1, 1; the remaining unit goes to block 1
    assert plan.budgets == (2, 2, 1)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 200), st.data())
def test_partition_properties(m, data):
    n = data.draw(st.integers(1, m))
    k = data.draw(st.integers(0, m))
    plan = make_partition(m, n, k)
    flat = [i for s in plan.subsets for i in s]
    assert flat == list(range(m))
    sizes = {len(s) for s in plan.subsets}
    assert sizes <= {m // n, -(-m // n)}
    assert sum(plan.budgets) == k
    for s, b in zip(plan.subsets, plan.budgets):
        assert 0 <= b <= len(s)
        assert abs(b - k * len(s) / m) < 1


def _stats(rng, m, block=None):
    cmi = rng.uniform(0, 0.3, (m, m))
    if block is not None:
        mask = np.zeros((m, m), bool)
        for s in block:
            mask[np.ix_(s, s)] = True
        cmi = np.where(mask, cmi, 0.0)
    np.fill_diagonal(cmi, 0)
    return MiStats(rng.uniform(0, 1, m), cmi, np.arange(m))


def test_partition_single_block_matches_full(rng):
    st_, e = _stats(rng, 20), rng.normal(0, 0.01, 20)
    params = CaquboParams(lam=100.0, mu=0.5, k=6, gamma=1.0)
    cfg = SolverConfig(n_runs=3, seed=21)
    mask, _ = partition_solve(st_, e, params, make_partition(20, 1, 6), cfg)
    qm = add_cardinality_penalty(scale(build_caqubo(st_, e, 100.0), 0.5), 6, 1.0)
    assert np.array_equal(mask, solve(qm, cfg).mask)


def test_partition_block_diagonal_recovers_global(rng):
    plan = make_partition(16, 2, 6)
    st_ = _stats(rng, 16, plan.subsets)
    e = rng.normal(0, 0.01, 16)
    mask, _ = partition_solve(st_, e, CaquboParams(10.0, 1.0, 6, 1.0), plan, SolverConfig("exhaustive"))
    # independent blocks with separate budgets: the global optimum is the sum of block optima
    full = build_caqubo(st_, e, 10.0).q
    expected = np.zeros(16, bool)
    for s, k in zip(plan.subsets, plan.budgets):
        idx = np.asarray(s)
        sub = add_cardinality_penalty(QuboMatrix(full[np.ix_(idx, idx)]), k, 1.0)
        expected[idx] = exhaustive_solve(sub).mask
    assert np.array_equal(mask, expected)
    assert energy(QuboMatrix(full), mask) <= energy(QuboMatrix(full), expected) + 1e-12


def test_partition_large(rng):
    st_, e = _stats(rng, 500), rng.normal(0, 0.01, 500)
    st_ = MiStats(st_.mi * 0.01, st_.cmi * 1e-4, st_.features)
    plan = make_partition(500, 5, 300)
    mask, results = partition_solve(st_, e, CaquboParams(1.0, 1.0, 300), plan, SolverConfig(n_sweeps=30))
    assert mask.size == 500
    assert abs(int(mask.sum()) - sum(plan.budgets)) <= 10
    assert len(results) == 5
