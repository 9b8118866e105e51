import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mgapprox.model import DomainError
from mgapprox.stage_nash import (
    NormalFormGame,
    best_response_gap,
    bimatrix_nash,
    matrix_game_value,
    nplayer_nash,
    pure_equilibria,
    regret_search,
    stage_equilibria,
    support_enumeration,
)

# row player minimises and wants to match
PENNIES = np.array([[-1.0, 1.0], [1.0, -1.0]])


def brute_gaps(costs, profile):
    """Gap of every player by looping over all joint actions."""
    N = costs.shape[0]
    counts = costs.shape[1:]
    gaps = []
    for i in range(N):
        def value(mix_i):
            total = 0.0
            for joint in itertools.product(*[range(m) for m in counts]):
                p = mix_i[joint[i]]
                for j in range(N):
                    if j != i:
                        p *= profile[j][joint[j]]
                total += p * costs[(i,) + joint]
            return total
        current = value(profile[i])
        best = min(value(np.eye(counts[i])[a]) for a in range(counts[i]))
        gaps.append(current - best)
    return np.array(gaps)


def test_matching_pennies_value_and_mixes():
    v, row, col = matrix_game_value(PENNIES)
    assert abs(v) <= 1e-12
    np.testing.assert_allclose(row, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(col, [0.5, 0.5], atol=1e-12)


def test_pure_saddle_point():
    v, row, col = matrix_game_value([[1.0, 3.0], [2.0, 2.0]])
    assert v == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(row, [0.0, 1.0], atol=1e-12)


def test_value_shifts_with_payoffs():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(3, 4))
    v, row, col = matrix_game_value(M)
    v2, row2, col2 = matrix_game_value(M + 2.5)
    assert v2 == pytest.approx(v + 2.5, abs=1e-10)
    np.testing.assert_allclose(row2, row, atol=1e-10)
    np.testing.assert_allclose(col2, col, atol=1e-10)


def test_matrix_game_rejects_non_finite():
    with pytest.raises(DomainError):
        matrix_game_value([[1.0, np.nan]])
    with pytest.raises(DomainError):
        matrix_game_value(np.zeros((0, 2)))


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_saddle_properties(M):
    v, row, col = matrix_game_value(M)
    assert np.max(row @ M) <= v + 1e-9
    assert np.min(M @ col) >= v - 1e-9
    assert M.max(axis=1).min() >= v - 1e-9
    assert v >= M.min(axis=0).max() - 1e-9
    assert row.sum() == pytest.approx(1.0) and col.sum() == pytest.approx(1.0)


def test_prisoners_dilemma():
    A = np.array([[1.0, 3.0], [0.0, 2.0]])
    sol = bimatrix_nash(A, A.T)
    np.testing.assert_allclose(sol.profile[0], [0, 1])
    np.testing.assert_allclose(sol.profile[1], [0, 1])
    np.testing.assert_allclose(sol.values, [2.0, 2.0])


def test_zero_sum_pair_matches_lp_value():
    rng = np.random.default_rng(5)
    for _ in range(10):
        A = rng.normal(size=(3, 3))
        sol = bimatrix_nash(A, -A, tol=1e-9)
        v, _, _ = matrix_game_value(A)
        assert sol.values[0] == pytest.approx(v, abs=1e-8)
        assert abs(sol.values.sum()) <= 1e-8


def test_random_bimatrix_gaps_by_deviation_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        A, B = rng.normal(size=(2, 3, 3))
        sol = bimatrix_nash(A, B, tol=1e-9)
        gaps = brute_gaps(np.stack([A, B]), sol.profile)
        assert np.all(gaps <= 1e-9)
        np.testing.assert_allclose(gaps, sol.gaps, atol=1e-10)


def test_support_enumeration_lists_all_equilibria_of_coordination():
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    sols = list(support_enumeration(A, A))
    assert len(sols) == 3
    assert sols[0].method == "support-enum"
    np.testing.assert_allclose(sols[-1].profile[0], [0.5, 0.5])


def test_single_player_is_argmin():
    g = NormalFormGame(np.array([[3.0, 1.0, 2.0]]))
    sol = nplayer_nash(g)
    np.testing.assert_array_equal(sol.profile[0], [0, 1, 0])
    assert sol.gaps[0] == 0.0


def test_decoupled_three_player_game():
    rng = np.random.default_rng(2)
    own = [rng.normal(size=m) for m in (2, 3, 2)]
    costs = np.zeros((3, 2, 3, 2))
    for i in range(3):
        shape = [1, 1, 1]
        shape[i] = -1
        costs[i] = np.broadcast_to(own[i].reshape(shape), (2, 3, 2))
    sol = nplayer_nash(NormalFormGame(costs))
    for i in range(3):
        assert int(np.argmax(sol.profile[i])) == int(np.argmin(own[i]))
    assert np.all(sol.gaps == 0.0)


def test_three_player_random_gaps_match_brute_force():
    rng = np.random.default_rng(8)
    for _ in range(5):
        g = NormalFormGame(rng.normal(size=(3, 2, 2, 2)))
        sol = nplayer_nash(g, tol=1e-6, seed=0, budget=8)
        np.testing.assert_allclose(sol.gaps, brute_gaps(g.costs, sol.profile), atol=1e-10)
        assert sol.flagged == (sol.gaps.max() > 1e-6)


def test_regret_search_without_pure_equilibrium():
    # three-player cyclic game: each player wants to mismatch the next one
    costs = np.zeros((3, 2, 2, 2))
    for a in itertools.product(range(2), repeat=3):
        for i in range(3):
            costs[(i,) + a] = 1.0 if a[i] == a[(i + 1) % 3] else 0.0
    g = NormalFormGame(costs)
    assert pure_equilibria(g) == []
    sol = regret_search(g, 1e-6, seed=0, budget=8)
    assert sol.method == "regret-search"
    np.testing.assert_allclose(sol.gaps, brute_gaps(costs, sol.profile), atol=1e-10)
    assert sol.gaps.max() <= 1e-6


def test_best_response_gap_examples():
    g = NormalFormGame(np.stack([PENNIES, -PENNIES]))
    np.testing.assert_allclose(best_response_gap(g, [np.array([.5, .5])] * 2), [0, 0], atol=1e-15)
    np.testing.assert_allclose(best_response_gap(g, [np.array([1., 0.])] * 2), [0, 2])
    pd = np.array([[1.0, 3.0], [0.0, 2.0]])
    gp = NormalFormGame(np.stack([pd, pd.T]))
    np.testing.assert_array_equal(best_response_gap(gp, [np.array([0., 1.])] * 2), [0, 0])
    with pytest.raises(DomainError):
        best_response_gap(gp, [np.array([1.0])] * 2)


def test_stage_equilibria_are_sound():
    rng = np.random.default_rng(21)
    for _ in range(10):
        g = NormalFormGame(rng.normal(size=(2, 3, 2)))
        for sol in stage_equilibria(g):
            np.testing.assert_allclose(best_response_gap(g, sol.profile), sol.gaps, atol=1e-10)
            assert sol.gaps.min() >= -1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(-50, 50))
def test_gap_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    g = NormalFormGame(rng.normal(size=(2, 3, 3)))
    profile = [rng.dirichlet(np.ones(3)) for _ in range(2)]
    shifted = NormalFormGame(g.costs + shift)
    np.testing.assert_allclose(best_response_gap(shifted, profile),
                               best_response_gap(g, profile), atol=1e-9)


def test_matrix_value_matches_highs_lp():
    from scipy.optimize import linprog

    rng = np.random.default_rng(21)
    for _ in range(30):
        M = rng.normal(size=tuple(rng.integers(1, 6, size=2)))
        m, n = M.shape
        res = linprog(np.r_[np.zeros(m), 1.0], A_ub=np.c_[M.T, -np.ones(n)], b_ub=np.zeros(n),
                      A_eq=np.r_[np.ones(m), 0.0][None], b_eq=[1.0],
                      bounds=[(0, None)] * m + [(None, None)], method="highs")
        assert matrix_game_value(M)[0] == pytest.approx(res.fun, abs=1e-9)
