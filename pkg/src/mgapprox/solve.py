"""Equilibrium solvers for finite Markov games.

Profiles store one ``(k, m_i)`` array per player (stationary) or one
``(T, k, m_i)`` array per player (Markov).  Every solver finishes by
certifying its profile on the dynamic game: each player's cost under the
profile is compared with an exact best response against the others.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .model import Discounted, DomainError, FiniteHorizon
from .quantize import FiniteGame
from .stage_nash import (
    NormalFormGame,
    StageSolution,
    best_response_gap,
    matrix_game_value,
    nplayer_nash,
    profile_values,
    stage_equilibria,
)


@dataclass(eq=False)
class StationaryProfile:
    probs: list

    def copy(self) -> "StationaryProfile":
        return StationaryProfile([p.copy() for p in self.probs])


@dataclass(eq=False)
class MarkovProfile:
    probs: list

    @property
    def T(self) -> int:
        return self.probs[0].shape[0]

    def at(self, t: int) -> StationaryProfile:
        return StationaryProfile([p[t] for p in self.probs])


@dataclass(eq=False)
class SolveReport:
    profile: StationaryProfile | MarkovProfile
    values: np.ndarray
    stage_gaps: np.ndarray
    dynamic_gaps: np.ndarray
    iterations: int
    residual: float
    method: str
    flags: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    tol: float = 0.0

    @property
    def max_gap(self) -> float:
        return float(np.max(self.dynamic_gaps))

    @property
    def converged(self) -> bool:
        return "not-converged" not in self.flags

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "iterations": self.iterations,
            "residual": self.residual,
            "flags": list(self.flags),
            "max_gap": self.max_gap,
            "values": self.values,
            "profile": [p for p in self.profile.probs],
            "stage_gaps": self.stage_gaps,
            "dynamic_gaps": self.dynamic_gaps,
        }


def _beta_of(g: FiniteGame, beta):
    if beta is None:
        if not isinstance(g.horizon, Discounted):
            raise DomainError("no discount factor given and the game is not discounted")
        return g.horizon.beta
    beta = float(beta)
    if not 0.0 <= beta < 1.0:
        raise DomainError(f"discount factor must lie in [0, 1), got {beta}")
    return beta


def joint_distribution(probs) -> np.ndarray:
    """Row-major product distribution over joint actions, per state."""
    k = probs[0].shape[0]
    out = np.ones((k, 1))
    for p in probs:
        out = (out[:, :, None] * p[:, None, :]).reshape(k, -1)
    return out


def induced_chain(g: FiniteGame, profile: StationaryProfile):
    """Per-player expected stage costs ``(N, k)`` and the chain ``(k, k)``."""
    pi = joint_distribution(profile.probs)
    costs = np.einsum("nxj,xj->nx", g.costs, pi)
    trans = np.einsum("xjy,xj->xy", g.transitions, pi)
    return costs, trans


def player_view(g: FiniteGame, player: int, profile: StationaryProfile):
    """Stage costs ``(k, m_i)`` and kernel ``(k, m_i, k)`` seen by ``player``.

    The other players act according to ``profile``; ``player``'s own entry
    is ignored.
    """
    if not 0 <= player < g.num_players:
        raise DomainError(f"player index {player} out of range")
    N = g.num_players
    letters = string.ascii_lowercase[:N]
    cost = g.cost_tensor(player)
    trans = g.transition_tensor()
    subs = [f"z{letters}", ]
    ops_c = [cost]
    ops_p = [trans]
    for j in range(N):
        if j != player:
            subs.append(f"z{letters[j]}")
            ops_c.append(profile.probs[j])
            ops_p.append(profile.probs[j])
    rhs = f"z{letters[player]}"
    c = np.einsum(",".join(subs) + "->" + rhs, *ops_c)
    p_subs = [f"z{letters}y"] + subs[1:]
    p = np.einsum(",".join(p_subs) + "->" + rhs + "y", *ops_p)
    return c, p


def _solve_linear(costs, trans, beta):
    k = trans.shape[0]
    return np.linalg.solve(np.eye(k) - beta * trans, costs)


def policy_evaluation(g: FiniteGame, profile, horizon=None) -> np.ndarray:
    """Exact per-player values of a profile.

    Returns ``(N, k)`` for stationary profiles and ``(N, T+1, k)`` for Markov
    profiles, where the last time slice is the zero terminal cost.
    """
    profile = _as_markov(profile, horizon)
    if isinstance(profile, MarkovProfile):
        T = profile.T if horizon is None else _T_of(horizon)
        out = np.zeros((g.num_players, T + 1, g.num_states))
        for t in range(T - 1, -1, -1):
            c, P = induced_chain(g, profile.at(t))
            out[:, t] = c + out[:, t + 1] @ P.T
        return out
    beta = _beta_of(g, horizon.beta if isinstance(horizon, Discounted) else horizon)
    c, P = induced_chain(g, profile)
    return _solve_linear(c.T, P, beta).T


def _as_markov(profile, horizon):
    if isinstance(horizon, FiniteHorizon) and isinstance(profile, StationaryProfile):
        return MarkovProfile([np.repeat(p[None], horizon.T, axis=0) for p in profile.probs])
    return profile


def _T_of(horizon) -> int:
    if isinstance(horizon, FiniteHorizon):
        return horizon.T
    return int(horizon)


def _greedy(q: np.ndarray, current=None, atol: float = 1e-12) -> np.ndarray:
    best = np.argmin(q, axis=1)
    if current is not None:
        qmin = q[np.arange(q.shape[0]), best]
        keep = q[np.arange(q.shape[0]), current] <= qmin + atol
        best = np.where(keep, current, best)
    return best


def best_response_dp(g: FiniteGame, player: int, others, horizon=None):
    """Exact best response of ``player`` when everyone else follows ``others``.

    Discounted: policy iteration started from a value-iteration warm start,
    returning ``(values (k,), policy (k, m_i))``.  Finite horizon (Markov
    ``others``): backward induction returning ``(values (T+1, k), policy
    (T, k, m_i))``.
    """
    others = _as_markov(others, horizon)
    if isinstance(others, MarkovProfile):
        T = others.T if horizon is None else _T_of(horizon)
        m = g.action_counts[player]
        values = np.zeros((T + 1, g.num_states))
        policy = np.zeros((T, g.num_states, m))
        for t in range(T - 1, -1, -1):
            c, p = player_view(g, player, others.at(t))
            q = c + p @ values[t + 1]
            act = _greedy(q)
            policy[t, np.arange(g.num_states), act] = 1.0
            values[t] = q[np.arange(g.num_states), act]
        return values, policy
    beta = _beta_of(g, horizon.beta if isinstance(horizon, Discounted) else horizon)
    c, p = player_view(g, player, others)
    k, m = c.shape
    values = np.zeros(k)
    tol = 1e-12 * (1.0 - beta)
    for _ in range(200):
        new = (c + beta * p @ values).min(axis=1)
        done = np.max(np.abs(new - values)) <= tol
        values = new
        if done:
            break
    act = _greedy(c + beta * p @ values)
    rows = np.arange(k)
    for _ in range(10 * k * m + 10):
        values = _solve_linear(c[rows, act], p[rows, act], beta)
        nxt = _greedy(c + beta * p @ values, act)
        if np.array_equal(nxt, act):
            break
        act = nxt
    policy = np.zeros((k, m))
    policy[rows, act] = 1.0
    return values, policy


def dynamic_gaps(g: FiniteGame, profile, horizon=None) -> np.ndarray:
    """Per-player gap between the profile's cost and the best response.

    ``(N, k)`` for stationary profiles, ``(N, T, k)`` for Markov profiles.
    """
    profile = _as_markov(profile, horizon)
    values = policy_evaluation(g, profile, horizon)
    gaps = []
    for i in range(g.num_players):
        br, _ = best_response_dp(g, i, profile, horizon)
        if isinstance(profile, MarkovProfile):
            gaps.append(values[i, :-1] - br[:-1])
        else:
            gaps.append(values[i] - br)
    return np.asarray(gaps)


def stage_games(g: FiniteGame, continuation: np.ndarray, beta: float = 1.0) -> np.ndarray:
    """Stage cost tensors ``(N, k, J)`` with continuation values folded in."""
    cont = np.einsum("xjy,ny->nxj", g.transitions, continuation)
    return g.costs + beta * cont


def _stage_nfg(g: FiniteGame, U: np.ndarray, x: int) -> NormalFormGame:
    return NormalFormGame(U[:, x].reshape((g.num_players,) + g.action_counts))


def backward_induction_nash(g: FiniteGame, T: int | None = None, tol: float = 1e-9,
                            seed: int = 0, budget: int = 32) -> SolveReport:
    if T is None:
        if not isinstance(g.horizon, FiniteHorizon):
            raise DomainError("no horizon given and the game is not finite-horizon")
        T = g.horizon.T
    if T < 1:
        raise DomainError("horizon must be >= 1")
    N, k = g.num_players, g.num_states
    probs = [np.zeros((T, k, m)) for m in g.action_counts]
    values = np.zeros((N, T + 1, k))
    stage_gaps = np.zeros((T, k, N))
    for t in range(T - 1, -1, -1):
        U = stage_games(g, values[:, t + 1])
        for x in range(k):
            sol = nplayer_nash(_stage_nfg(g, U, x), tol, seed, budget)
            for i in range(N):
                probs[i][t, x] = sol.profile[i]
            values[:, t, x] = sol.values
            stage_gaps[t, x] = sol.gaps
    profile = MarkovProfile(probs)
    flags = ["stage-gap-above-tol"] if stage_gaps.max() > tol else []
    return SolveReport(profile, values, stage_gaps, dynamic_gaps(g, profile, T), T, 0.0,
                       "backward-induction", flags, tol=tol)


def _profile_distance(a: list, b: list) -> float:
    return float(sum(np.abs(p - q).sum() for p, q in zip(a, b)))


def _select(candidates, previous):
    if previous is None or len(candidates) == 1:
        return candidates[0]
    return min(candidates, key=lambda s: _profile_distance(s.profile, previous))


def _nash_sweep(g, J, beta, previous, tol, seed, budget):
    U = stage_games(g, J, beta)
    N, k = g.num_players, g.num_states
    V = np.empty((N, k))
    gaps = np.empty((k, N))
    chosen = []
    for x in range(k):
        nfg = _stage_nfg(g, U, x)
        prev = None if previous is None else [p[x] for p in previous]
        sol = None
        if prev is not None:
            # The previous profile, if still an equilibrium, is the closest one.
            prev_gaps = best_response_gap(nfg, prev)
            if prev_gaps.max() <= tol:
                sol = StageSolution(prev, profile_values(nfg, prev), prev_gaps, "kept")
        if sol is None:
            sol = _select(stage_equilibria(nfg, tol, seed, budget), prev)
        V[:, x] = sol.values
        gaps[x] = sol.gaps
        chosen.append(sol.profile)
    probs = [np.stack([c[i] for c in chosen]) for i in range(N)]
    return V, gaps, probs


def nash_value_iteration(g: FiniteGame, beta: float | None = None, tol: float = 1e-8,
                         max_iter: int = 2000, damping: float = 0.5, seed: int = 0,
                         stage_tol: float = 1e-9, budget: int = 32,
                         fallback: bool = True) -> SolveReport:
    """Damped value iteration on stage-game equilibrium values.

    At each state the stage equilibrium closest to the previous iterate's
    profile is kept.  Stops when the damped step ``max |J_new - J|`` is at
    most ``tol * (1 - beta)``.  Falls back to ``stationary_regret_search``
    when the run does not converge or the certified gap exceeds what the
    stopping rule can explain.
    """
    beta = _beta_of(g, beta)
    if not 0.0 < damping <= 1.0:
        raise DomainError("damping must lie in (0, 1]")
    N, k = g.num_players, g.num_states
    J = np.zeros((N, k))
    previous = None
    history = []
    converged = False
    iterations = 0
    if beta == 0.0:
        J, gaps, probs = _nash_sweep(g, J, beta, None, stage_tol, seed, budget)
        converged, iterations, residual = True, 1, 0.0
        history.append(0.0)
    else:
        for iterations in range(1, max_iter + 1):
            V, _, previous = _nash_sweep(g, J, beta, previous, stage_tol, seed, budget)
            new = (1.0 - damping) * J + damping * V
            residual = float(np.max(np.abs(new - J)))
            history.append(residual)
            J = new
            if residual <= tol * (1.0 - beta):
                converged = True
                break
        _, gaps, probs = _nash_sweep(g, J, beta, previous, stage_tol, seed, budget)
    profile = StationaryProfile(probs)
    flags = [] if converged else ["not-converged"]
    if gaps.max() > stage_tol:
        flags.append("stage-gap-above-tol")
    report = SolveReport(profile, J, gaps, dynamic_gaps(g, profile, beta), iterations,
                         residual, "nash-value-iteration", flags, history, tol=tol)
    # Gap the stopping rule alone can leave behind (contraction bound).
    expected = 2.0 * tol / damping + stage_tol / (1.0 - beta)
    if fallback and (not converged or report.max_gap > expected):
        alt = stationary_regret_search(g, beta, tol, budget, seed, init=profile)
        if alt.max_gap < report.max_gap:
            alt.flags = sorted(set(alt.flags) | set(flags) | {"regret-fallback"})
            alt.residual_history = history
            alt.iterations += iterations
            return alt
    return report


def _objective(g, probs, beta) -> float:
    return float(np.max(dynamic_gaps(g, StationaryProfile(probs), beta)))


def stationary_regret_search(g: FiniteGame, beta: float | None = None, tol: float = 1e-8,
                             budget: int = 32, seed: int = 0, init=None,
                             max_steps: int = 200) -> SolveReport:
    """Seeded multi-start local search on the largest dynamic best-response gap.

    Moves mix a player's (or every player's) policy toward its exact best
    response and are accepted only when the objective drops.
    """
    beta = _beta_of(g, beta)
    rng = np.random.default_rng(seed)
    k = g.num_states
    starts = []
    if init is not None:
        starts.append([np.array(p, dtype=float) for p in init.probs])
    starts.append([np.full((k, m), 1.0 / m) for m in g.action_counts])
    while len(starts) < max(budget, len(starts)):
        starts.append([rng.dirichlet(np.ones(m), size=k) for m in g.action_counts])
    steps = (1.0, 0.5, 0.25, 0.1, 0.05, 0.01)
    best_probs, best_val = None, np.inf
    evaluations = 0
    for probs in starts:
        val = _objective(g, probs, beta)
        evaluations += 1
        for _ in range(max_steps):
            if val <= tol:
                break
            prof = StationaryProfile(probs)
            brs = [best_response_dp(g, i, prof, beta)[1] for i in range(g.num_players)]
            movers = [None] + list(range(g.num_players))
            cand_best, cand_val = None, val
            for who in movers:
                for eta in steps:
                    cand = [
                        (1 - eta) * p + eta * br if who is None or who == i else p
                        for i, (p, br) in enumerate(zip(probs, brs))
                    ]
                    cv = _objective(g, cand, beta)
                    evaluations += 1
                    if cv < cand_val - 1e-15:
                        cand_best, cand_val = cand, cv
            if cand_best is None:
                break
            probs, val = cand_best, cand_val
        if val < best_val:
            best_probs, best_val = probs, val
        if best_val <= tol:
            break
    profile = StationaryProfile(best_probs)
    values = policy_evaluation(g, profile, beta)
    gaps = dynamic_gaps(g, profile, beta)
    flags = ["gap-above-tol"] if gaps.max() > tol else []
    return SolveReport(profile, values, np.zeros((k, g.num_players)), gaps, evaluations,
                       0.0, "regret-search", flags, tol=tol)


def shapley_operator(g: FiniteGame, J: np.ndarray, beta: float):
    """One application of the min-max operator; also returns the saddle mixes."""
    U = g.costs[0] + beta * np.einsum("xjy,y->xj", g.transitions, J)
    m1, m2 = g.action_counts
    out = np.empty(g.num_states)
    rows, cols = [], []
    for x in range(g.num_states):
        v, r, c = matrix_game_value(U[x].reshape(m1, m2))
        out[x] = v
        rows.append(r)
        cols.append(c)
    return out, np.asarray(rows), np.asarray(cols)


def _stop_threshold(tol: float, beta: float) -> float:
    return tol * (1.0 - beta) / (2.0 * beta) if beta > 0 else np.inf


def shapley_iteration(g: FiniteGame, beta: float | None = None, tol: float = 1e-8,
                      max_iter: int = 100_000) -> SolveReport:
    beta = _beta_of(g, beta)
    if g.num_players != 2 or np.max(np.abs(g.costs[0] + g.costs[1])) > 1e-12:
        raise DomainError("Shapley iteration needs a two-player zero-sum game")
    J = np.zeros(g.num_states)
    threshold = _stop_threshold(tol, beta)
    history = []
    converged = False
    for it in range(1, max_iter + 1):
        new, _, _ = shapley_operator(g, J, beta)
        residual = float(np.max(np.abs(new - J)))
        history.append(residual)
        J = new
        if residual <= threshold:
            converged = True
            break
    _, rows, cols = shapley_operator(g, J, beta)
    profile = StationaryProfile([rows, cols])
    flags = [] if converged else ["not-converged"]
    return SolveReport(profile, np.stack([J, -J]), np.zeros((g.num_states, 2)),
                       dynamic_gaps(g, profile, beta), it, residual, "shapley", flags,
                       history, tol=tol)


def team_operator(g: FiniteGame, J: np.ndarray, beta: float):
    Q = g.costs[0] + beta * np.einsum("xjy,y->xj", g.transitions, J)
    act = np.argmin(Q, axis=1)
    return Q[np.arange(g.num_states), act], act


def best_response_operator(g: FiniteGame, player: int, others: StationaryProfile,
                           J: np.ndarray, beta: float) -> np.ndarray:
    c, p = player_view(g, player, others)
    return (c + beta * p @ J).min(axis=1)


def team_value_iteration(g: FiniteGame, beta: float | None = None, tol: float = 1e-8,
                         max_iter: int = 100_000) -> SolveReport:
    beta = _beta_of(g, beta)
    if np.max(np.abs(g.costs - g.costs[0])) > 1e-12:
        raise DomainError("team value iteration needs a common cost")
    J = np.zeros(g.num_states)
    threshold = _stop_threshold(tol, beta)
    history = []
    converged = False
    for it in range(1, max_iter + 1):
        new, _ = team_operator(g, J, beta)
        residual = float(np.max(np.abs(new - J)))
        history.append(residual)
        J = new
        if residual <= threshold:
            converged = True
            break
    _, act = team_operator(g, J, beta)
    per_player = np.unravel_index(act, g.action_counts)
    probs = [np.eye(m)[idx] for m, idx in zip(g.action_counts, per_player)]
    profile = StationaryProfile(probs)
    flags = [] if converged else ["not-converged"]
    values = np.repeat(J[None], g.num_players, axis=0)
    return SolveReport(profile, values, np.zeros((g.num_states, g.num_players)),
                       dynamic_gaps(g, profile, beta), it, residual, "team-value-iteration",
                       flags, history, tol=tol)
