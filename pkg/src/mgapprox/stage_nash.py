"""Equilibria of one-shot games in which every player minimises a cost."""

from __future__ import annotations

import itertools
import string
from dataclasses import dataclass

import numpy as np

from .model import DomainError

PIVOT_EPS = 1e-12


@dataclass(eq=False)
class NormalFormGame:
    """Cost tensors stacked as ``costs[i, a_1, ..., a_N]``."""

    costs: np.ndarray

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=float)
        if self.costs.ndim < 2 or self.costs.shape[0] != self.costs.ndim - 1:
            raise DomainError(f"cost array of shape {self.costs.shape} is not (N, m_1..m_N)")
        if not np.all(np.isfinite(self.costs)):
            raise DomainError("stage costs must be finite")

    @property
    def num_players(self) -> int:
        return self.costs.shape[0]

    @property
    def action_counts(self) -> tuple:
        return self.costs.shape[1:]


@dataclass(eq=False)
class StageSolution:
    profile: list
    values: np.ndarray
    gaps: np.ndarray
    method: str
    flagged: bool = False


def _simplex_max(A: np.ndarray) -> tuple:
    """Maximise ``sum(x)`` subject to ``A x <= 1, x >= 0`` for positive ``A``.

    Dense tableau with Bland's rule.  Returns the primal ``x`` and the dual
    multipliers of the constraints.
    """
    rows, cols = A.shape
    tab = np.zeros((rows + 1, cols + rows + 1))
    tab[:rows, :cols] = A
    tab[:rows, cols:cols + rows] = np.eye(rows)
    tab[:rows, -1] = 1.0
    tab[-1, :cols] = -1.0
    basis = list(range(cols, cols + rows))
    for _ in range(50 * (rows + cols) + 100):
        entering = next((j for j in range(cols + rows) if tab[-1, j] < -PIVOT_EPS), None)
        if entering is None:
            break
        column = tab[:rows, entering]
        candidates = [r for r in range(rows) if column[r] > PIVOT_EPS]
        ratios = [tab[r, -1] / column[r] for r in candidates]
        best = min(ratios)
        tied = [r for r, q in zip(candidates, ratios) if q <= best + 1e-14 * max(1.0, best)]
        leave = min(tied, key=lambda r: basis[r])
        tab[leave] /= tab[leave, entering]
        for r in range(rows + 1):
            if r != leave and tab[r, entering] != 0.0:
                tab[r] -= tab[r, entering] * tab[leave]
        basis[leave] = entering
    else:
        raise RuntimeError("simplex failed to terminate")
    x = np.zeros(cols + rows)
    for r, b in enumerate(basis):
        x[b] = tab[r, -1]
    return x[:cols], tab[-1, cols:cols + rows].copy()


def matrix_game_value(M) -> tuple:
    """Value of the zero-sum game where the row player minimises ``M``.

    Returns ``(value, row_mix, col_mix)``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0 or not np.all(np.isfinite(M)):
        raise DomainError("matrix game needs a finite nonempty matrix")
    low = M.min()
    B = M - low + 1.0
    # Row player: maximise sum(x) s.t. B^T x <= 1; value of B is 1/sum(x).
    x, y = _simplex_max(B.T)
    total = x.sum()
    row = np.clip(x / total, 0.0, None)
    col = np.clip(y / y.sum(), 0.0, None)
    row /= row.sum()
    col /= col.sum()
    value = float(1.0 / total + low - 1.0)
    return value, row, col


def _einsum_letters(n):
    return string.ascii_letters[:n]


def contract(u: np.ndarray, mixes, keep=()) -> np.ndarray:
    """Expectation of ``u`` over every player not in ``keep``."""
    n = u.ndim
    letters = _einsum_letters(n)
    operands = [u]
    subs = [letters]
    for j in range(n):
        if j not in keep:
            operands.append(mixes[j])
            subs.append(letters[j])
    out = "".join(letters[j] for j in sorted(keep))
    return np.einsum(",".join(subs) + "->" + out, *operands)


def _check_profile(g: NormalFormGame, profile) -> list:
    if len(profile) != g.num_players:
        raise DomainError("profile has the wrong number of players")
    out = []
    for m, p in zip(g.action_counts, profile):
        p = np.asarray(p, dtype=float)
        if p.shape != (m,):
            raise DomainError(f"mixed action of shape {p.shape}, expected ({m},)")
        out.append(p)
    return out


def profile_values(g: NormalFormGame, profile) -> np.ndarray:
    profile = _check_profile(g, profile)
    return np.array([float(contract(g.costs[i], profile)) for i in range(g.num_players)])


def deviation_values(g: NormalFormGame, profile, player: int) -> np.ndarray:
    """Expected cost of each pure action of ``player`` against the others."""
    return contract(g.costs[player], profile, keep=(player,))


def best_response_gap(g: NormalFormGame, profile) -> np.ndarray:
    profile = _check_profile(g, profile)
    gaps = np.empty(g.num_players)
    for i in range(g.num_players):
        dev = deviation_values(g, profile, i)
        gaps[i] = float(dev @ profile[i]) - float(dev.min())
    return gaps


def _solution(g, profile, method, tol):
    gaps = best_response_gap(g, profile)
    return StageSolution(profile, profile_values(g, profile), gaps, method,
                         flagged=bool(gaps.max() > tol))


def pure_equilibria(g: NormalFormGame, tol: float = 1e-12) -> list:
    """All pure equilibria in row-major order of the joint action."""
    ok = np.ones(g.action_counts, dtype=bool)
    for i in range(g.num_players):
        u = g.costs[i]
        ok &= u - u.min(axis=i, keepdims=True) <= tol
    found = []
    for idx in zip(*np.nonzero(ok)):
        profile = [np.eye(m)[a] for m, a in zip(g.action_counts, idx)]
        found.append(_solution(g, profile, "pure-enum", tol))
    return found


def _indifferent_mix(U: np.ndarray, rows, cols):
    """Mix over ``cols`` making the opponent indifferent across ``rows`` of ``U``."""
    sub = U[np.ix_(rows, cols)]
    k = len(cols)
    lhs = np.zeros((len(rows) + 1, k + 1))
    lhs[:len(rows), :k] = sub
    lhs[:len(rows), k] = -1.0
    lhs[-1, :k] = 1.0
    rhs = np.zeros(len(rows) + 1)
    rhs[-1] = 1.0
    if lhs.shape[0] == lhs.shape[1]:
        try:
            sol = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    else:
        sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    if not np.all(np.isfinite(sol)) or np.max(np.abs(lhs @ sol - rhs)) > 1e-9:
        return None
    mix = sol[:k]
    if mix.min() < -1e-10:
        return None
    return np.clip(mix, 0.0, None)


def support_enumeration(A, B, tol: float = 1e-9):
    """Yield equilibria of the bimatrix cost game ``(A, B)``.

    Support pairs are visited by increasing total size, then row support,
    then column support, each in lexicographic order.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2:
        raise DomainError("bimatrix payoffs must be matrices of equal shape")
    m, n = A.shape
    g = NormalFormGame(np.stack([A, B]))
    seen = []
    for total in range(2, m + n + 1):
        for s1 in range(max(1, total - n), min(m, total - 1) + 1):
            for rows in itertools.combinations(range(m), s1):
                for cols in itertools.combinations(range(n), total - s1):
                    y = _indifferent_mix(A, list(rows), list(cols))
                    if y is None:
                        continue
                    x = _indifferent_mix(B.T, list(cols), list(rows))
                    if x is None:
                        continue
                    row = np.zeros(m)
                    col = np.zeros(n)
                    row[list(rows)] = x / x.sum()
                    col[list(cols)] = y / y.sum()
                    sol = _solution(g, [row, col], "support-enum", tol)
                    if sol.flagged:
                        continue
                    if any(np.abs(row - r).max() <= 1e-10 and np.abs(col - c).max() <= 1e-10
                           for r, c in seen):
                        continue
                    seen.append((row, col))
                    yield sol


def bimatrix_nash(A, B, tol: float = 1e-9) -> StageSolution:
    sol = next(support_enumeration(A, B, tol), None)
    if sol is not None:
        return sol
    g = NormalFormGame(np.stack([np.asarray(A, float), np.asarray(B, float)]))
    return regret_search(g, tol, seed=0, budget=32)


def project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = ind[u - css / ind > 0][-1]
    return np.maximum(v - css[rho - 1] / rho, 0.0)


def _total_gap(g, profile) -> float:
    return float(best_response_gap(g, profile).sum())


def _gap_gradient(g: NormalFormGame, profile) -> list:
    N = g.num_players
    grads = [np.zeros_like(p) for p in profile]
    for i in range(N):
        u = g.costs[i]
        dev = deviation_values(g, profile, i)
        best = int(np.argmin(dev))
        grads[i] += dev
        if N == 1:
            continue
        u_best = np.take(u, best, axis=i)
        others = [p for j, p in enumerate(profile) if j != i]
        for j in range(N):
            if j == i:
                continue
            grads[j] += contract(u, profile, keep=(j,))
            jj = j if j < i else j - 1
            grads[j] -= contract(u_best, others, keep=(jj,))
    return grads


def regret_search(g: NormalFormGame, tol: float, seed: int, budget: int,
                  step: float = 0.1, iters: int = 400) -> StageSolution:
    """Multi-start projected (sub)gradient descent on the summed gap."""
    rng = np.random.default_rng(seed)
    counts = g.action_counts
    best_profile, best_val = None, np.inf
    for r in range(max(1, budget)):
        if r == 0:
            prof = [np.full(m, 1.0 / m) for m in counts]
        else:
            prof = [rng.dirichlet(np.ones(m)) for m in counts]
        val = _total_gap(g, prof)
        eta = step
        for _ in range(iters):
            if val <= tol * 1e-2 or eta < 1e-12:
                break
            grads = _gap_gradient(g, prof)
            cand = [project_simplex(p - eta * d) for p, d in zip(prof, grads)]
            cval = _total_gap(g, cand)
            if cval < val:
                prof, val = cand, cval
                eta = min(1.0, eta * 1.5)
            else:
                eta *= 0.5
        if val < best_val:
            best_profile, best_val = prof, val
        if best_val <= tol:
            break
    return _solution(g, best_profile, "regret-search", tol)


def nplayer_nash(g: NormalFormGame, tol: float = 1e-9, seed: int = 0,
                 budget: int = 32) -> StageSolution:
    if budget < 1:
        raise DomainError("budget must be >= 1")
    pure = pure_equilibria(g, tol)
    if pure:
        return pure[0]
    if g.num_players == 2:
        sol = next(support_enumeration(g.costs[0], g.costs[1], tol), None)
        if sol is not None:
            return sol
    return regret_search(g, tol, seed, budget)


def stage_equilibria(g: NormalFormGame, tol: float = 1e-9, seed: int = 0,
                     budget: int = 32) -> list:
    """Every equilibrium the exact methods find, or the search fallback."""
    if g.num_players == 2:
        sols = list(support_enumeration(g.costs[0], g.costs[1], tol))
    else:
        sols = pure_equilibria(g, tol)
    if sols:
        return sols
    return [regret_search(g, tol, seed, budget)]
