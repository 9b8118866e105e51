"""Lift finite-model equilibria back to the continuous game and certify them.

Certification is done against a refined finite model: the lifted profile is
evaluated exactly there and compared with each player's exact best response
on the refined grid (with a refined action net that contains the coarse
one).  The reported epsilon is therefore exact for that refined model and a
sampled estimate of the continuous-game gap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import Discounted, DomainError, FiniteActions, FiniteHorizon
from .quantize import (
    DEFAULT_CAP,
    ActionNet,
    StateNet,
    build_action_net,
    build_finite_game,
    build_state_net,
    estimate_tv_modulus,
    nearest_action,
    source_costs,
    source_masses,
    state_sources,
)
from .solve import (
    MarkovProfile,
    SolveReport,
    StationaryProfile,
    best_response_dp,
    player_view,
    policy_evaluation,
)

LIMITATION = ("epsilon is certified against the refined finite model; the sup over the "
              "continuous state space is sampled at refined-grid representatives")


def locate_states(game, snet: StateNet, xs) -> np.ndarray:
    custom = getattr(game, "locate", None)
    if custom is not None:
        return custom(snet, xs)
    return snet.locate(xs)


def _num_states(game, snet: StateNet) -> int:
    return snet.k + (1 if getattr(game, "pseudo_state", False) else 0)


@dataclass(eq=False)
class ExtendedPolicyProfile:
    """Finite-model profile read through the nearest-state map."""

    profile: StationaryProfile | MarkovProfile
    snet: StateNet
    game: object = None

    def indices(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        if self.game is not None:
            return locate_states(self.game, self.snet, xs)
        return self.snet.locate(xs)

    def __call__(self, x, t: int | None = None) -> list:
        j = int(self.indices(np.atleast_1d(np.asarray(x, dtype=float))[None])[0])
        if isinstance(self.profile, MarkovProfile):
            if t is None:
                raise DomainError("Markov profiles need a time index")
            return [p[t, j] for p in self.profile.probs]
        return [p[j] for p in self.profile.probs]


def extend_policy(profile, snet: StateNet, game=None) -> ExtendedPolicyProfile:
    k = profile.probs[0].shape[-2]
    expected = snet.k if game is None else _num_states(game, snet)
    if k != expected:
        raise DomainError(f"profile has {k} states but the net has {expected}")
    return ExtendedPolicyProfile(profile, snet, game)


@dataclass(eq=False)
class ExtendedValue:
    values: np.ndarray
    snet: StateNet
    game: object = None

    def __call__(self, x):
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        if self.game is not None:
            idx = locate_states(self.game, self.snet, xs)
        else:
            idx = self.snet.locate(xs)
        out = self.values[idx]
        return float(out[0]) if np.ndim(x) <= 1 else out


def _discount(game, horizon, t):
    horizon = game.horizon if horizon is None else horizon
    if isinstance(horizon, FiniteHorizon) or t is not None:
        return 1.0
    if isinstance(horizon, Discounted):
        return horizon.beta
    return float(horizon)


def apply_extended_operator(game, snet: StateNet, anet: ActionNet, profile, J, player: int,
                            horizon=None, t: int | None = None) -> np.ndarray:
    """Extended best-response operator of ``player``, one value per finite state.

    Every averaging node integrates the lifted ``J`` against its own kernel
    before the cell average is taken; the continuation is divided by the
    same row normaliser the finite model uses.
    """
    if not 0 <= player < game.num_players:
        raise DomainError(f"player index {player} out of range")
    values = J.values if isinstance(J, ExtendedValue) else np.asarray(J, dtype=float)
    sources = state_sources(game, snet)
    if values.shape != (len(sources),):
        raise DomainError("J must hold one value per finite state")
    if isinstance(profile, ExtendedPolicyProfile):
        profile = profile.profile
    if isinstance(profile, MarkovProfile):
        if t is None:
            raise DomainError("Markov profiles need a time index")
        probs = [p[t] for p in profile.probs]
    else:
        probs = profile.probs
    beta = _discount(game, horizon, t)
    joint = anet.joint_points()
    counts = anet.counts
    out = np.empty(len(sources))
    for j, (nodes, weights) in enumerate(sources):
        w = weights / weights.sum()
        costs = source_costs(game, nodes, joint)[player]
        masses = source_masses(game, snet, nodes, joint)
        cont = masses @ values
        norm = np.einsum("q,qj->j", w, masses.sum(axis=-1))
        q = np.einsum("q,qj->j", w, costs) + beta * np.einsum("q,qj->j", w, cont) / norm
        q = q.reshape(counts)
        for i in reversed(range(game.num_players)):
            if i != player:
                q = np.tensordot(q, probs[i][j], axes=([i], [0]))
        out[j] = q.min()
    return out


def fixed_point_residual(game, snet: StateNet, anet: ActionNet, report: SolveReport,
                         beta=None) -> float:
    """Largest violation of the extended optimality equation by the report's values."""
    profile = report.profile
    worst = 0.0
    for i in range(game.num_players):
        if isinstance(profile, MarkovProfile):
            for t in range(profile.T):
                tj = apply_extended_operator(game, snet, anet, profile,
                                             report.values[i, t + 1], i, t=t)
                worst = max(worst, float(np.max(np.abs(tj - report.values[i, t]))))
        else:
            horizon = Discounted(beta) if beta is not None else None
            tj = apply_extended_operator(game, snet, anet, profile, report.values[i], i,
                                         horizon)
            worst = max(worst, float(np.max(np.abs(tj - report.values[i]))))
    return worst


@dataclass(eq=False)
class EpsCertificate:
    delta: float
    refine: int
    eps: np.ndarray
    k_states: int
    k_refined: int
    operator_residual: float
    br_residual: float
    omega_hat: float
    seconds: dict = field(default_factory=dict)
    limitation: str = LIMITATION

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "refine": self.refine,
            "eps": self.eps,
            "k_states": self.k_states,
            "k_refined": self.k_refined,
            "operator_residual": self.operator_residual,
            "br_residual": self.br_residual,
            "omega_hat": self.omega_hat,
            "seconds": self.seconds,
            "limitation": self.limitation,
        }


def refine_nets(game, snet: StateNet, anet: ActionNet, refine: int, cap: int = DEFAULT_CAP):
    fine_snet = build_state_net(snet.space, snet.delta / refine, snet.resolution, snet.scheme,
                                max_states=cap)
    extra = [None if isinstance(s, FiniteActions) else p
             for s, p in zip(game.action_spaces, anet.points)]
    fine_anet = build_action_net(game.action_spaces, np.asarray(anet.deltas) / refine, extra)
    return fine_snet, fine_anet


def lift_profile(game, snet: StateNet, anet: ActionNet, profile, fine_snet: StateNet,
                 fine_anet: ActionNet):
    """Lifted profile expressed on the refined finite model."""
    coarse = locate_states(game, snet, fine_snet.points)
    extra = _num_states(game, fine_snet) - fine_snet.k
    coarse = np.concatenate([coarse, snet.k + np.arange(extra)]).astype(int)
    probs = []
    for i, p in enumerate(profile.probs):
        cols = [nearest_action(fine_anet, i, a) for a in anet.points[i]]
        lifted = np.zeros(p.shape[:-2] + (coarse.size, fine_anet.counts[i]))
        for c_idx, f_idx in enumerate(cols):
            lifted[..., f_idx] += p[..., coarse, c_idx]
        probs.append(lifted)
    return type(profile)(probs)


def certify_epsilon(game, snet: StateNet, anet: ActionNet, profile, refine: int = 4,
                    tol: float = 1e-9, horizon=None, report: SolveReport | None = None,
                    cap: int = DEFAULT_CAP, omega_samples: int = 256,
                    seed: int = 0) -> EpsCertificate:
    if refine < 2:
        raise DomainError("refine must be >= 2")
    if isinstance(profile, ExtendedPolicyProfile):
        profile = profile.profile
    horizon = game.horizon if horizon is None else horizon
    timings = {}
    start = time.perf_counter()
    fine_snet, fine_anet = refine_nets(game, snet, anet, refine, cap)
    fine = build_finite_game(game, fine_snet, fine_anet, cap=cap)
    timings["build_refined"] = time.perf_counter() - start

    start = time.perf_counter()
    lifted = lift_profile(game, snet, anet, profile, fine_snet, fine_anet)
    if isinstance(lifted, StationaryProfile) and isinstance(horizon, FiniteHorizon):
        raise DomainError("finite-horizon certification needs a Markov profile")
    values = policy_evaluation(fine, lifted, horizon)
    eps = np.empty(game.num_players)
    br_residual = 0.0
    for i in range(game.num_players):
        br, _ = best_response_dp(fine, i, lifted, horizon)
        if isinstance(lifted, MarkovProfile):
            eps[i] = float(np.max(values[i, :-1] - br[:-1]))
        else:
            eps[i] = float(np.max(values[i] - br))
            c, p = player_view(fine, i, lifted)
            bellman = (c + horizon.beta * p @ br).min(axis=1)
            br_residual = max(br_residual, float(np.max(np.abs(bellman - br))))
    timings["certify"] = time.perf_counter() - start

    start = time.perf_counter()
    omega = estimate_tv_modulus(game, snet, 2.0 * snet.delta, omega_samples, seed)
    timings["omega"] = time.perf_counter() - start
    residual = float("nan")
    if report is not None:
        start = time.perf_counter()
        beta = horizon.beta if isinstance(horizon, Discounted) else None
        residual = fixed_point_residual(game, snet, anet, report, beta)
        timings["residual"] = time.perf_counter() - start
    return EpsCertificate(snet.delta, refine, eps, _num_states(game, snet), fine.num_states,
                          residual, br_residual, omega, timings)
