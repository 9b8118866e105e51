"""Benchmark games selected by string identifier."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .model import Box, ContinuousGame, Discounted, DomainError, FiniteActions, FiniteHorizon

ZOO_VERSION = "1"

_SQRT2PI = np.sqrt(2.0 * np.pi)


def _s(x):
    return np.asarray(x)[..., 0]


def _horizon(params):
    if params.get("T") is not None:
        return FiniteHorizon(int(params["T"]))
    return Discounted(float(params.get("beta", 0.9)))


def truncated_normal_pdf(y, mean, sigma, lo, hi):
    z = (y - mean) / sigma
    norm = ndtr((hi - mean) / sigma) - ndtr((lo - mean) / sigma)
    pdf = np.exp(-0.5 * z * z) / (_SQRT2PI * sigma) / norm
    return np.where((y >= lo) & (y <= hi), pdf, 0.0)


def _uniform_density(y, x, a):
    return np.ones(np.broadcast_shapes(_s(y).shape, _s(x).shape))


def _binary(n):
    return [FiniteActions([[0.0], [1.0]]) for _ in range(n)]


def const_game(players=2, value=1.0, beta=0.9, T=None):
    players = int(players)
    value = float(value)

    def cost(x, a):
        return np.full(_s(x).shape, value)

    return ContinuousGame(
        num_players=players,
        state_space=Box([0.0], [1.0]),
        action_spaces=_binary(players),
        cost_fns=[cost] * players,
        kernel_density=_uniform_density,
        cost_bound=max(abs(value), 1e-12),
        horizon=_horizon({"beta": beta, "T": T}),
        name="const",
    )


def _tg_mean(x, a1, a2):
    return 0.2 + 0.6 * x + 0.15 * (a1 - a2)


def tg_2p_smooth(sigma=0.15, beta=0.9, T=None):
    sigma = float(sigma)

    def c1(x, a):
        x, a1, a2 = _s(x), _s(a[0]), _s(a[1])
        return (x - 0.25 - 0.5 * a1) ** 2 + 0.2 * a1 * a2

    def c2(x, a):
        x, a1, a2 = _s(x), _s(a[0]), _s(a[1])
        return (x - 0.15 - 0.6 * a2) ** 2 + 0.15 * (1.0 - a1) * a2

    def density(y, x, a):
        m = _tg_mean(_s(x), _s(a[0]), _s(a[1]))
        return truncated_normal_pdf(_s(y), m, sigma, 0.0, 1.0)

    return ContinuousGame(
        num_players=2,
        state_space=Box([0.0], [1.0]),
        action_spaces=_binary(2),
        cost_fns=[c1, c2],
        kernel_density=density,
        cost_bound=1.0,
        horizon=_horizon({"beta": beta, "T": T}),
        name="tg-2p-smooth",
        params={"sigma": sigma},
    )


def tg_1p(sigma=0.15, beta=0.9, T=None):
    sigma = float(sigma)

    def cost(x, a):
        return (_s(x) - 0.3 - 0.4 * _s(a[0])) ** 2

    def density(y, x, a):
        m = 0.2 + 0.6 * _s(x) + 0.15 * (2.0 * _s(a[0]) - 1.0)
        return truncated_normal_pdf(_s(y), m, sigma, 0.0, 1.0)

    return ContinuousGame(
        num_players=1,
        state_space=Box([0.0], [1.0]),
        action_spaces=_binary(1),
        cost_fns=[cost],
        kernel_density=density,
        cost_bound=1.0,
        horizon=_horizon({"beta": beta, "T": T}),
        name="tg-1p",
        params={"sigma": sigma},
    )


def team_2p(sigma=0.15, beta=0.9, T=None):
    sigma = float(sigma)

    def cost(x, a):
        x, a1, a2 = _s(x), _s(a[0]), _s(a[1])
        return (x - 0.5 * (a1 + a2)) ** 2 + 0.1 * a1 * (1.0 - a2)

    def density(y, x, a):
        m = _tg_mean(_s(x), _s(a[0]), _s(a[1]))
        return truncated_normal_pdf(_s(y), m, sigma, 0.0, 1.0)

    return ContinuousGame(
        num_players=2,
        state_space=Box([0.0], [1.0]),
        action_spaces=_binary(2),
        cost_fns=[cost, cost],
        kernel_density=density,
        cost_bound=1.1,
        horizon=_horizon({"beta": beta, "T": T}),
        name="team-2p",
        params={"sigma": sigma},
    )


def quad_2p(sigma=0.15, beta=0.9, T=None):
    """Quadratic tracking costs with continuous actions in [0, 1]."""
    sigma = float(sigma)

    def c1(x, a):
        return (_s(x) - _s(a[0])) ** 2

    def c2(x, a):
        return (_s(x) - _s(a[1])) ** 2

    def density(y, x, a):
        m = _tg_mean(_s(x), _s(a[0]), _s(a[1]))
        return truncated_normal_pdf(_s(y), m, sigma, 0.0, 1.0)

    return ContinuousGame(
        num_players=2,
        state_space=Box([0.0], [1.0]),
        action_spaces=[Box([0.0], [1.0]), Box([0.0], [1.0])],
        cost_fns=[c1, c2],
        kernel_density=density,
        cost_bound=1.0,
        horizon=_horizon({"beta": beta, "T": T}),
        name="quad-2p",
        params={"sigma": sigma},
    )


def coupled_2p(beta=0.9, T=None):
    def c1(x, a):
        return _s(x) * _s(a[0]) * _s(a[1])

    def c2(x, a):
        return (1.0 - _s(x)) * (1.0 - _s(a[0])) * _s(a[1])

    return ContinuousGame(
        num_players=2,
        state_space=Box([0.0], [1.0]),
        action_spaces=[Box([0.0], [1.0]), Box([0.0], [1.0])],
        cost_fns=[c1, c2],
        kernel_density=_uniform_density,
        cost_bound=1.0,
        horizon=_horizon({"beta": beta, "T": T}),
        name="coupled-2p",
    )


def pc_2p_lossless(blocks=4, seed=7, beta=0.9, T=None):
    """Costs and kernel constant on ``blocks`` equal intervals of [0, 1].

    Any state net whose cell count is a multiple of ``blocks`` aligns with
    the model, which makes quantization lossless.
    """
    blocks = int(blocks)
    rng = np.random.default_rng(int(seed))
    cost_table = rng.uniform(0.0, 1.0, size=(2, blocks, 2, 2))
    trans = rng.dirichlet(np.ones(blocks), size=(blocks, 2, 2))

    def block(x):
        return np.minimum(np.floor(_s(x) * blocks), blocks - 1).astype(int)

    def idx(a):
        return np.rint(_s(a)).astype(int)

    def make_cost(i):
        def cost(x, a):
            return cost_table[i, block(x), idx(a[0]), idx(a[1])]
        return cost

    def density(y, x, a):
        return blocks * trans[block(x), idx(a[0]), idx(a[1]), block(y)]

    game = ContinuousGame(
        num_players=2,
        state_space=Box([0.0], [1.0]),
        action_spaces=_binary(2),
        cost_fns=[make_cost(0), make_cost(1)],
        kernel_density=density,
        cost_bound=1.0,
        horizon=_horizon({"beta": beta, "T": T}),
        name="pc-2p-lossless",
        params={"blocks": blocks, "seed": int(seed)},
    )
    game.params["cost_table"] = cost_table
    game.params["block_transitions"] = trans
    return game


def zs_mp(beta=0.9, T=None):
    """Matching pennies repeated on a dummy continuum of states."""

    def c1(x, a):
        same = np.rint(_s(a[0])) == np.rint(_s(a[1]))
        return np.broadcast_to(np.where(same, 1.0, -1.0), np.broadcast_shapes(
            _s(x).shape, same.shape)).astype(float)

    def c2(x, a):
        return -c1(x, a)

    return ContinuousGame(
        num_players=2,
        state_space=Box([0.0], [1.0]),
        action_spaces=_binary(2),
        cost_fns=[c1, c2],
        kernel_density=_uniform_density,
        cost_bound=1.0,
        horizon=_horizon({"beta": beta, "T": T}),
        name="zs-mp",
    )


def uw_1p(width=0.3, beta=0.9, T=None):
    """Uniform window of the given width sliding with the state."""
    width = float(width)

    def cost(x, a):
        return _s(x)

    def centre(x):
        return 0.5 * width + (1.0 - width) * x

    def density(y, x, a):
        c = centre(_s(x))
        y = _s(y)
        return np.where(np.abs(y - c) <= 0.5 * width, 1.0 / width, 0.0)

    def cell_mass(lower, upper, x, a):
        c = centre(_s(x))
        lo = np.maximum(_s(lower), c - 0.5 * width)
        hi = np.minimum(_s(upper), c + 0.5 * width)
        return np.clip(hi - lo, 0.0, None) / width

    return ContinuousGame(
        num_players=1,
        state_space=Box([0.0], [1.0]),
        action_spaces=[FiniteActions([[0.0]])],
        cost_fns=[cost],
        kernel_density=density,
        cost_bound=1.0,
        horizon=_horizon({"beta": beta, "T": T}),
        name="uw-1p",
        cell_mass=cell_mass,
        params={"width": width},
    )


def gd_2p_real(sigma=0.6, beta=0.9, T=None):
    """Gaussian drift on the real line with bounded costs."""
    sigma = float(sigma)

    def mean(x, a):
        return 0.5 * _s(x) + 0.4 * (_s(a[0]) - _s(a[1]))

    def c1(x, a):
        x, a1, a2 = _s(x), _s(a[0]), _s(a[1])
        return 1.0 - np.exp(-((x - a1) ** 2)) + 0.1 * a1 * a2

    def c2(x, a):
        x, a1, a2 = _s(x), _s(a[0]), _s(a[1])
        return 1.0 - np.exp(-((x + a2) ** 2)) + 0.1 * (1.0 - a1) * a2

    def density(y, x, a):
        z = (_s(y) - mean(x, a)) / sigma
        return np.exp(-0.5 * z * z) / (_SQRT2PI * sigma)

    def cell_mass(lower, upper, x, a):
        m = mean(x, a)
        return ndtr((_s(upper) - m) / sigma) - ndtr((_s(lower) - m) / sigma)

    return ContinuousGame(
        num_players=2,
        state_space=Box([-np.inf], [np.inf]),
        action_spaces=_binary(2),
        cost_fns=[c1, c2],
        kernel_density=density,
        cost_bound=1.1,
        horizon=_horizon({"beta": beta, "T": T}),
        name="gd-2p-real",
        cell_mass=cell_mass,
        params={"sigma": sigma},
    )


def nl_2p_real(beta=0.9, T=None):
    """Game on the real line whose kernel never leaves [-0.9, 0.9]."""

    def centre(x):
        return 0.5 * np.tanh(_s(x))

    def c1(x, a):
        x, a1, a2 = _s(x), _s(a[0]), _s(a[1])
        return 1.0 - np.exp(-((x - a1) ** 2)) + 0.1 * a1 * a2

    def c2(x, a):
        x, a2 = _s(x), _s(a[1])
        return 1.0 - np.exp(-((x + a2) ** 2))

    def density(y, x, a):
        c = centre(x) + 0.1 * (_s(a[0]) - _s(a[1]))
        return np.where(np.abs(_s(y) - c) <= 0.2, 2.5, 0.0)

    def cell_mass(lower, upper, x, a):
        c = centre(x) + 0.1 * (_s(a[0]) - _s(a[1]))
        lo = np.maximum(_s(lower), c - 0.2)
        hi = np.minimum(_s(upper), c + 0.2)
        return np.clip(hi - lo, 0.0, None) * 2.5

    return ContinuousGame(
        num_players=2,
        state_space=Box([-np.inf], [np.inf]),
        action_spaces=_binary(2),
        cost_fns=[c1, c2],
        kernel_density=density,
        cost_bound=1.1,
        horizon=_horizon({"beta": beta, "T": T}),
        name="nl-2p-real",
        cell_mass=cell_mass,
    )


@dataclass(frozen=True)
class ZooEntry:
    factory: Callable[..., ContinuousGame]
    summary: str
    defaults: dict


REGISTRY: dict[str, ZooEntry] = {
    "const": ZooEntry(const_game, "constant cost on [0,1], uniform kernel, binary actions",
                      {"players": 2, "value": 1.0, "beta": 0.9, "T": None}),
    "coupled-2p": ZooEntry(coupled_2p, "c1 = x*a1*a2 with actions in [0,1], uniform kernel",
                           {"beta": 0.9, "T": None}),
    "gd-2p-real": ZooEntry(gd_2p_real, "Gaussian drift on the real line, bounded costs",
                           {"sigma": 0.6, "beta": 0.9, "T": None}),
    "nl-2p-real": ZooEntry(nl_2p_real, "real-line game whose kernel stays in [-0.9, 0.9]",
                           {"beta": 0.9, "T": None}),
    "pc-2p-lossless": ZooEntry(pc_2p_lossless,
                               "piecewise-constant costs and kernel on aligned blocks",
                               {"blocks": 4, "seed": 7, "beta": 0.9, "T": None}),
    "quad-2p": ZooEntry(quad_2p, "quadratic tracking costs, actions in [0,1]",
                        {"sigma": 0.15, "beta": 0.9, "T": None}),
    "team-2p": ZooEntry(team_2p, "common-cost team with truncated-Gaussian kernel",
                        {"sigma": 0.15, "beta": 0.9, "T": None}),
    "tg-1p": ZooEntry(tg_1p, "single-player truncated-Gaussian MDP on [0,1]",
                      {"sigma": 0.15, "beta": 0.9, "T": None}),
    "tg-2p-smooth": ZooEntry(tg_2p_smooth,
                             "truncated-Gaussian 2-player game on [0,1], binary actions",
                             {"sigma": 0.15, "beta": 0.9, "T": None}),
    "uw-1p": ZooEntry(uw_1p, "single player, uniform window kernel sliding with x",
                      {"width": 0.3, "beta": 0.9, "T": None}),
    "zs-mp": ZooEntry(zs_mp, "zero-sum matching pennies with a dummy state",
                      {"beta": 0.9, "T": None}),
}


def make_model(model_id: str, **params) -> ContinuousGame:
    try:
        entry = REGISTRY[model_id]
    except KeyError:
        raise DomainError(f"unknown model {model_id!r}; known: {sorted(REGISTRY)}") from None
    unknown = set(params) - set(entry.defaults)
    if unknown:
        raise DomainError(f"model {model_id!r} has no parameters {sorted(unknown)}")
    return entry.factory(**{**entry.defaults, **params})


def list_models() -> str:
    lines = [f"mgapprox model zoo v{ZOO_VERSION}"]
    for key in sorted(REGISTRY):
        entry = REGISTRY[key]
        params = ", ".join(f"{k}={v}" for k, v in entry.defaults.items())
        lines.append(f"{key:16s} {entry.summary}  [{params}]")
    return "\n".join(lines)
