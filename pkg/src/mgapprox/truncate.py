"""Compact truncations of games on unbounded state spaces.

The truncated game lives on ``K_n`` plus one pseudo-state that absorbs all
mass leaving ``K_n``.  Its costs and kernel at the pseudo-state are
averages over a sampling measure supported outside ``K_n`` (by default the
uniform law on the annulus ``K_{n+1} \\ K_n``).  After quantization the
pseudo-state is the last finite state and is never subdivided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Box, ContinuousGame, DomainError, reference_rule
from .quantize import StateNet, kernel_masses

LEAK_FLOOR = 1e-12


@dataclass(frozen=True)
class LadderConfig:
    """Centred boxes with half-width ``radius0 + slope * n``."""

    center: float = 0.0
    radius0: float = 0.0
    slope: float = 1.0
    annulus_resolution: int = 16

    def radius(self, n: int) -> float:
        return self.radius0 + self.slope * n


@dataclass(eq=False)
class Truncation:
    n: int
    K: Box
    outer: Box
    nu_nodes: np.ndarray
    nu_weights: np.ndarray
    source: str

    def inside(self, x) -> np.ndarray:
        return self.K.contains(x, atol=0.0)


def _centred_box(center, radius, dim) -> Box:
    c = np.broadcast_to(np.asarray(center, dtype=float), (dim,))
    return Box(c - radius, c + radius)


def build_truncation(game: ContinuousGame, n: int, cfg: LadderConfig = LadderConfig()) -> Truncation:
    if n < 1:
        raise DomainError("truncation index starts at 1")
    if not cfg.slope > 0 or cfg.radius(1) <= 0:
        raise DomainError("truncation ladder must have positive, strictly growing radii")
    if cfg.annulus_resolution < 1:
        raise DomainError("annulus_resolution must be >= 1")
    dim = game.state_dim
    K = _centred_box(cfg.center, cfg.radius(n), dim)
    outer = _centred_box(cfg.center, cfg.radius(n + 1), dim)
    if K.intersect(game.state_space) != K or outer.intersect(game.state_space) != outer:
        raise DomainError("truncation boxes must lie inside the state space")
    per_dim = int(math.ceil(2 * cfg.radius(n + 1) / cfg.slope * cfg.annulus_resolution))
    ref, w = reference_rule(dim, per_dim, "midpoint")
    nodes = outer.lower + ref * (outer.upper - outer.lower)
    keep = ~K.contains(nodes, atol=0.0)
    nodes, w = nodes[keep], w[keep]
    return Truncation(n, K, outer, nodes, w / w.sum(), game.name)


class TruncatedGame:
    """Game on ``K_n`` plus a pseudo-state; quantizes like a ContinuousGame."""

    pseudo_state = True

    def __init__(self, game: ContinuousGame, trunc: Truncation):
        self.base = game
        self.trunc = trunc
        self.num_players = game.num_players
        self.action_spaces = game.action_spaces
        self.cost_fns = game.cost_fns
        self.kernel_density = game.kernel_density
        self.cell_mass = game.cell_mass
        self.cost_bound = game.cost_bound
        self.horizon = game.horizon
        self.state_space = trunc.K
        self.name = f"{game.name}|K{trunc.n}"
        self.params = dict(game.params)

    @property
    def state_dim(self) -> int:
        return self.state_space.dim

    def state_sources(self, snet: StateNet) -> list:
        cells = [(snet.nodes[j], snet.weights[j]) for j in range(snet.k)]
        return cells + [(self.trunc.nu_nodes, self.trunc.nu_weights)]

    def kernel_masses(self, snet: StateNet, x, a) -> np.ndarray:
        inside = kernel_masses(self.base, snet, x, a)
        leak = np.clip(1.0 - inside.sum(axis=-1, keepdims=True), 0.0, None)
        # rounding noise is not leakage
        leak = np.where(leak <= LEAK_FLOOR, 0.0, leak)
        return np.concatenate([inside, leak], axis=-1)

    def locate(self, snet: StateNet, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = self.trunc.inside(x)
        out = np.full(inside.shape, snet.k, dtype=int)
        if np.any(inside):
            out[inside] = snet.locate(x[inside])
        return out


def build_truncated_game(game: ContinuousGame, trunc: Truncation) -> TruncatedGame:
    if trunc.source != game.name:
        raise DomainError("truncation was built for a different game")
    return TruncatedGame(game, trunc)


@dataclass(eq=False)
class LiftedTable:
    """Per-finite-state table extended to the whole space.

    Points in ``K_n`` read their cell's entry, all other points read the
    pseudo-state entry.
    """

    table: np.ndarray
    snet: StateNet
    trunc: Truncation

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.table[int(self.lookup(x[None])[0])]
        return self.table[self.lookup(x)]

    def lookup(self, xs: np.ndarray) -> np.ndarray:
        inside = self.trunc.inside(xs)
        out = np.full(inside.shape, self.snet.k, dtype=int)
        if np.any(inside):
            out[inside] = self.snet.locate(xs[inside])
        return out


def lift_from_truncation(table, trunc: Truncation, snet: StateNet) -> LiftedTable:
    table = np.asarray(table)
    if table.shape[0] != snet.k + 1:
        raise DomainError(f"expected {snet.k + 1} entries (cells plus pseudo-state)")
    return LiftedTable(table, snet, trunc)


def leakage(fgame) -> np.ndarray:
    """Pseudo-state column of a truncated finite game, rows from ``K_n`` only."""
    return fgame.transitions[:-1, :, -1]
