"""Continuous N-player Markov games: spaces, plug-in callbacks and quadrature.

Callbacks follow numpy broadcasting conventions. A state batch has shape
``(..., d)`` and a joint action is a tuple with one ``(..., d_i)`` array per
player; costs return ``(...)``.  ``kernel_density(y, x, a)`` returns the
Lebesgue density of the next state ``y`` given ``(x, a)`` with the same
broadcasting.  The optional ``cell_mass(lower, upper, x, a)`` returns the
exact probability of the box ``[lower, upper]`` and is used in place of
quadrature whenever present.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

DEFAULT_RESOLUTION = 8
# Resolution used when a whole bounded region is integrated in one go.
FULL_BOX_NODES = 4096


class DomainError(ValueError):
    """Raised when an argument lies outside its declared domain."""


class ResourceError(RuntimeError):
    """Raised when a construction would exceed the configured size cap."""


class QuadratureError(RuntimeError):
    """Raised when quadrature loses too much probability mass."""


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box; bounds may be infinite for non-compact domains."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size == 0:
            raise DomainError(f"bad box bounds {lo!r}, {hi!r}")
        if not np.all(lo < hi):
            raise DomainError(f"box needs lower < upper, got {lo} and {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, x, atol: float = 1e-12) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - atol) & (x <= self.upper + atol), axis=-1)

    def intersect(self, other: "Box") -> "Box | None":
        lo = np.maximum(self.lower, other.lower)
        hi = np.minimum(self.upper, other.upper)
        if np.any(lo >= hi):
            return None
        return Box(lo, hi)

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self):
        return hash((tuple(self.lower), tuple(self.upper)))

    def __repr__(self):
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"


@dataclass(frozen=True, eq=False)
class FiniteActions:
    """Explicit finite action set, stored as an ``(m, d)`` array of points."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise DomainError("finite action set needs at least one point")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def contains(self, a, atol: float = 1e-12) -> bool:
        a = np.asarray(a, dtype=float).reshape(-1)
        return bool(np.any(np.max(np.abs(self.points - a), axis=1) <= atol))


ActionSpace = Union[Box, FiniteActions]


@dataclass(frozen=True)
class Discounted:
    beta: float

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise DomainError(f"discount factor must lie in [0, 1), got {self.beta}")


@dataclass(frozen=True)
class FiniteHorizon:
    T: int

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise DomainError(f"horizon must be a positive integer, got {self.T}")


Horizon = Union[Discounted, FiniteHorizon]

CostFn = Callable[[np.ndarray, tuple], np.ndarray]
DensityFn = Callable[[np.ndarray, np.ndarray, tuple], np.ndarray]
CellMassFn = Callable[[np.ndarray, np.ndarray, np.ndarray, tuple], np.ndarray]


@dataclass(eq=False)
class ContinuousGame:
    num_players: int
    state_space: Box
    action_spaces: list
    cost_fns: list
    kernel_density: DensityFn
    cost_bound: float
    horizon: Horizon = field(default_factory=lambda: Discounted(0.9))
    name: str = "custom"
    cell_mass: CellMassFn | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_players < 1:
            raise DomainError("a game needs at least one player")
        if len(self.action_spaces) != self.num_players or len(self.cost_fns) != self.num_players:
            raise DomainError("one action space and one cost function per player required")
        if self.cost_bound <= 0:
            raise DomainError("cost_bound must be positive")

    @property
    def state_dim(self) -> int:
        return self.state_space.dim


def as_joint_action(game: ContinuousGame, a: Sequence) -> tuple:
    """Normalise a joint action to a tuple of 1-D arrays and check membership."""
    if len(a) != game.num_players:
        raise DomainError(f"expected {game.num_players} actions, got {len(a)}")
    out = []
    for i, (ai, space) in enumerate(zip(a, game.action_spaces)):
        ai = np.atleast_1d(np.asarray(ai, dtype=float))
        if ai.shape != (space.dim,):
            raise DomainError(f"action of player {i} has shape {ai.shape}")
        if not space.contains(ai):
            raise DomainError(f"action {ai} of player {i} outside its action space")
        out.append(ai)
    return tuple(out)


def _as_state(game: ContinuousGame, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (game.state_dim,):
        raise DomainError(f"state has shape {x.shape}, expected ({game.state_dim},)")
    if not game.state_space.contains(x):
        raise DomainError(f"state {x} outside {game.state_space}")
    return x


def eval_cost(game: ContinuousGame, player: int, x, a) -> float:
    if not 0 <= player < game.num_players:
        raise DomainError(f"player index {player} out of range")
    x = _as_state(game, x)
    a = as_joint_action(game, a)
    return float(game.cost_fns[player](x, a))


@dataclass(eq=False)
class Quadrature:
    nodes: np.ndarray
    weights: np.ndarray
    scheme: str
    resolution: int


def reference_rule(dim: int, resolution: int, scheme: str = "midpoint"):
    """Tensor rule on the unit cube: ``(nodes (n, dim), weights (n,))``."""
    if resolution < 1:
        raise DomainError("quadrature resolution must be >= 1")
    if scheme == "midpoint":
        t = (np.arange(resolution) + 0.5) / resolution
        w = np.full(resolution, 1.0 / resolution)
    elif scheme == "gauss-legendre":
        t, w = np.polynomial.legendre.leggauss(resolution)
        t = 0.5 * (t + 1.0)
        w = 0.5 * w
    else:
        raise DomainError(f"unknown quadrature scheme {scheme!r}")
    grids = np.meshgrid(*([t] * dim), indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=-1)
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.prod(np.stack([g.reshape(-1) for g in wgrids], axis=-1), axis=-1)
    return nodes, weights


def make_quadrature(region: Box, resolution: int = DEFAULT_RESOLUTION,
                    scheme: str = "midpoint") -> Quadrature:
    if not region.bounded:
        raise DomainError("quadrature needs a bounded region")
    ref_nodes, ref_weights = reference_rule(region.dim, resolution, scheme)
    span = region.upper - region.lower
    nodes = region.lower + ref_nodes * span
    return Quadrature(nodes, ref_weights * region.volume, scheme, resolution)


def _full_box_resolution(dim: int) -> int:
    return max(DEFAULT_RESOLUTION, int(round(FULL_BOX_NODES ** (1.0 / dim))))


def eval_kernel_mass(game: ContinuousGame, region: Box, x, a,
                     quad: Quadrature | None = None) -> float:
    """Probability that the next state lands in ``region`` given ``(x, a)``.

    Regions are clipped to the state space first; a region that misses it
    has mass 0.
    """
    x = _as_state(game, x)
    a = as_joint_action(game, a)
    clipped = region.intersect(game.state_space)
    if clipped is None:
        return 0.0
    if quad is None and game.cell_mass is not None:
        return float(game.cell_mass(clipped.lower, clipped.upper, x, a))
    if quad is None:
        quad = make_quadrature(clipped, _full_box_resolution(clipped.dim))
    dens = game.kernel_density(quad.nodes, x, a)
    return float(np.dot(quad.weights, dens))


@dataclass
class ValidationReport:
    normalization_defect: float
    max_abs_cost: float
    cost_bound: float
    cost_bound_ok: bool
    tv_proxy: float
    samples: int


def sample_state(box: Box, rng: np.random.Generator, size=None) -> np.ndarray:
    lo = np.where(np.isfinite(box.lower), box.lower, -10.0)
    hi = np.where(np.isfinite(box.upper), box.upper, 10.0)
    shape = (box.dim,) if size is None else (size, box.dim)
    return rng.uniform(lo, hi, size=shape)


def sample_action(space: ActionSpace, rng: np.random.Generator) -> np.ndarray:
    if isinstance(space, FiniteActions):
        return space.points[rng.integers(space.points.shape[0])].copy()
    return rng.uniform(space.lower, space.upper)


def validate_game(game: ContinuousGame, quad: Quadrature | None = None,
                  samples: int = 32, seed: int = 0,
                  neighbour: float = 1e-3) -> ValidationReport:
    """Numerically spot-check boundedness, normalisation and kernel continuity.

    The normalisation defect uses the exact cell-mass callback when the game
    has one.  The continuity proxy is the largest L1 distance between the
    densities at ``x`` and at a point ``neighbour`` away, with the same joint
    action.
    """
    if samples < 1:
        raise DomainError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    space = game.state_space
    if quad is None and space.bounded:
        quad = make_quadrature(space, _full_box_resolution(space.dim))
    defect = 0.0
    max_cost = 0.0
    tv = 0.0
    for _ in range(samples):
        x = sample_state(space, rng)
        a = tuple(sample_action(s, rng) for s in game.action_spaces)
        for c in game.cost_fns:
            max_cost = max(max_cost, abs(float(c(x, a))))
        if game.cell_mass is not None:
            total = float(game.cell_mass(space.lower, space.upper, x, a))
            defect = max(defect, abs(total - 1.0))
        if quad is not None:
            dens = game.kernel_density(quad.nodes, x, a)
            if game.cell_mass is None:
                defect = max(defect, abs(float(np.dot(quad.weights, dens)) - 1.0))
            step = rng.uniform(-1.0, 1.0, size=space.dim) * neighbour
            y = np.clip(x + step, space.lower, space.upper)
            dens_y = game.kernel_density(quad.nodes, y, a)
            tv = max(tv, float(np.dot(quad.weights, np.abs(dens - dens_y))))
    return ValidationReport(
        normalization_defect=defect,
        max_abs_cost=max_cost,
        cost_bound=game.cost_bound,
        cost_bound_ok=max_cost <= game.cost_bound,
        tv_proxy=tv,
        samples=samples,
    )
