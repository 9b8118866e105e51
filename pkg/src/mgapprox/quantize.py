"""Grid quantizers and the finite game they induce.

State cells are axis-aligned and share the representative at their centre,
so under the max-coordinate metric a grid with side at most ``2*delta`` is a
``delta``-net.  A point on a shared face belongs to the cell with the
smaller index (the first cell along each axis is closed on both sides).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    DEFAULT_RESOLUTION,
    Box,
    ContinuousGame,
    Discounted,
    DomainError,
    FiniteActions,
    FiniteHorizon,
    Horizon,
    QuadratureError,
    ResourceError,
    reference_rule,
    sample_action,
    sample_state,
)

DEFAULT_CAP = 2_000_000


@dataclass(eq=False)
class StateNet:
    space: Box
    delta: float
    counts: tuple
    points: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    resolution: int = DEFAULT_RESOLUTION
    scheme: str = "midpoint"

    @property
    def k(self) -> int:
        return self.points.shape[0]

    @property
    def side(self) -> np.ndarray:
        return (self.space.upper - self.space.lower) / np.asarray(self.counts)

    def cell(self, j: int) -> Box:
        return Box(self.lower[j], self.upper[j])

    def locate(self, x) -> np.ndarray:
        """Cell index of every point in a ``(..., d)`` batch."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.space.dim:
            raise DomainError(f"state dimension {x.shape[-1]} != {self.space.dim}")
        if not np.all(self.space.contains(x)):
            raise DomainError("state outside the quantized space")
        rel = (x - self.space.lower) / self.side
        idx = np.ceil(rel).astype(int) - 1
        idx = np.clip(idx, 0, np.asarray(self.counts) - 1)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.counts)


def _grid(space: Box, delta: float, max_states: int):
    span = space.upper - space.lower
    counts = tuple(int(max(1, math.ceil(s / (2.0 * delta) - 1e-9))) for s in span)
    total = math.prod(counts)
    if total > max_states:
        raise ResourceError(
            f"delta={delta} needs {total} cells, above the cap of {max_states}")
    side = span / np.asarray(counts)
    axes = np.meshgrid(*[np.arange(n) for n in counts], indexing="ij")
    idx = np.stack([a.reshape(-1) for a in axes], axis=-1)
    lower = space.lower + idx * side
    upper = lower + side
    # Snap the outer faces so the cells tile the box exactly.
    last = idx == np.asarray(counts) - 1
    upper = np.where(last, space.upper, upper)
    return counts, lower, upper


def build_state_net(space: Box, delta: float, resolution: int = DEFAULT_RESOLUTION,
                    scheme: str = "midpoint", max_states: int = DEFAULT_CAP) -> StateNet:
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    if not space.bounded:
        raise DomainError("state nets need a bounded box")
    counts, lower, upper = _grid(space, delta, max_states)
    points = 0.5 * (lower + upper)
    ref_nodes, ref_weights = reference_rule(space.dim, resolution, scheme)
    span = upper - lower
    nodes = lower[:, None, :] + ref_nodes[None, :, :] * span[:, None, :]
    weights = ref_weights[None, :] * np.prod(span, axis=1)[:, None]
    return StateNet(space, float(delta), counts, points, lower, upper, nodes, weights,
                    resolution, scheme)


def nearest_state(net: StateNet, x) -> int:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return int(net.locate(x))


@dataclass(eq=False)
class ActionNet:
    deltas: tuple
    points: list

    @property
    def counts(self) -> tuple:
        return tuple(p.shape[0] for p in self.points)

    @property
    def num_joint(self) -> int:
        return math.prod(self.counts)

    def joint_points(self) -> tuple:
        """Per-player ``(num_joint, d_i)`` arrays listing joint actions row-major."""
        grids = np.meshgrid(*[np.arange(n) for n in self.counts], indexing="ij")
        return tuple(p[g.reshape(-1)] for p, g in zip(self.points, grids))


def build_action_net(spaces, delta, extra_points=None) -> ActionNet:
    """Per-player nets; finite spaces are kept as they are.

    ``extra_points`` (one array or None per player) are placed first, ahead of
    the grid points, so a coarser net can be embedded in a finer one.
    """
    n = len(spaces)
    deltas = tuple(float(d) for d in np.broadcast_to(np.asarray(delta, dtype=float), (n,)))
    points = []
    for i, space in enumerate(spaces):
        if isinstance(space, FiniteActions):
            points.append(space.points.copy())
            continue
        if not deltas[i] > 0:
            raise DomainError("action delta must be positive")
        _, lo, hi = _grid(space, deltas[i], DEFAULT_CAP)
        grid = 0.5 * (lo + hi)
        if extra_points is not None and extra_points[i] is not None:
            extra = np.asarray(extra_points[i], dtype=float).reshape(-1, space.dim)
            keep = [g for g in grid if not np.any(np.all(np.isclose(extra, g, atol=1e-12), axis=1))]
            grid = np.vstack([extra] + ([np.asarray(keep)] if keep else []))
        points.append(grid)
    return ActionNet(deltas, points)


def nearest_action(net: ActionNet, player: int, a) -> int:
    if not 0 <= player < len(net.points):
        raise DomainError(f"player index {player} out of range")
    pts = net.points[player]
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (pts.shape[1],):
        raise DomainError(f"action shape {a.shape} does not match net")
    return int(np.argmin(np.max(np.abs(pts - a), axis=1)))


@dataclass(eq=False)
class FiniteGame:
    """Finite Markov game; joint actions are flattened row-major.

    ``costs`` has shape ``(N, k, J)`` and ``transitions`` ``(k, J, k)``.
    """

    costs: np.ndarray
    transitions: np.ndarray
    action_counts: tuple
    horizon: Horizon | None = None
    cost_bound: float | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=float)
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.action_counts = tuple(int(m) for m in self.action_counts)
        N, k, J = self.costs.shape
        if N != len(self.action_counts) or J != math.prod(self.action_counts):
            raise DomainError("cost tensor does not match action counts")
        if self.transitions.shape != (k, J, k):
            raise DomainError(f"transition tensor has shape {self.transitions.shape}")
        if self.cost_bound is None:
            self.cost_bound = float(np.max(np.abs(self.costs))) if self.costs.size else 0.0

    @property
    def num_players(self) -> int:
        return self.costs.shape[0]

    @property
    def num_states(self) -> int:
        return self.costs.shape[1]

    @property
    def num_joint(self) -> int:
        return self.costs.shape[2]

    @property
    def beta(self) -> float | None:
        return self.horizon.beta if isinstance(self.horizon, Discounted) else None

    def cost_tensor(self, player: int) -> np.ndarray:
        return self.costs[player].reshape((self.num_states,) + self.action_counts)

    def transition_tensor(self) -> np.ndarray:
        k = self.num_states
        return self.transitions.reshape((k,) + self.action_counts + (k,))

    def to_json(self) -> str:
        if isinstance(self.horizon, Discounted):
            horizon = {"beta": self.horizon.beta}
        elif isinstance(self.horizon, FiniteHorizon):
            horizon = {"T": self.horizon.T}
        else:
            horizon = None
        doc = {
            "k": self.num_states,
            "action_counts": list(self.action_counts),
            "costs": self.costs,
            "transitions": self.transitions,
            "beta_or_T": horizon,
            "cost_bound": self.cost_bound,
            "provenance": self.provenance,
        }
        return dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "FiniteGame":
        import json

        doc = json.loads(text)
        horizon = doc.get("beta_or_T")
        if horizon is None:
            h = None
        elif "beta" in horizon:
            h = Discounted(float(horizon["beta"]))
        else:
            h = FiniteHorizon(int(horizon["T"]))
        return cls(
            costs=np.asarray(doc["costs"], dtype=float),
            transitions=np.asarray(doc["transitions"], dtype=float),
            action_counts=tuple(doc["action_counts"]),
            horizon=h,
            cost_bound=doc.get("cost_bound"),
            provenance=doc.get("provenance", {}),
        )


def _fmt_float(v: float) -> str:
    if math.isnan(v) or math.isinf(v):
        return "null"
    return format(v, ".17g")


def dumps(obj, indent: int | None = None) -> str:
    """JSON text with every real printed to 17 significant digits."""
    import json

    def enc(o, level):
        pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
        end = "" if indent is None else "\n" + " " * (indent * level)
        sep = ", " if indent is None else ","
        if isinstance(o, np.ndarray):
            o = o.tolist()
        if isinstance(o, (bool, np.bool_)):
            return "true" if o else "false"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            return _fmt_float(float(o))
        if o is None:
            return "null"
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [pad + json.dumps(str(key)) + ": " + enc(val, level + 1)
                     for key, val in o.items()]
            return "{" + sep.join(items) + end + "}"
        if isinstance(o, (list, tuple)):
            if not o:
                return "[]"
            if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[" + sep.join(pad + enc(v, level + 1) for v in o) + end + "]"
        raise TypeError(f"cannot serialise {type(o).__name__}")

    return enc(obj, 0)


def normalize_rows(rows: np.ndarray) -> np.ndarray:
    """Scale each row to a probability vector whose exact sum is 1.0.

    Leftover rounding is pushed onto the largest entry until ``math.fsum``
    of the row returns exactly 1.0.
    """
    out = rows / rows.sum(axis=-1, keepdims=True)
    flat = out.reshape(-1, out.shape[-1])
    for row in flat:
        for _ in range(8):
            s = math.fsum(row)
            if s == 1.0:
                break
            j = int(np.argmax(row))
            row[j] = row[j] + (1.0 - s)
    return out


def kernel_masses(game, snet: StateNet, x: np.ndarray, a: tuple) -> np.ndarray:
    """Mass the kernel puts on every finite state, batched over ``(x, a)``.

    ``x`` is ``(..., d)`` and each ``a[i]`` is ``(..., d_i)``, mutually
    broadcastable; the result is ``(..., k)``.
    """
    custom = getattr(game, "kernel_masses", None)
    if custom is not None:
        return custom(snet, x, a)
    xe = x[..., None, :]
    ae = tuple(p[..., None, :] for p in a)
    lead = np.broadcast_shapes(x.shape[:-1], *[p.shape[:-1] for p in a])
    if game.cell_mass is not None:
        masses = game.cell_mass(snet.lower, snet.upper, xe, ae)
        return np.broadcast_to(masses, lead + (snet.k,)).astype(float)
    ny = snet.nodes.shape[1]
    y = snet.nodes.reshape(-1, snet.space.dim)
    dens = np.broadcast_to(game.kernel_density(y, xe, ae), lead + (snet.k * ny,))
    return np.einsum("...kq,kq->...k", dens.reshape(lead + (snet.k, ny)), snet.weights)


def state_sources(game, snet: StateNet) -> list:
    """Averaging rule ``(nodes, weights)`` behind every finite state."""
    custom = getattr(game, "state_sources", None)
    if custom is not None:
        return custom(snet)
    return [(snet.nodes[j], snet.weights[j]) for j in range(snet.k)]


def source_costs(game, nodes: np.ndarray, joint: tuple) -> np.ndarray:
    """Costs at averaging nodes: ``(N, n, J)``."""
    x = nodes[:, None, :]
    a = tuple(p[None, :, :] for p in joint)
    shape = (nodes.shape[0], joint[0].shape[0])
    return np.stack([np.broadcast_to(c(x, a), shape) for c in game.cost_fns])


def source_masses(game, snet: StateNet, nodes: np.ndarray, joint: tuple) -> np.ndarray:
    """Kernel masses at averaging nodes: ``(n, J, k)``."""
    return kernel_masses(game, snet, nodes[:, None, :], tuple(p[None, :, :] for p in joint))


def check_size(k: int, J: int, cap: int = DEFAULT_CAP):
    if k * J > cap or k * J * k > cap:
        raise ResourceError(
            f"finite model with {k} states and {J} joint actions exceeds the cap of "
            f"{cap} entries per tensor")


def build_finite_game(game, snet: StateNet, anet: ActionNet,
                      cap: int = DEFAULT_CAP) -> FiniteGame:
    """Average costs and pushforward kernels over every cell.

    Rows are renormalised to exact probability vectors; the largest
    pre-normalisation defect is kept in ``provenance``.
    """
    if snet.space != game.state_space:
        raise DomainError("state net was built for a different state space")
    if len(anet.points) != game.num_players:
        raise DomainError("action net has the wrong number of players")
    joint = anet.joint_points()
    J = anet.num_joint
    sources = state_sources(game, snet)
    k = len(sources)
    check_size(k, J, cap)
    costs = np.empty((game.num_players, k, J))
    raw = np.empty((k, J, k))
    for j, (nodes, weights) in enumerate(sources):
        w = weights / weights.sum()
        costs[:, j] = np.einsum("q,nqj->nj", w, source_costs(game, nodes, joint))
        raw[j] = np.einsum("q,qjk->jk", w, source_masses(game, snet, nodes, joint))
    sums = raw.sum(axis=-1)
    if sums.min() < 0.5:
        raise QuadratureError(
            f"pushforward rows keep only {sums.min():.3g} of their mass; "
            "increase the quadrature resolution")
    provenance = {
        "game": game.name,
        "delta": snet.delta,
        "action_deltas": list(anet.deltas),
        "resolution": snet.resolution,
        "scheme": snet.scheme,
        "normalization_defect": float(np.max(np.abs(sums - 1.0))),
    }
    return FiniteGame(costs, normalize_rows(raw), anet.counts, game.horizon,
                      game.cost_bound, provenance)


def estimate_tv_modulus(game: ContinuousGame, snet: StateNet, radius: float,
                        samples: int = 256, seed: int = 0) -> float:
    """Sampled lower bound on the TV modulus of the quantized kernel.

    Each pair splits its distance budget ``radius`` between the state and
    the continuous action coordinates; finite actions are left unchanged.
    """
    if not radius > 0 or samples < 1:
        raise DomainError("radius must be positive and samples >= 1")
    rng = np.random.default_rng(seed)
    space = game.state_space
    xs = sample_state(space, rng, samples)
    acts = [np.stack([sample_action(s, rng) for _ in range(samples)]) for s in game.action_spaces]
    boxes = [i for i, s in enumerate(game.action_spaces) if isinstance(s, Box)]
    share = rng.uniform(0.0, 1.0, size=samples) if boxes else np.ones(samples)
    direction = rng.uniform(-1.0, 1.0, size=(samples, space.dim))
    ys = np.clip(xs + (share * radius)[:, None] * direction, space.lower, space.upper)
    bs = [a.copy() for a in acts]
    for i in boxes:
        space_i = game.action_spaces[i]
        step = ((1.0 - share) * radius / len(boxes))[:, None]
        e = rng.uniform(-1.0, 1.0, size=acts[i].shape)
        bs[i] = np.clip(acts[i] + step * e, space_i.lower, space_i.upper)
    p = kernel_masses(game, snet, xs, tuple(acts))
    q = kernel_masses(game, snet, ys, tuple(bs))
    return float(np.max(np.sum(np.abs(p - q), axis=1)))
