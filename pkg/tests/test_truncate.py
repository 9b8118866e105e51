import dataclasses

import numpy as np
import pytest
from scipy.special import ndtr

from mgapprox.model import Box, ContinuousGame, DomainError, FiniteActions
from mgapprox.quantize import build_action_net, build_finite_game, build_state_net
from mgapprox.solve import nash_value_iteration
from mgapprox.truncate import (
    LadderConfig,
    build_truncated_game,
    build_truncation,
    leakage,
    lift_from_truncation,
)
from mgapprox.zoo import make_model

REAL = Box([-np.inf], [np.inf])


def finite(game, trunc, delta=0.1):
    tg = build_truncated_game(game, trunc)
    snet = build_state_net(tg.state_space, delta)
    anet = build_action_net(tg.action_spaces, 1)
    return tg, snet, anet, build_finite_game(tg, snet, anet)


def test_ladder_radius_formula():
    g = make_model("gd-2p-real")
    t = build_truncation(g, 3)
    assert t.K == Box([-3.0], [3.0])
    assert t.outer == Box([-4.0], [4.0])


def test_nu_is_a_probability_off_k():
    t = build_truncation(make_model("gd-2p-real"), 2)
    assert t.nu_weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert not np.any(t.inside(t.nu_nodes))
    assert np.all(t.outer.contains(t.nu_nodes))


def test_nested_interiors():
    g = make_model("gd-2p-real")
    cfg = LadderConfig(radius0=0.5, slope=0.75)
    for n in (1, 2, 3):
        a, b = build_truncation(g, n, cfg).K, build_truncation(g, n + 1, cfg).K
        assert np.all(b.lower < a.lower) and np.all(a.upper < b.upper)


def test_degenerate_ladder_rejected():
    g = make_model("gd-2p-real")
    with pytest.raises(DomainError):
        build_truncation(g, 1, LadderConfig(slope=0.0))
    with pytest.raises(DomainError):
        build_truncation(g, 0)


def test_truncation_for_another_game_rejected():
    t = build_truncation(make_model("gd-2p-real"), 1)
    with pytest.raises(DomainError):
        build_truncated_game(make_model("nl-2p-real"), t)


def test_no_leak_model_matches_compact_solve():
    g = make_model("nl-2p-real")
    trunc = build_truncation(g, 1)
    tg, snet, anet, fg = finite(g, trunc)
    assert np.all(leakage(fg) == 0.0)
    compact = dataclasses.replace(g, state_space=trunc.K)
    cg = build_finite_game(compact, snet, anet)
    np.testing.assert_array_equal(fg.costs[:, :-1], cg.costs)
    np.testing.assert_array_equal(fg.transitions[:-1, :, :-1], cg.transitions)
    a = nash_value_iteration(fg)
    b = nash_value_iteration(cg)
    np.testing.assert_array_equal(a.values[:, :-1], b.values)


def test_uniform_outflow_bookkeeping():
    # uniform law on [-1, 3]: half its mass leaves K_1 = [-1, 1]
    game = ContinuousGame(
        num_players=1,
        state_space=REAL,
        action_spaces=[FiniteActions([[0.0]])],
        cost_fns=[lambda x, a: np.zeros(x.shape[:-1])],
        kernel_density=lambda y, x, a: np.where((y[..., 0] >= -1) & (y[..., 0] <= 3), 0.25, 0.0),
        cost_bound=1.0,
        name="outflow",
    )
    tg, snet, anet, fg = finite(game, build_truncation(game, 1))
    np.testing.assert_allclose(leakage(fg), 0.5, atol=1e-12)


def test_gaussian_leakage_matches_tail_mass_and_shrinks():
    g = make_model("gd-2p-real")
    sigma = g.params.get("sigma", 0.6)
    worst = []
    for n in (1, 2, 3):
        trunc = build_truncation(g, n)
        tg, snet, anet, fg = finite(g, trunc)
        joint = anet.joint_points()
        r = trunc.K.upper[0]
        for j in range(snet.k):
            x = snet.nodes[j][:, 0]
            w = snet.weights[j] / snet.weights[j].sum()
            for b in range(anet.num_joint):
                mean = 0.5 * x + 0.4 * (joint[0][b, 0] - joint[1][b, 0])
                tail = 1 - (ndtr((r - mean) / sigma) - ndtr((-r - mean) / sigma))
                assert fg.transitions[j, b, -1] == pytest.approx(w @ tail, abs=1e-9)
        worst.append(leakage(fg).max())
    assert worst[0] > worst[1] > worst[2]


def test_pseudo_state_cost_is_nu_average():
    g = make_model("gd-2p-real")
    trunc = build_truncation(g, 1)
    tg, snet, anet, fg = finite(g, trunc)
    joint = anet.joint_points()
    for b in range(anet.num_joint):
        a = (joint[0][b][None], joint[1][b][None])
        for i in range(2):
            want = trunc.nu_weights @ g.cost_fns[i](trunc.nu_nodes, a)
            assert fg.costs[i, -1, b] == pytest.approx(want, abs=1e-13)


def test_rows_conserve_mass():
    g = make_model("gd-2p-real")
    tg, snet, anet, fg = finite(g, build_truncation(g, 2))
    assert fg.num_states == snet.k + 1
    np.testing.assert_allclose(fg.transitions.sum(axis=-1), 1.0, atol=1e-15)
    assert fg.provenance["normalization_defect"] < 1e-6


def test_lift_from_truncation():
    g = make_model("gd-2p-real")
    trunc = build_truncation(g, 1)
    snet = build_state_net(trunc.K, 0.25)
    table = np.arange(snet.k + 1, dtype=float)
    lifted = lift_from_truncation(table, trunc, snet)
    for j, x in enumerate(snet.points):
        assert lifted(x) == table[j]
    assert lifted(np.array([50.0])) == table[-1]
    assert lifted(np.array([-1.5])) == table[-1]
    np.testing.assert_array_equal(lifted(np.array([[0.1], [7.0]])), [table[snet.locate([[0.1]])[0]],
                                                                    table[-1]])
    with pytest.raises(DomainError):
        lift_from_truncation(table[:-1], trunc, snet)
