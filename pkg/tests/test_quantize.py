import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from mgapprox.model import Box, DomainError, FiniteActions, QuadratureError, ResourceError
from mgapprox.quantize import (
    FiniteGame,
    build_action_net,
    build_finite_game,
    build_state_net,
    estimate_tv_modulus,
    nearest_action,
    nearest_state,
)
from mgapprox.zoo import make_model

UNIT = Box([0.0], [1.0])


def cheb_argmin(points, x):
    d = np.max(np.abs(points - x), axis=1)
    return int(np.flatnonzero(d == d.min())[0])


def test_two_half_cells():
    net = build_state_net(UNIT, 0.25)
    np.testing.assert_allclose(net.points[:, 0], [0.25, 0.75])
    np.testing.assert_allclose(net.lower[:, 0], [0.0, 0.5])
    np.testing.assert_allclose(net.upper[:, 0], [0.5, 1.0])


def test_whole_square_single_cell():
    net = build_state_net(Box([0.0, 0.0], [1.0, 1.0]), 0.5)
    assert net.k == 1
    np.testing.assert_allclose(net.points[0], [0.5, 0.5])


def test_delta_tenth_gives_five_cells_and_net_property():
    net = build_state_net(UNIT, 0.1)
    assert net.k == 5
    np.testing.assert_allclose(net.upper - net.lower, 0.2)
    xs = np.linspace(0.0, 1.0, 10001)[:, None]
    idx = net.locate(xs)
    assert np.max(np.abs(xs - net.points[idx])) <= 0.1 + 1e-12


def test_cell_count_formula():
    box = Box([0.0, -1.0], [1.0, 2.0])
    net = build_state_net(box, 0.15)
    assert net.k == math.ceil(1 / 0.3) * math.ceil(3 / 0.3)


def test_state_cap_is_named():
    with pytest.raises(ResourceError, match="1000"):
        build_state_net(UNIT, 1e-5, max_states=1000)


def test_nonpositive_delta_rejected():
    with pytest.raises(DomainError):
        build_state_net(UNIT, 0.0)


def test_nearest_state_examples():
    net = build_state_net(UNIT, 0.25)
    assert nearest_state(net, [0.4]) == 0
    assert nearest_state(net, [0.5]) == 0
    with pytest.raises(DomainError):
        nearest_state(net, [1.2])


def test_nearest_state_matches_brute_force():
    rng = np.random.default_rng(3)
    box = Box([0.0, -1.0], [1.0, 1.0])
    net = build_state_net(box, 0.13)
    xs = rng.uniform(box.lower, box.upper, size=(1000, 2))
    got = net.locate(xs)
    want = [cheb_argmin(net.points, x) for x in xs]
    np.testing.assert_array_equal(got, want)


def test_nearest_action_examples():
    spaces = [FiniteActions([[0.0], [1.0], [2.0]]), Box([0.0], [1.0])]
    net = build_action_net(spaces, 0.25)
    for j in range(3):
        assert nearest_action(net, 0, spaces[0].points[j]) == j
    np.testing.assert_allclose(net.points[1][:, 0], [0.25, 0.75])
    assert nearest_action(net, 1, [0.9]) == 1
    rng = np.random.default_rng(1)
    for a in rng.uniform(0, 1, size=(200, 1)):
        assert nearest_action(net, 1, a) == cheb_argmin(net.points[1], a)


def test_action_net_embeds_extra_points_first():
    net = build_action_net([Box([0.0], [1.0])], 0.05, extra_points=[np.array([[0.25], [0.75]])])
    np.testing.assert_allclose(net.points[0][:2, 0], [0.25, 0.75])
    assert len(np.unique(np.round(net.points[0][:, 0], 12))) == net.points[0].shape[0]


def test_constant_cost_averages_to_constant():
    g = make_model("const")
    fg = build_finite_game(g, build_state_net(UNIT, 0.1), build_action_net(g.action_spaces, 1))
    assert np.all(fg.costs == 1.0)


def test_uniform_kernel_rows_are_halves():
    g = make_model("const")
    fg = build_finite_game(g, build_state_net(UNIT, 0.25), build_action_net(g.action_spaces, 1))
    np.testing.assert_allclose(fg.transitions, 0.5, atol=1e-15)


def _tg_oracle(x_lo, x_hi, a1, a2, cells, n=80):
    """Exact cell masses, averaged over a 10x finer midpoint rule in x."""
    xs = x_lo + (np.arange(n) + 0.5) / n * (x_hi - x_lo)
    mean = 0.2 + 0.6 * xs + 0.15 * (a1 - a2)
    norm = ndtr((1 - mean) / 0.15) - ndtr(-mean / 0.15)
    cdf = lambda y: (ndtr((y - mean) / 0.15) - ndtr(-mean / 0.15)) / norm
    return np.array([np.mean(cdf(hi) - cdf(lo)) for lo, hi in cells])


def test_truncated_gaussian_matches_refined_oracle():
    g = make_model("tg-2p-smooth")
    net = build_state_net(UNIT, 0.1)
    anet = build_action_net(g.action_spaces, 1)
    fg = build_finite_game(g, net, anet)
    cells = list(zip(net.lower[:, 0], net.upper[:, 0]))
    joint = anet.joint_points()
    for j in range(net.k):
        for b in range(anet.num_joint):
            want = _tg_oracle(*cells[j], joint[0][b, 0], joint[1][b, 0], cells)
            np.testing.assert_allclose(fg.transitions[j, b], want, atol=1e-3)


@pytest.mark.parametrize("model_id", ["tg-2p-smooth", "uw-1p", "team-2p", "quad-2p"])
def test_rows_sum_to_one_exactly(model_id):
    g = make_model(model_id)
    fg = build_finite_game(g, build_state_net(UNIT, 0.05), build_action_net(g.action_spaces, 0.25))
    assert np.all(fg.transitions >= 0)
    for row in fg.transitions.reshape(-1, fg.num_states):
        assert math.fsum(row) == 1.0
    assert np.max(np.abs(fg.costs)) <= g.cost_bound


def test_partition_volume_is_exact():
    box = Box([0.0, -1.0], [0.7, 2.3])
    net = build_state_net(box, 0.09)
    vol = np.prod(net.upper - net.lower, axis=1).sum()
    assert vol == pytest.approx(box.volume, rel=1e-12)
    assert np.all(net.weights.sum(axis=1) > 0)


def test_piecewise_constant_model_is_lossless():
    g = make_model("pc-2p-lossless")
    B = g.params["blocks"]
    net = build_state_net(UNIT, 0.5 / B)
    anet = build_action_net(g.action_spaces, 1)
    fg = build_finite_game(g, net, anet)
    cost_table, trans = g.params["cost_table"], g.params["block_transitions"]
    for j in range(B):
        for b, (a1, a2) in enumerate(np.ndindex(2, 2)):
            for i in range(2):
                assert abs(fg.costs[i, j, b] - cost_table[i, j, a1, a2]) <= 1e-12
            np.testing.assert_allclose(fg.transitions[j, b], trans[j, a1, a2], atol=1e-12)


def test_transitions_converge_under_quadrature_refinement():
    g = make_model("tg-2p-smooth")
    anet = build_action_net(g.action_spaces, 1)
    tables = [build_finite_game(g, build_state_net(UNIT, 0.1, resolution=r), anet).transitions
              for r in (2, 4, 8, 16)]
    diffs = [np.max(np.abs(a - b)) for a, b in zip(tables, tables[1:])]
    assert all(b < a for a, b in zip(diffs, diffs[1:]))


def test_quadrature_failure_is_reported():
    g = make_model("uw-1p")
    broken = type(g)(**{**g.__dict__, "cell_mass": None,
                        "kernel_density": lambda y, x, a: 0.1 * np.ones(y.shape[:-1])})
    with pytest.raises(QuadratureError):
        build_finite_game(broken, build_state_net(UNIT, 0.1), build_action_net(g.action_spaces, 1))


def test_finite_game_cap():
    g = make_model("quad-2p")
    with pytest.raises(ResourceError):
        build_finite_game(g, build_state_net(UNIT, 0.01), build_action_net(g.action_spaces, 0.01),
                          cap=10_000)


def test_json_round_trip_is_exact():
    g = make_model("tg-2p-smooth")
    fg = build_finite_game(g, build_state_net(UNIT, 0.1), build_action_net(g.action_spaces, 1))
    back = FiniteGame.from_json(fg.to_json())
    np.testing.assert_array_equal(back.costs, fg.costs)
    np.testing.assert_array_equal(back.transitions, fg.transitions)
    assert back.action_counts == fg.action_counts
    assert back.beta == fg.beta
    assert back.provenance == fg.provenance


def test_tv_modulus_zero_for_constant_kernel():
    g = make_model("const")
    assert estimate_tv_modulus(g, build_state_net(UNIT, 0.1), 0.2) == 0.0


def test_tv_modulus_shrinks_with_radius_on_window_kernel():
    g = make_model("uw-1p")
    net = build_state_net(UNIT, 0.05)
    est = [estimate_tv_modulus(g, net, r, samples=512, seed=4) for r in (0.4, 0.2, 0.1)]
    assert est[0] >= est[1] >= est[2]


@pytest.mark.parametrize("radius", [0.05, 0.1, 0.2])
def test_tv_modulus_respects_shifted_window_bound(radius):
    w = 0.3
    g = make_model("uw-1p", width=w)
    net = build_state_net(UNIT, 0.05)
    assert estimate_tv_modulus(g, net, radius, samples=512) <= 2 * radius / w + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(0.02, 0.6), st.floats(0.1, 3.0), st.floats(-2.0, 2.0))
def test_net_property_holds(delta, length, lo):
    box = Box([lo], [lo + length])
    net = build_state_net(box, delta)
    xs = np.linspace(lo, lo + length, 513)[:, None]
    idx = net.locate(xs)
    assert np.max(np.abs(xs - net.points[idx])) <= delta + 1e-12
    assert np.max(net.upper - net.lower) <= 2 * delta + 1e-12
