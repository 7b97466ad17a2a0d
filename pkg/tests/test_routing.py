import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import shortest_path

from twolayer.grid import gen_grid_network
from twolayer.network import Link, SignalizedNode, TurnRatioTable, build_network
from twolayer.routing import (TripStack, _link_graph, estimate_link_speeds, split_inflows,
                              update_turn_ratios)
from twolayer.sim import SimConfig, run
from twolayer.synthetic import mixed_demand

from _nets import chain_network, constant_demand, diverge_network

GRID = gen_grid_network(5, 6, internal_od_every=3)


def test_speed_examples():
    net = chain_network(2, length=200.0, speed=10.0)
    v = estimate_link_speeds(np.zeros(2), np.zeros(2), net)
    np.testing.assert_array_equal(v, [10.0, 10.0])
    v = estimate_link_speeds(np.array([100.0, 0.0]), np.array([7200.0, 50.0]), net, min_speed=0.5)
    assert v[0] == pytest.approx(2.7778, abs=1e-4)
    assert v[1] == 0.5


def test_speeds_accept_per_step_windows():
    net = chain_network(2, length=200.0)
    out = np.full((10, 2), 1.0)
    x = np.full((10, 2), 40.0)
    np.testing.assert_allclose(estimate_link_speeds(out, x, net), 5.0)


def test_single_path_within_horizon():
    net = chain_network(4)
    res = update_turn_ratios({("c0", "c3"): 12.0}, None, net.free_speed, net, TurnRatioTable(net), 900.0)
    np.testing.assert_array_equal(res.ratios.beta, [1.0, 1.0, 1.0])
    assert res.ratios.ending[3] == 1.0
    assert res.ratios.ending[:3].tolist() == [0.0, 0.0, 0.0]
    assert len(res.stack) == 0 and res.completed == 12.0


def test_diverging_volumes_set_ratios():
    net = diverge_network()
    res = update_turn_ratios({("o", "u"): 30.0, ("o", "d"): 70.0}, None, net.free_speed, net, None, 900.0)
    assert res.ratios.ratio("o", "u") == pytest.approx(0.3)
    assert res.ratios.ratio("o", "d") == pytest.approx(0.7)


def test_no_volume_keeps_previous():
    net = diverge_network()
    prev = TurnRatioTable(net, beta=np.array([0.25, 0.75]))
    res = update_turn_ratios({}, None, net.free_speed, net, prev, 900.0)
    np.testing.assert_array_equal(res.ratios.beta, prev.beta)
    np.testing.assert_array_equal(res.ratios.ending, prev.ending)


def test_long_trip_is_split():
    # four 10 s links, 15 s window: the vehicle is on c1 when the window ends
    net = chain_network(4)
    res = update_turn_ratios({("c0", "c3"): 5.0}, None, net.free_speed, net, None, 15.0)
    assert res.stack.volumes == {("c1", "c3"): 5.0}
    assert res.stack.elapsed[("c1", "c3")] == pytest.approx(5.0)
    assert res.counters.tolist() == [5.0, 0.0, 0.0]
    assert res.completed == 0.0
    # the carried trip finishes in the next window
    res2 = update_turn_ratios({}, res.stack, net.free_speed, net, res.ratios, 100.0)
    assert res2.completed == 5.0 and len(res2.stack) == 0
    assert res2.counters.tolist() == [0.0, 5.0, 5.0]


def test_unreachable_destination_is_dropped():
    links = [Link("a", 100.0, 1, 0.5, 10.0, "m"), Link("b", 100.0, 1, 0.5, 10.0, None, "m"),
             Link("lone", 100.0, 1, 0.5, 10.0, None)]
    net = build_network(links, [SignalizedNode("m", ("a",), ("b",), (("a", "b"),))])
    res = update_turn_ratios({("a", "lone"): 4.0, ("a", "b"): 1.0}, None, net.free_speed, net, None, 900.0)
    assert res.dropped == 4.0 and res.completed == 1.0


def test_negative_volume_rejected():
    net = chain_network(2)
    with pytest.raises(ValueError):
        update_turn_ratios({("c0", "c1"): -1.0}, None, net.free_speed, net, None, 900.0)
    with pytest.raises(ValueError):
        TripStack().push("c0", "c1", -1.0)


def test_split_inflows_uses_nominal_shares():
    out = split_inflows({"o": 10.0, "p": 0.0}, {("o", "a"): 1.0, ("o", "b"): 3.0, ("p", "a"): 5.0})
    assert out == {("o", "a"): 2.5, ("o", "b"): 7.5}


def _random_od(net, rng, n_pairs):
    origins, dests = net.origins(), net.destinations()
    return {(origins[rng.integers(len(origins))], dests[rng.integers(len(dests))]): float(rng.uniform(0.1, 50))
            for _ in range(n_pairs)}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(20.0, 2000.0))
def test_volume_conservation_and_valid_ratios(seed, window):
    rng = np.random.default_rng(seed)
    net = GRID
    od = _random_od(net, rng, int(rng.integers(1, 40)))
    stack = TripStack()
    for key, v in _random_od(net, rng, 5).items():
        stack.push(key[0], key[1], v)
    speeds = rng.uniform(0.5, 10.0, net.n_links)
    res = update_turn_ratios(od, stack, speeds, net, None, window)
    total_in = sum(od.values()) + stack.total()
    assert res.stack.total() + res.completed + res.dropped == pytest.approx(total_in, rel=0, abs=1e-9)
    assert res.ratios.violations() == []
    sums = res.ratios.row_sums()
    np.testing.assert_allclose(sums[net.has_downstream], 1.0, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_doubling_volumes_keeps_ratios(seed):
    rng = np.random.default_rng(seed)
    od = _random_od(GRID, rng, 20)
    speeds = rng.uniform(0.5, 10.0, GRID.n_links)
    a = update_turn_ratios(od, None, speeds, GRID, None, 300.0)
    b = update_turn_ratios({k: 2 * v for k, v in od.items()}, None, speeds, GRID, None, 300.0)
    np.testing.assert_allclose(a.ratios.beta, b.ratios.beta, atol=1e-12)
    np.testing.assert_allclose(a.ratios.ending, b.ratios.ending, atol=1e-12)


def test_uniform_speeds_give_fewest_hops():
    net = gen_grid_network(5, 5, n_regions=1, length=100.0, edge_length=100.0)
    hops = shortest_path(_link_graph(net, np.ones(net.n_links)), unweighted=True)
    rng = np.random.default_rng(1)
    for key in _random_od(net, rng, 30):
        o, d = net.link_index[key[0]], net.link_index[key[1]]
        res = update_turn_ratios({key: 1.0}, None, np.full(net.n_links, 10.0), net, None, 1e6)
        if res.completed:
            assert res.counters.sum() == pytest.approx(hops[o, d])


def test_simulator_refreshes_ratios_every_window():
    net = gen_grid_network(4, 5)
    traj = run(net, [], mixed_demand(net, 700, 0), 3600, config=SimConfig(record_turn_ratios=True,
                                                                          record_links=False))
    assert [k for k, _ in traj.turn_ratio_log] == [0, 900, 1800, 2700]
    for _, r in traj.turn_ratio_log:
        assert r.violations() == []
    assert not np.array_equal(traj.turn_ratio_log[0][1].beta, traj.turn_ratio_log[-1][1].beta)
