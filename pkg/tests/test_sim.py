import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twolayer.grid import gen_grid_network
from twolayer.network import Link, SignalizedNode, TurnRatioTable, build_network
from twolayer.sim import (LinkState, SimConfig, SimTrajectory, SimulationError, Simulator, compute_vht,
                          production, regional_accumulation, run, step)
from twolayer.synthetic import mixed_demand

from _nets import chain_network, constant_demand, merge_network, two_link, zeros
from reference_step import reference_step


def _state(net, waiting=None, moving=None):
    s = LinkState.empty(net)
    if waiting is not None:
        s.waiting[:] = waiting
    if moving is not None:
        # moving vehicles arrive far in the future so they stay put
        s.moving[:] = moving
        s.cohorts[:, -1] = moving
    return s


def test_empty_network_is_unchanged():
    net = two_link()
    s = _state(net)
    step(s, net, np.ones(net.n_conns, bool), TurnRatioTable(net), zeros(net))
    assert not s.moving.any() and not s.waiting.any() and not s.virtual_queue.any()
    assert not s.outflow.any() and not s.transfers.any()


def test_green_approach_transfers_saturation_flow():
    net = two_link(sat=0.5)
    s = _state(net, waiting=[10.0, 0.0])
    step(s, net, np.array([True]), TurnRatioTable(net), zeros(net))
    assert s.transfers[0] == pytest.approx(0.5, abs=1e-12)
    assert s.waiting[0] == pytest.approx(9.5, abs=1e-12)


def test_blocked_when_downstream_nearly_full():
    net = two_link(cap_down=100)
    s = _state(net, waiting=[10.0, 0.0], moving=[0.0, 96.0])
    step(s, net, np.array([True]), TurnRatioTable(net), zeros(net))
    assert s.transfers[0] == 0.0
    assert s.waiting[0] == 10.0


def test_red_approach_keeps_queue():
    net = two_link()
    s = _state(net, waiting=[10.0, 0.0])
    step(s, net, np.array([False]), TurnRatioTable(net), zeros(net))
    assert s.transfers[0] == 0.0
    assert s.waiting[0] == 10.0


def test_endings_ignore_the_signal():
    net = two_link()
    ratios = TurnRatioTable(net, ending=np.array([0.5, 1.0]))
    s = _state(net, waiting=[10.0, 0.0])
    step(s, net, np.array([False]), ratios, zeros(net))
    assert s.endings[0] == pytest.approx(0.25)
    assert s.waiting[0] == pytest.approx(9.75)


def test_rationing_never_overfills():
    net = merge_network()
    cap = net.capacity[2]
    s = _state(net, waiting=[20.0, 20.0, 0.0], moving=[0.0, 0.0, cap - 0.3])
    # no blocking, so only the free space limits the inflow
    step(s, net, np.array([True, True]), TurnRatioTable(net), zeros(net), config=SimConfig(jam_threshold=1.0))
    assert s.transfers.sum() == pytest.approx(0.3, abs=1e-12)
    assert s.transfers[0] == pytest.approx(s.transfers[1])
    assert (s.moving + s.waiting)[2] <= cap + 1e-12


def test_release_bounded_by_gate_and_space():
    net = two_link(sat=0.5)
    s = _state(net)
    demand = np.array([3.0, 0.0])
    step(s, net, np.array([False]), TurnRatioTable(net), demand, gating=np.array([0.4, 1.0]))
    assert s.released[0] == pytest.approx(0.2)
    assert s.virtual_queue[0] == pytest.approx(2.8)


def test_cohort_delay_follows_queue_tail():
    # 100 m at 10 m/s: a cohort entering an empty link needs 10 steps
    net = chain_network(2)
    s = _state(net)
    ratios = TurnRatioTable(net)
    green = np.ones(net.n_conns, bool)
    demand = np.array([0.5, 0.0])
    step(s, net, green, ratios, demand)
    for k in range(9):
        step(s, net, green, ratios, zeros(net))
        assert s.waiting[0] == 0.0
    step(s, net, green, ratios, zeros(net))
    assert s.waiting[0] == pytest.approx(0.5)


def test_kernel_matches_reference_on_grid():
    net = gen_grid_network(4, 5, internal_od_every=3)
    rng = np.random.default_rng(4)
    cfg = SimConfig()
    a, b = LinkState.empty(net), LinkState.empty(net)
    ratios = TurnRatioTable(net)
    beta = rng.uniform(0.1, 1.0, net.n_conns)
    ratios.beta = beta / np.bincount(net.conn_from, beta, net.n_links)[net.conn_from]
    ratios.ending = np.where(net.has_downstream, rng.uniform(0, 0.3, net.n_links), 1.0)
    for k in range(400):
        green = rng.random(net.n_conns) < 0.5
        demand = np.where(net.is_origin, rng.uniform(0, 0.9, net.n_links), 0.0)
        gate = rng.uniform(0.15, 1.0, net.n_links)
        step(a, net, green, ratios, demand, gate, cfg)
        reference_step(b, net, green, ratios, demand, gate, cfg)
        for name in ("moving", "waiting", "virtual_queue", "cumulative_outflow", "cumulative_time"):
            np.testing.assert_allclose(getattr(a, name), getattr(b, name), rtol=0, atol=1e-9, err_msg=name)
        np.testing.assert_allclose(a.cohorts, b.cohorts, rtol=0, atol=1e-9)
    assert a.waiting.sum() > 10  # the comparison exercised queues


def test_run_zero_demand_is_all_zero():
    net = gen_grid_network(3, 3, n_regions=1)
    traj = run(net, [], constant_demand([]), 100)
    assert traj.n_steps == 100
    assert not traj.accumulation.any() and not traj.production.any() and not traj.virtual_queue.any()
    assert compute_vht(traj) == 0.0


def test_run_is_deterministic():
    net = gen_grid_network(3, 5)
    dem = mixed_demand(net, 600, seed=2)
    a = run(net, [], dem, 1500, seed=1)
    b = run(net, [], dem, 1500, seed=1)
    assert a.accumulation.tobytes() == b.accumulation.tobytes()
    assert a.virtual_queue.tobytes() == b.virtual_queue.tobytes()
    assert a.link_accumulation.tobytes() == b.link_accumulation.tobytes()


def test_horizon_of_six_hours_records_every_step():
    net = chain_network(2)
    traj = run(net, [], constant_demand([("c0", "c1", 300.0)]), 21600, config=SimConfig(record_links=False))
    assert traj.n_steps == 21600
    assert traj.link_accumulation is None


def test_horizon_must_be_positive():
    net = chain_network(2)
    with pytest.raises(ValueError):
        run(net, [], constant_demand([]), 0)


def _traj(x, vq, step=1.0):
    x = np.asarray(x, float)
    K = len(vq)
    return SimTrajectory(step, ("all",), x[:, None] if x.ndim == 1 else x, np.zeros((K, 1)),
                         np.asarray(vq, float), x if x.ndim == 1 else x.sum(1), np.zeros(K), np.zeros(K))


def test_vht_examples():
    assert compute_vht(_traj([], [])) == 0.0
    # 2 links x 3 veh x 10 steps
    assert compute_vht(_traj([6.0] * 10, [0.0] * 10)) == pytest.approx(1 / 60, abs=1e-12)
    assert compute_vht(_traj([0.0] * 100, [5.0] * 100)) * 3600 == pytest.approx(500.0, abs=1e-9)


def test_regional_accumulation_excludes_virtual_queue():
    net = chain_network(3, regions=["A", "A", "B"])
    s = LinkState.empty(net)
    assert not regional_accumulation(s, net).any()
    s.waiting[:] = [3.0, 7.0, 0.0]
    s.virtual_queue[0] = 50.0
    np.testing.assert_array_equal(regional_accumulation(s, net), [10.0, 0.0])


def test_production_examples():
    links = [Link("p", 100.0, 1, 0.5, 10.0, None), Link("q", 200.0, 1, 0.5, 10.0, None)]
    net = build_network(links, [])
    assert production(np.zeros((3, 2)), net).tolist() == [0.0]
    assert production(np.full((4, 2), 0.5), net)[0] == pytest.approx(150.0)


def test_missing_turn_row_is_rejected():
    net = two_link()
    bad = TurnRatioTable(net, ending=np.array([0.0, 0.0]))
    with pytest.raises(SimulationError):
        Simulator(net, constant_demand([]), turn_ratios=bad,
                  config=SimConfig(dynamic_turn_ratios=False)).run(5)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 2000), min_size=2, max_size=2), st.integers(0, 2**31 - 1))
def test_conservation_and_bounds(rates, seed):
    net = merge_network()
    dem = constant_demand([("a", "w", rates[0]), ("b", "w", rates[1])])
    sim = Simulator(net, dem, config=SimConfig(record_links=True))
    traj = sim.run(600, seed)
    total = traj.in_network + traj.virtual_queue + traj.cumulative_endings
    np.testing.assert_allclose(total, traj.cumulative_generated, rtol=0, atol=1e-6)
    x = traj.link_accumulation.astype(float)
    assert x.min() >= -1e-6
    assert np.all(x <= net.capacity + 1e-3)
    st_ = sim.state
    np.testing.assert_allclose(st_.moving, st_.cohorts.sum(axis=1), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=4, max_size=4), st.integers(0, 1000))
def test_point_queue_limit(waiting, seed):
    rng = np.random.default_rng(seed)
    links = [Link(f"c{i}", 100.0, 1, float(s), 10.0, f"m{i}" if i < 3 else None, f"m{i - 1}" if i else None,
                  capacity=10**9) for i, s in enumerate(rng.uniform(0.2, 1.0, 4))]
    nodes = [SignalizedNode(f"m{i}", (f"c{i}",), (f"c{i + 1}",), ((f"c{i}", f"c{i + 1}"),)) for i in range(3)]
    net = build_network(links, nodes)
    s = _state(net, waiting=waiting)
    step(s, net, np.ones(net.n_conns, bool), TurnRatioTable(net), zeros(net))
    expected = np.minimum(np.asarray(waiting), net.saturation).sum()
    assert s.outflow.sum() == pytest.approx(expected, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(100, 3000))
def test_lower_gate_never_admits_more(g1, g2, rate):
    lo, hi = sorted((g1, g2))
    net = two_link()
    ratios = TurnRatioTable(net)
    out = []
    for g in (lo, hi):
        s = LinkState.empty(net)
        total = 0.0
        for k in range(300):
            step(s, net, np.array([k % 90 < 40]), ratios, np.array([rate / 3600, 0.0]), np.array([g, 1.0]))
            total += s.released[0]
        out.append(total)
    assert out[0] <= out[1] + 1e-9
