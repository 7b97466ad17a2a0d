"""Vectorised numpy reference for one simulation step, used as a test oracle.

Same update order as the compiled kernel, written with whole-array
operations so the two implementations share no code.
"""
from __future__ import annotations

import numpy as np

from twolayer.network import Network, TurnRatioTable
from twolayer.sim import LinkState, SimConfig, SimulationError


def reference_step(
    state: LinkState,
    network: Network,
    green: np.ndarray,
    ratios: TurnRatioTable,
    demand_k: np.ndarray,
    gating: np.ndarray | None = None,
    config: SimConfig | None = None,
) -> LinkState:
    """Advance ``state`` in place by one step and return it.

    ``green`` is a boolean per connection, ``demand_k`` the vehicles generated
    per link this step (non-zero on origins only) and ``gating`` the entry
    saturation factor per link.
    """
    cfg = config or SimConfig()
    T = cfg.step
    net = network
    cap, sat = net.capacity, net.saturation
    x0 = state.moving + state.waiting

    # (1) demand
    state.virtual_queue += demand_k
    state.generated += float(demand_k.sum())

    # (2) virtual-queue release into origin links
    entry = sat * T if gating is None else sat * gating * T
    released = np.minimum(state.virtual_queue, np.minimum(entry, np.maximum(cap - x0, 0.0)))
    released[~net.is_origin] = 0.0
    state.virtual_queue -= released
    x1 = x0 + released

    # (3) trip endings, independent of signals
    endings = np.minimum(state.waiting, ratios.ending * sat * T)
    state.waiting -= endings

    # (4) approach transfers
    frm, to = net.conn_from, net.conn_to
    beta = ratios.beta
    cand = np.minimum(state.waiting[frm] * beta, beta * sat[frm] * T)
    cand[~green] = 0.0
    cand[x0[to] >= cfg.jam_threshold * cap[to]] = 0.0
    demand_in = np.bincount(to, weights=cand, minlength=net.n_links)
    space = np.maximum(cap - x1, 0.0)
    scale = np.ones(net.n_links)
    over = demand_in > space
    scale[over] = space[over] / demand_in[over]
    flows = cand * scale[to]
    if flows.size and flows.min() < 0:
        raise SimulationError(f"negative transfer flow at step {state.k}")
    out_tr = np.bincount(frm, weights=flows, minlength=net.n_links)
    inflow = np.bincount(to, weights=flows, minlength=net.n_links)
    state.waiting -= out_tr
    np.maximum(state.waiting, 0.0, out=state.waiting)

    # (5) arrivals become cohorts released at the queue tail
    arrivals = inflow + released
    slots = state.cohorts.shape[1]
    queue_len = state.waiting * net.vehicle_length / net.lanes
    delay = np.ceil(np.maximum(0.0, net.length - queue_len) / (net.free_speed * T) - 1e-12)
    delay = np.minimum(delay, slots - 1).astype(np.int64)
    idx = np.flatnonzero(arrivals > 0)
    if idx.size:
        state.cohorts[idx, (state.k + delay[idx]) % slots] += arrivals[idx]
        state.moving += arrivals

    # (6) matured cohorts
    col = state.k % slots
    matured = state.cohorts[:, col].copy()
    state.cohorts[:, col] = 0.0
    state.moving -= matured
    np.maximum(state.moving, 0.0, out=state.moving)
    state.waiting += matured

    # (7) bookkeeping
    outflow = out_tr + endings
    state.cumulative_outflow += outflow
    state.cumulative_time += (state.moving + state.waiting) * T
    state.ended += float(endings.sum())
    state.released, state.outflow, state.endings, state.transfers = released, outflow, endings, flows
    state.k += 1
    return state


