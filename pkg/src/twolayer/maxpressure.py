"""Distributed Max-Pressure signal control.

Once per cycle each controlled node converts the cycle-mean occupancies of
its adjacent links into phase pressures, splits the effective green in
proportion to them, and projects the split onto integer greens that keep
the cycle length, the minimum greens and a per-cycle rate limit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import miqp
from .network import MP_ELIGIBILITY_THRESHOLD, Network, SignalizedNode, TurnRatioTable


def link_pressure(z: str, queues, ratios: TurnRatioTable, network: Network) -> float:
    """Capacity-normalised pressure of incoming link ``z`` (veh/s), clamped at 0.

    ``queues`` is indexable by link index (array) or a mapping by link id.
    """
    net = network
    zi = net.link_index[z]
    conns = net.out_conns[zi]
    if conns.size == 0:
        raise KeyError(f"no turn-ratio row for link {z}")
    q = _as_array(queues, net)
    down = ratios.beta[conns] * q[net.conn_to[conns]] / net.capacity[net.conn_to[conns]]
    p = (q[zi] / net.capacity[zi] - down.sum()) * net.saturation[zi]
    return max(0.0, float(p))


def _as_array(queues, net: Network) -> np.ndarray:
    if isinstance(queues, dict):
        q = np.zeros(net.n_links)
        for lid, v in queues.items():
            q[net.link_index[lid]] = v
        return q
    return np.asarray(queues, dtype=float)


def phase_pressures(node: SignalizedNode, link_pressures: dict) -> np.ndarray:
    """Sum of the pressures of each phase's incoming links (each counted once)."""
    return np.array([max(0.0, sum(link_pressures[z] for z in ph.incoming)) for ph in node.phases])


def raw_green_split(node: SignalizedNode, pressures: Sequence[float], previous: Sequence[float],
                    threshold: float = MP_ELIGIBILITY_THRESHOLD) -> np.ndarray:
    """Real-valued greens proportional to pressure.

    Ineligible phases keep their fixed green and are taken out of the budget;
    with zero total pressure the previous greens are kept.
    """
    P = np.asarray(pressures, dtype=float)
    elig = np.array([ph.eligible_for_mp(threshold) for ph in node.phases])
    fixed = np.array(node.fixed_greens, dtype=float)
    out = np.asarray(previous, dtype=float).copy()
    out[~elig] = fixed[~elig]
    total = P[elig].sum()
    if total <= 0:
        return out
    budget = node.effective_green - fixed[~elig].sum()
    out[elig] = P[elig] / total * budget
    return out


def project_greens(node: SignalizedNode, raw: Sequence[float], previous: Sequence[int],
                   rate_limit: int = 5, threshold: float = MP_ELIGIBILITY_THRESHOLD) -> list[int]:
    """Closest integer plan to ``raw`` under cycle, min-green and rate-limit constraints."""
    lower, upper = [], []
    for ph, gp in zip(node.phases, previous):
        if ph.eligible_for_mp(threshold):
            lower.append(max(ph.min_green, gp - rate_limit))
            upper.append(gp + rate_limit)
        else:
            lower.append(ph.fixed_green)
            upper.append(ph.fixed_green)
    prob = miqp.AllocationProblem.build([1.0] * len(raw), raw, lower, upper, node.effective_green)
    return miqp.solve(prob)


@dataclass
class MpNodeState:
    node: SignalizedNode
    previous: list
    rate_limit: int = 5
    last_raw: np.ndarray | None = None
    last_pressures: np.ndarray | None = None


class NodeTopology:
    """Index arrays for evaluating all link and phase pressures of one node at once."""

    def __init__(self, node: SignalizedNode, network: Network):
        net = network
        incoming = list(dict.fromkeys(z for ph in node.phases for z in ph.incoming))
        self.incoming = np.array([net.link_index[z] for z in incoming], dtype=np.int64)
        pos = {z: i for i, z in enumerate(incoming)}
        conns, owner = [], []
        for z in incoming:
            zi = net.link_index[z]
            if net.out_conns[zi].size == 0:
                raise KeyError(f"no turn-ratio row for link {z}")
            conns.extend(net.out_conns[zi].tolist())
            owner.extend([pos[z]] * net.out_conns[zi].size)
        self.conns = np.array(conns, dtype=np.int64)
        self.owner = np.array(owner, dtype=np.int64)
        self.to = net.conn_to[self.conns]
        self.cap_to = net.capacity[self.to]
        self.cap_in = net.capacity[self.incoming]
        self.sat_in = net.saturation[self.incoming]
        self.membership = np.zeros((len(node.phases), len(incoming)))
        for j, ph in enumerate(node.phases):
            for z in ph.incoming:
                self.membership[j, pos[z]] = 1.0

    def link_pressures(self, queues: np.ndarray, beta: np.ndarray) -> np.ndarray:
        down = np.bincount(self.owner, weights=beta[self.conns] * queues[self.to] / self.cap_to,
                           minlength=self.incoming.size)
        return np.maximum(0.0, (queues[self.incoming] / self.cap_in - down) * self.sat_in)

    def phase_pressures(self, queues: np.ndarray, beta: np.ndarray) -> np.ndarray:
        return np.maximum(0.0, self.membership @ self.link_pressures(queues, beta))


def mp_update(state: MpNodeState, queues, ratios: TurnRatioTable, network: Network,
              threshold: float = MP_ELIGIBILITY_THRESHOLD, topology: NodeTopology | None = None) -> list[int]:
    """One Max-Pressure update from last-cycle mean queues; returns the new greens."""
    node = state.node
    if topology is not None:
        P = topology.phase_pressures(_as_array(queues, network), ratios.beta)
    else:
        lp = {z: link_pressure(z, queues, ratios, network) for ph in node.phases for z in ph.incoming}
        P = phase_pressures(node, lp)
    raw = raw_green_split(node, P, state.previous, threshold)
    greens = project_greens(node, raw, state.previous, state.rate_limit, threshold)
    state.previous = greens
    state.last_raw, state.last_pressures = raw, P
    return greens


class MaxPressureController:
    """Max-Pressure at a set of nodes, updated at each node's cycle boundary.

    Queues fed to the pressures are the mean link accumulations over the
    node's last completed cycle.
    """

    def __init__(self, network: Network, nodes, rate_limit: int = 5,
                 threshold: float = MP_ELIGIBILITY_THRESHOLD):
        self.network = network
        self.node_ids = list(nodes)
        self.rate_limit = rate_limit
        self.threshold = threshold
        for nid in self.node_ids:
            if not network.node_by_id[nid].signalized:
                raise ValueError(f"node {nid} is not signalized")

    def attach(self, sim):
        net = self.network
        self.states = {
            nid: MpNodeState(net.node_by_id[nid], list(net.node_by_id[nid].fixed_greens), self.rate_limit)
            for nid in self.node_ids
        }
        self._topology = {nid: NodeTopology(net.node_by_id[nid], net) for nid in self.node_ids}
        self._by_index = {net.node_index[n]: n for n in self.node_ids}
        self._adjacent = {}
        self._mark = {}
        for nid in self.node_ids:
            node = net.node_by_id[nid]
            adj = set(net.link_index[z] for z in node.incoming + node.outgoing)
            self._adjacent[nid] = np.array(sorted(adj), dtype=np.int64)
            self._mark[nid] = (0, np.zeros(len(adj)))
        self._queues = np.zeros(net.n_links)

    def before_step(self, sim, k: int):
        if k == 0 or not self.node_ids:
            return
        starts = sim.plans.cycle_starts(k)
        if starts.size == 0:
            return
        net = self.network
        for i in starts.tolist():
            nid = self._by_index.get(i)
            if nid is None:
                continue
            k0, snap = self._mark[nid]
            n_steps = k - k0
            if n_steps <= 0:
                continue
            adj = self._adjacent[nid]
            now = sim.cum_x[adj]
            self._queues[adj] = (now - snap) / n_steps
            st = self.states[nid]
            st.previous = list(sim.current_greens(nid))
            greens = mp_update(st, self._queues, sim.ratios, net, self.threshold, self._topology[nid])
            sim.request_plan(nid, greens)
            self._mark[nid] = (k, now)
