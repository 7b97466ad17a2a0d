"""Mesoscopic store-and-forward simulation with moving/waiting link parts.

Each link holds a moving part (vehicles travelling at free-flow speed towards
the queue tail, kept as release cohorts) and a waiting part (queue at the
stop line). Per step of duration ``T``:

1. demand joins the origin virtual queues;
2. virtual queues release into origin links, bounded by entry saturation
   times the gating factor and by free space;
3. trips end from the waiting part at rate ``e_z * S_z * T``;
4. green approaches transfer ``min(w_z * beta, beta * S_z * T)``, blocked when
   the receiving link is at or above ``jam_threshold * c_w`` and rationed
   proportionally when inflows exceed free space;
5. arrivals join the receiving moving part as a cohort released after the
   free-flow time to the current queue tail;
6. matured cohorts join the waiting part.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .demand import Demand
from .network import Network, TurnRatioTable, validate_signal_plan


class SimulationError(RuntimeError):
    pass


@dataclass
class SimConfig:
    step: float = 1.0
    jam_threshold: float = 0.95
    turn_ratio_window: float = 900.0
    min_speed: float = 0.5
    dynamic_turn_ratios: bool = True
    record_links: bool = True
    record_turn_ratios: bool = False


@dataclass
class LinkState:
    moving: np.ndarray
    waiting: np.ndarray
    cohorts: np.ndarray  # (links, slots) ring buffer of pending moving volume
    virtual_queue: np.ndarray
    cumulative_outflow: np.ndarray
    cumulative_time: np.ndarray  # veh*s
    generated: float = 0.0
    ended: float = 0.0
    k: int = 0
    # flows of the last step
    released: np.ndarray | None = None
    outflow: np.ndarray | None = None
    endings: np.ndarray | None = None
    transfers: np.ndarray | None = None

    @classmethod
    def empty(cls, network: Network, step: float = 1.0) -> "LinkState":
        n = network.n_links
        slots = int(np.max(np.ceil(network.length / (network.free_speed * step)))) + 1 if n else 1
        z = np.zeros(n)
        return cls(z.copy(), z.copy(), np.zeros((n, slots)), z.copy(), z.copy(), z.copy())

    @property
    def accumulation(self) -> np.ndarray:
        return self.moving + self.waiting

    def copy(self) -> "LinkState":
        out = LinkState(
            self.moving.copy(), self.waiting.copy(), self.cohorts.copy(), self.virtual_queue.copy(),
            self.cumulative_outflow.copy(), self.cumulative_time.copy(), self.generated, self.ended, self.k,
        )
        return out


def step(
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
    net = network
    n = net.n_links
    if state.released is None or len(state.released) != n:
        state.released, state.outflow = np.zeros(n), np.zeros(n)
        state.endings, state.transfers = np.zeros(n), np.zeros(net.n_conns)
    gate = np.ones(n) if gating is None else np.asarray(gating, dtype=float)
    gen, ended, bad = _kernel(
        state.k, state.moving, state.waiting, state.cohorts, state.virtual_queue,
        state.cumulative_outflow, state.cumulative_time,
        np.asarray(demand_k, dtype=float), gate, np.asarray(green, dtype=np.bool_),
        ratios.beta, ratios.ending,
        net.capacity, net.saturation, net.length, net.lanes, net.free_speed, net.is_origin,
        net.conn_from, net.conn_to,
        float(cfg.step), float(cfg.jam_threshold), float(net.vehicle_length),
        state.released, state.outflow, state.endings, state.transfers,
    )
    if bad:
        raise SimulationError(f"negative transfer flow at step {state.k}")
    state.generated += gen
    state.ended += ended
    state.k += 1
    return state


@njit(cache=True)
def _kernel(k, m, w, cohorts, vq, cum_out, cum_time, demand_k, gate, green, beta, ending,
            cap, sat, length, lanes, vff, is_origin, conn_from, conn_to, T, theta, veh_len,
            released, outflow, endings, flows):
    n = m.shape[0]
    nc = conn_from.shape[0]
    slots = cohorts.shape[1]
    x0 = np.empty(n)
    x1 = np.empty(n)
    gen = 0.0
    for z in range(n):
        x0[z] = m[z] + w[z]
        # (1) demand, (2) release into origin links
        vq[z] += demand_k[z]
        gen += demand_k[z]
        rel = 0.0
        if is_origin[z]:
            free = cap[z] - x0[z]
            if free < 0.0:
                free = 0.0
            rel = min(vq[z], sat[z] * gate[z] * T, free)
            vq[z] -= rel
        released[z] = rel
        x1[z] = x0[z] + rel
        # (3) trip endings
        e = min(w[z], ending[z] * sat[z] * T)
        w[z] -= e
        endings[z] = e
    # (4) transfers: candidates, blocking, proportional rationing
    demand_in = np.zeros(n)
    for c in range(nc):
        z = conn_from[c]
        v = conn_to[c]
        f = 0.0
        if green[c] and x0[v] < theta * cap[v]:
            f = min(w[z] * beta[c], beta[c] * sat[z] * T)
        flows[c] = f
        demand_in[v] += f
    scale = np.ones(n)
    for z in range(n):
        space = cap[z] - x1[z]
        if space < 0.0:
            space = 0.0
        if demand_in[z] > space:
            scale[z] = space / demand_in[z]
    inflow = np.zeros(n)
    out_tr = np.zeros(n)
    bad = False
    for c in range(nc):
        f = flows[c] * scale[conn_to[c]]
        if f < 0.0:
            bad = True
        flows[c] = f
        out_tr[conn_from[c]] += f
        inflow[conn_to[c]] += f
    ended = 0.0
    col = k % slots
    for z in range(n):
        wz = w[z] - out_tr[z]
        if wz < 0.0:
            wz = 0.0
        w[z] = wz
        # (5) arrivals join the moving part, released at the queue tail
        a = inflow[z] + released[z]
        if a > 0.0:
            gap = length[z] - wz * veh_len / lanes[z]
            if gap < 0.0:
                gap = 0.0
            d = int(np.ceil(gap / (vff[z] * T) - 1e-12))
            if d > slots - 1:
                d = slots - 1
            cohorts[z, (k + d) % slots] += a
            m[z] += a
        # (6) matured cohorts join the queue
        mat = cohorts[z, col]
        cohorts[z, col] = 0.0
        mz = m[z] - mat
        if mz < 0.0:
            mz = 0.0
        m[z] = mz
        w[z] += mat
        # (7) bookkeeping
        outflow[z] = out_tr[z] + endings[z]
        cum_out[z] += outflow[z]
        cum_time[z] += (m[z] + w[z]) * T
        ended += endings[z]
    return gen, ended, bad


def regional_accumulation(state: LinkState, network: Network) -> np.ndarray:
    """Vehicles inside each region's links; virtual queues excluded."""
    return np.bincount(network.link_region, weights=state.accumulation, minlength=network.n_regions)


def production(outflow_window, network: Network, step: float = 1.0) -> np.ndarray:
    """Mean regional production (veh*m/s) over a window of per-step link outflows."""
    arr = np.atleast_2d(np.asarray(outflow_window, dtype=float))
    per_step = arr * network.length / step
    mean = per_step.mean(axis=0) if arr.shape[0] else np.zeros(network.n_links)
    return np.bincount(network.link_region, weights=mean, minlength=network.n_regions)


@dataclass
class SimTrajectory:
    step: float
    regions: tuple
    accumulation: np.ndarray  # (K, R)
    production: np.ndarray  # (K, R)
    virtual_queue: np.ndarray  # (K,)
    in_network: np.ndarray  # (K,)
    cumulative_endings: np.ndarray  # (K,)
    cumulative_generated: np.ndarray  # (K,)
    link_accumulation: np.ndarray | None = None  # (K, links) float32
    greens_log: list = field(default_factory=list)
    control_log: list = field(default_factory=list)
    turn_ratio_log: list = field(default_factory=list)  # (step, TurnRatioTable)
    seed: int | None = None

    @property
    def n_steps(self) -> int:
        return len(self.virtual_queue)

    @property
    def total_accumulation(self) -> np.ndarray:
        return self.accumulation.sum(axis=1)

    def vht(self) -> float:
        return compute_vht(self, self.step)

    def peak_accumulation(self) -> float:
        return float(self.in_network.max()) if self.n_steps else 0.0


def compute_vht(trajectory: SimTrajectory, step: float | None = None) -> float:
    """Vehicle-hours: time in links plus time in virtual queues."""
    T = trajectory.step if step is None else step
    if trajectory.n_steps == 0:
        return 0.0
    veh_s = float(trajectory.in_network.sum() * T + trajectory.virtual_queue.sum() * T)
    return veh_s / 3600.0


class SignalPlans:
    """Green schedules per node; builds the per-connection green mask each step."""

    def __init__(self, network: Network, step: float):
        self.net = network
        self.step = step
        nodes = network.nodes
        self.cycle = np.array([max(n.cycle, 1) for n in nodes], dtype=float)
        self.offset = np.array([n.offset for n in nodes], dtype=float)
        self.max_phases = max([len(n.phases) for n in nodes], default=0)
        red, always = self.max_phases, self.max_phases + 1
        self.mask = np.zeros((network.n_conns, self.max_phases + 2), dtype=bool)
        self.mask[:, always] = True
        for node in nodes:
            for p, ph in enumerate(node.phases):
                for appr in ph.approaches:
                    self.mask[network.conn_index[appr], p] = True
        for c in range(network.n_conns):
            if not nodes[network.conn_node[c]].signalized:
                self.mask[c, :] = True
        cmax = int(self.cycle.max()) if len(nodes) else 1
        self.sched = np.full((len(nodes), cmax), always, dtype=np.int64)
        self.greens = [tuple(n.fixed_greens) for n in nodes]
        for i, node in enumerate(nodes):
            if node.signalized:
                self._fill(i, self.greens[i])
        self._starts_k, self._starts = -1, np.zeros(0, dtype=np.int64)
        self.red = red

    def _fill(self, i: int, greens):
        node = self.net.nodes[i]
        row = np.full(self.sched.shape[1], self.max_phases, dtype=np.int64)
        n = len(greens)
        base, extra = divmod(node.lost_time, n)
        t = 0
        for p, g in enumerate(greens):
            row[t:t + g] = p
            t += g + base + (1 if p < extra else 0)
        self.sched[i] = row

    def set(self, i: int, greens, cycle_index: int = -1):
        node = self.net.nodes[i]
        greens = tuple(int(g) for g in greens)
        problems = validate_signal_plan(node, greens)
        if problems:
            raise SimulationError(f"infeasible plan at cycle {cycle_index}: " + "; ".join(problems))
        self.greens[i] = greens
        self._fill(i, greens)

    def phase_time(self, k: int) -> np.ndarray:
        return np.mod(k * self.step - self.offset, self.cycle)

    def green(self, k: int) -> np.ndarray:
        return _green(k * self.step, self.offset, self.cycle, self.sched, self.mask, self.net.conn_node)

    def cycle_starts(self, k: int) -> np.ndarray:
        """Indices of the nodes whose cycle starts within step ``k``."""
        if k != self._starts_k:
            self._starts = np.flatnonzero(self.phase_time(k) < self.step - 1e-9)
            self._starts_k = k
        return self._starts

    def cycle_index(self, i: int, k: int) -> int:
        return int(math.floor((k * self.step - self.offset[i]) / self.cycle[i]))


class Simulator:
    """Runs the dynamics with controllers and periodic turn-ratio updates.

    Controllers implement ``attach(sim)`` and ``before_step(sim, k)``; they
    read measurements from ``cum_x`` (cumulative per-link accumulation over
    recorded steps) and ``cum_region`` and request plans through
    :meth:`request_plan` or set entry gating in ``gate``.
    """

    def __init__(
        self,
        network: Network,
        demand: Demand,
        controllers=(),
        config: SimConfig | None = None,
        turn_ratios: TurnRatioTable | None = None,
    ):
        self.network = network
        self.demand = demand
        self.controllers = list(controllers)
        self.config = config or SimConfig()
        self.initial_ratios = turn_ratios

    # controller-facing API -------------------------------------------
    def request_plan(self, node_id: str, greens) -> None:
        self.pending[self.network.node_index[node_id]] = tuple(int(g) for g in greens)

    def current_greens(self, node_id: str) -> tuple:
        i = self.network.node_index[node_id]
        return self.pending.get(i, self.plans.greens[i])

    def applied_greens(self, node_id: str) -> tuple:
        return self.plans.greens[self.network.node_index[node_id]]

    # ------------------------------------------------------------------
    def run(self, horizon_steps: int, seed: int | None = None) -> SimTrajectory:
        from .routing import TurnRatioUpdater

        if horizon_steps < 1:
            raise ValueError("horizon must be at least one step")
        net, cfg = self.network, self.config
        T = cfg.step
        K, R, L = horizon_steps, net.n_regions, net.n_links
        origins = net.origins()
        origin_idx = np.array([net.link_index[o] for o in origins], dtype=np.int64)
        rates = self.demand.origin_rates(origins, K, T)

        self.state = LinkState.empty(net, T)
        self.plans = SignalPlans(net, T)
        self.pending: dict[int, tuple] = {}
        self.gate = np.ones(L)
        self.ratios = self.initial_ratios.copy() if self.initial_ratios is not None else TurnRatioTable(net)
        self.k = 0
        self.cum_x = np.zeros(L)
        self.cum_region = np.zeros(R)
        self.greens_log: list = []
        self.control_log: list = []

        router = None
        window = max(1, int(round(cfg.turn_ratio_window / T)))
        if cfg.dynamic_turn_ratios and origins:
            router = TurnRatioUpdater(net, self.demand, window * T, cfg.min_speed, T)
            self.ratios = router.initial(self.ratios)
        self._check_ratios()
        ratio_log = [(0, self.ratios.copy())] if cfg.record_turn_ratios else []
        win_out = np.zeros(L)
        win_x = np.zeros(L)
        win_rel = np.zeros(L)

        acc = np.zeros((K, R))
        prod = np.zeros((K, R))
        vq = np.zeros(K)
        inn = np.zeros(K)
        cend = np.zeros(K)
        cgen = np.zeros(K)
        links = np.zeros((K, L), dtype=np.float32) if cfg.record_links else None
        links_buf = links if links is not None else np.zeros((1, L), dtype=np.float32)
        demand_k = np.zeros(L)
        region = net.link_region
        length_over_T = net.length / T

        for c in self.controllers:
            c.attach(self)

        for k in range(K):
            self.k = k
            if router is not None and k > 0 and k % window == 0:
                self.ratios = router.update(self.ratios, win_rel, win_out, win_x, k * T)
                self._check_ratios()
                if cfg.record_turn_ratios:
                    ratio_log.append((k, self.ratios.copy()))
                win_out[:] = 0.0
                win_x[:] = 0.0
                win_rel[:] = 0.0
            for c in self.controllers:
                c.before_step(self, k)
            if self.pending:
                for i in self.plans.cycle_starts(k):
                    if i in self.pending:
                        greens = self.pending.pop(i)
                        self.plans.set(i, greens, self.plans.cycle_index(i, k))
                        self.greens_log.append((k, net.node_ids[i], greens))
            green = self.plans.green(k)
            demand_k[:] = 0.0
            demand_k[origin_idx] = rates[k]
            step(self.state, net, green, self.ratios, demand_k, self.gate, cfg)

            st = self.state
            vq[k], inn[k] = _record(k, st.moving, st.waiting, st.released, st.outflow, st.virtual_queue,
                                    region, length_over_T, self.cum_x, self.cum_region,
                                    win_out, win_x, win_rel, acc, prod, links_buf)
            cend[k] = st.ended
            cgen[k] = st.generated

        return SimTrajectory(
            step=T, regions=tuple(net.partition.regions), accumulation=acc, production=prod,
            virtual_queue=vq, in_network=inn, cumulative_endings=cend, cumulative_generated=cgen,
            link_accumulation=links, greens_log=self.greens_log, control_log=self.control_log,
            turn_ratio_log=ratio_log, seed=seed,
        )

    def _check_ratios(self):
        problems = self.ratios.violations()
        stuck = ~self.network.has_downstream & (self.ratios.ending < 1.0)
        if np.any(stuck):
            problems.append(f"links without turn-ratio row must end all trips: {np.flatnonzero(stuck)[:5]}")
        if problems:
            raise SimulationError("; ".join(problems[:5]))


@njit(cache=True)
def _green(t, offset, cycle, sched, mask, conn_node):
    n_nodes = offset.shape[0]
    phase_now = np.empty(n_nodes, dtype=np.int64)
    for i in range(n_nodes):
        tau = (t - offset[i]) % cycle[i]
        phase_now[i] = sched[i, int(np.floor(tau))]
    out = np.empty(conn_node.shape[0], dtype=np.bool_)
    for c in range(conn_node.shape[0]):
        out[c] = mask[c, phase_now[conn_node[c]]]
    return out


@njit(cache=True)
def _record(k, m, w, released, outflow, vq, region, length_over_T, cum_x, cum_region,
            win_out, win_x, win_rel, acc, prod, links):
    total_x = 0.0
    total_vq = 0.0
    keep = links.shape[0] > k
    for z in range(m.shape[0]):
        x = m[z] + w[z]
        r = region[z]
        cum_x[z] += x
        cum_region[r] += x
        win_out[z] += outflow[z]
        win_x[z] += x
        win_rel[z] += released[z]
        acc[k, r] += x
        prod[k, r] += outflow[z] * length_over_T[z]
        total_x += x
        total_vq += vq[z]
        if keep:
            links[k, z] = x
    return total_vq, total_x


def run(network: Network, controllers, demand: Demand, horizon_steps: int, seed: int | None = None,
        config: SimConfig | None = None, turn_ratios: TurnRatioTable | None = None) -> SimTrajectory:
    return Simulator(network, demand, controllers, config, turn_ratios).run(horizon_steps, seed)
