"""Turn ratios and trip-ending fractions from time-dependent shortest paths.

Every window ``T_w`` link speeds are estimated from the simulated outflow and
accumulation, the current OD volumes (plus trips carried over from earlier
windows) are routed on fastest paths, and the volumes crossing each
connection within the window are turned into split fractions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .demand import Demand
from .network import Network, TurnRatioTable

log = logging.getLogger(__name__)


@dataclass
class TripStack:
    """Ongoing trips split at the previous horizon.

    ``elapsed`` keeps the time already spent in the split link; it is carried
    for completeness and not used by the path search.
    """

    volumes: dict = field(default_factory=dict)  # (origin, destination) -> veh
    elapsed: dict = field(default_factory=dict)

    def push(self, origin: str, destination: str, volume: float, elapsed: float = 0.0):
        if volume < 0:
            raise ValueError("negative trip volume")
        key = (origin, destination)
        self.volumes[key] = self.volumes.get(key, 0.0) + volume
        self.elapsed[key] = elapsed

    def total(self) -> float:
        return float(sum(self.volumes.values()))

    def __len__(self):
        return len(self.volumes)


@dataclass
class RoutingResult:
    ratios: TurnRatioTable
    stack: TripStack
    completed: float
    dropped: float
    counters: np.ndarray
    terminations: np.ndarray


def estimate_link_speeds(outflow, accumulation, network: Network, step: float = 1.0,
                         min_speed: float = 0.5) -> np.ndarray:
    """Mean link speed from a window of outflows and accumulations.

    Both inputs may be per-step arrays ``(steps, links)`` or per-link sums.
    Links that held no vehicles get their free-flow speed.
    """
    out = np.asarray(outflow, dtype=float)
    x = np.asarray(accumulation, dtype=float)
    if out.ndim == 2:
        out = out.sum(axis=0)
    if x.ndim == 2:
        x = x.sum(axis=0)
    vff = network.free_speed
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(x > 0, out * network.length / (x * step), vff)
    v = np.minimum(vff, v)
    return np.maximum(v, min_speed)


def _link_graph(network: Network, cost: np.ndarray) -> csr_matrix:
    # edge z -> w costs the traversal time of w
    return csr_matrix(
        (cost[network.conn_to], (network.conn_from, network.conn_to)),
        shape=(network.n_links, network.n_links),
    )


def update_turn_ratios(
    od_volumes: dict,
    trip_stack: TripStack | None,
    speeds: np.ndarray,
    network: Network,
    previous: TurnRatioTable | None,
    window: float,
) -> RoutingResult:
    """Route OD volumes on fastest paths and recompute split fractions.

    Trips whose path takes longer than ``window`` are cut at the link the
    vehicle occupies when the window elapses; the remainder is pushed onto
    the returned stack with that link as new origin.
    """
    if np.any(np.asarray(speeds) <= 0) or window <= 0:
        raise ValueError("speeds and window must be positive")
    net = network
    prev = previous if previous is not None else TurnRatioTable(net)
    volumes = dict()
    for key, v in od_volumes.items():
        if v < 0:
            raise ValueError(f"negative volume for {key}")
        if v > 0:
            volumes[key] = volumes.get(key, 0.0) + v
    if trip_stack is not None:
        for key, v in trip_stack.volumes.items():
            if v < 0:
                raise ValueError(f"negative volume for {key}")
            if v > 0:
                volumes[key] = volumes.get(key, 0.0) + v

    ttime = net.length / np.asarray(speeds, dtype=float)
    counters = np.zeros(net.n_conns)
    terminations = np.zeros(net.n_links)
    new_stack = TripStack()
    completed = dropped = 0.0

    keys = sorted(volumes)
    sources = sorted({net.link_index[o] for o, _ in keys})
    if sources:
        graph = _link_graph(net, ttime)
        dist, pred = dijkstra(graph, directed=True, indices=sources, return_predecessors=True)
        row_of = {s: r for r, s in enumerate(sources)}
    conn_index = net.conn_index
    ids = net.link_ids
    for o, d in keys:
        vol = volumes[(o, d)]
        oi, di = net.link_index[o], net.link_index[d]
        r = row_of[oi]
        if oi != di and not np.isfinite(dist[r, di]):
            log.warning("destination %s unreachable from %s; dropping %.3f veh", d, o, vol)
            dropped += vol
            continue
        path = [di]
        while path[-1] != oi:
            path.append(int(pred[r, path[-1]]))
        path.reverse()
        cum = np.cumsum(ttime[path])
        if cum[-1] > window:
            cut = int(np.searchsorted(cum, window, side="right"))
            elapsed = window - (cum[cut - 1] if cut > 0 else 0.0)
            new_stack.push(ids[path[cut]], d, vol, elapsed)
            prefix = path[:cut + 1]
        else:
            prefix = path
            terminations[di] += vol
            completed += vol
        for a, b in zip(prefix[:-1], prefix[1:]):
            counters[conn_index[(ids[a], ids[b])]] += vol

    beta = prev.beta.copy()
    out_tot = np.bincount(net.conn_from, weights=counters, minlength=net.n_links)
    has = out_tot[net.conn_from] > 0
    beta[has] = counters[has] / out_tot[net.conn_from][has]
    ending = prev.ending.copy()
    seen = terminations + out_tot
    pos = seen > 0
    ending[pos] = terminations[pos] / seen[pos]
    ending[~net.has_downstream] = 1.0
    ratios = TurnRatioTable(net, beta, ending)
    return RoutingResult(ratios, new_stack, completed, dropped, counters, terminations)


def split_inflows(inflow: dict, nominal: dict) -> dict:
    """Distribute measured origin inflow across destinations by nominal OD shares."""
    by_origin: dict = {}
    for (o, d), v in nominal.items():
        by_origin.setdefault(o, []).append((d, v))
    out = {}
    for o, q in inflow.items():
        if q <= 0 or o not in by_origin:
            continue
        tot = sum(v for _, v in by_origin[o])
        if tot <= 0:
            continue
        for d, v in by_origin[o]:
            if v > 0:
                out[(o, d)] = q * v / tot
    return out


class TurnRatioUpdater:
    """Stateful wrapper used by the simulator once per window."""

    def __init__(self, network: Network, demand: Demand, window: float, min_speed: float = 0.5,
                 step: float = 1.0):
        self.network = network
        self.demand = demand
        self.window = window
        self.min_speed = min_speed
        self.step = step
        self.stack = TripStack()
        self.totals = demand.total_rates()
        self.history: list = []

    def initial(self, ratios: TurnRatioTable) -> TurnRatioTable:
        """Free-flow routing of the nominal demand of the first window."""
        vols = self.demand.od_volumes(0.0, self.window)
        if not vols:
            vols = {k: v for k, v in self.totals.items() if v > 0}
        res = update_turn_ratios(vols, None, self.network.free_speed, self.network, ratios, self.window)
        return res.ratios

    def update(self, ratios: TurnRatioTable, released: np.ndarray, outflow: np.ndarray,
               accumulation: np.ndarray, t: float) -> TurnRatioTable:
        net = self.network
        speeds = estimate_link_speeds(outflow, accumulation, net, self.step, self.min_speed)
        inflow = {o: float(released[net.link_index[o]]) for o in net.origins()}
        nominal = self.demand.od_volumes(t - self.window, t)
        # after the demand has ended, queued vehicles keep the overall mix
        active = {o for o, _ in nominal}
        for key, v in self.totals.items():
            if key[0] not in active:
                nominal[key] = v
        vols = split_inflows(inflow, nominal)
        res = update_turn_ratios(vols, self.stack, speeds, net, ratios, self.window)
        self.stack = res.stack
        self.history.append((t, res.completed, res.stack.total(), res.dropped))
        return res.ratios
