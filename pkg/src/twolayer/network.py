"""Network graph: links, signalized nodes, phases, partition and turn ratios."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

VEHICLE_LENGTH = 5.0
MP_ELIGIBILITY_THRESHOLD = 7.0


class NetworkError(ValueError):
    pass


def storage_capacity(length: float, lanes: int, vehicle_length: float = VEHICLE_LENGTH) -> int:
    return max(1, int(math.floor(length * lanes / vehicle_length + 1e-9)))


@dataclass(frozen=True)
class Link:
    id: str
    length: float
    lanes: int
    saturation_flow: float  # veh/s
    free_flow_speed: float  # m/s
    downstream_node: str | None
    upstream_node: str | None = None
    region: str | None = None
    is_origin: bool = False
    is_destination: bool = False
    capacity: int | None = None

    def __post_init__(self):
        if self.saturation_flow <= 0 or self.free_flow_speed <= 0:
            raise NetworkError(f"link {self.id}: saturation flow and speed must be positive")
        if self.length <= 0 or self.lanes < 1:
            raise NetworkError(f"link {self.id}: bad geometry")


@dataclass(frozen=True)
class Phase:
    id: str
    approaches: tuple[tuple[str, str], ...]
    fixed_green: int
    min_green: int = 7

    @property
    def incoming(self) -> tuple[str, ...]:
        seen = dict.fromkeys(z for z, _ in self.approaches)
        return tuple(seen)

    def eligible_for_mp(self, threshold: float = MP_ELIGIBILITY_THRESHOLD) -> bool:
        return self.fixed_green > threshold


@dataclass(frozen=True)
class SignalizedNode:
    """Intersection with a fixed phase order.

    ``connections`` lists every allowed (incoming, outgoing) pair. A node
    without phases is unsignalized: all its connections are always green.
    """

    id: str
    incoming: tuple[str, ...]
    outgoing: tuple[str, ...]
    connections: tuple[tuple[str, str], ...]
    phases: tuple[Phase, ...] = ()
    cycle: int = 90
    lost_time: int = 10
    offset: int = 0

    @property
    def signalized(self) -> bool:
        return bool(self.phases)

    @property
    def effective_green(self) -> int:
        return self.cycle - self.lost_time

    @property
    def fixed_greens(self) -> tuple[int, ...]:
        return tuple(p.fixed_green for p in self.phases)

    @property
    def min_greens(self) -> tuple[int, ...]:
        return tuple(p.min_green for p in self.phases)


def validate_signal_plan(node: SignalizedNode, greens: Sequence[int] | None = None) -> list[str]:
    """Return the list of plan violations; empty when the plan is valid."""
    if not node.signalized:
        return []
    greens = node.fixed_greens if greens is None else tuple(greens)
    problems = []
    if len(greens) != len(node.phases):
        return [f"node {node.id}: {len(greens)} greens for {len(node.phases)} phases"]
    if any(int(g) != g for g in greens):
        problems.append(f"node {node.id}: non-integer green")
    if sum(greens) + node.lost_time != node.cycle:
        problems.append(
            f"node {node.id}: cycle violation ({sum(greens)} + {node.lost_time} != {node.cycle})"
        )
    for g, ph in zip(greens, node.phases):
        if g < ph.min_green:
            problems.append(f"node {node.id}: min-green violation in phase {ph.id} ({g} < {ph.min_green})")
    return problems


@dataclass(frozen=True)
class BoundaryGroup:
    """Boundary nodes gating flow from ``source`` region into ``target`` region.

    ``primary``/``secondary`` map node id to the index of the phase serving the
    crossing direction and the phase that absorbs the remaining green.
    """

    source: str
    target: str
    nodes: tuple[str, ...]
    primary: dict
    secondary: dict


@dataclass(frozen=True)
class RegionPartition:
    regions: tuple[str, ...]
    link_region: dict
    boundary_groups: tuple[BoundaryGroup, ...] = ()
    entry_links: dict = field(default_factory=dict)

    @property
    def control_layout(self) -> list[tuple[str, str]]:
        """Ordered u components: boundary pairs first, then external u_ii."""
        layout = [(g.source, g.target) for g in self.boundary_groups]
        layout += [(r, r) for r in self.regions]
        return layout

    @property
    def boundary_nodes(self) -> set[str]:
        return {n for g in self.boundary_groups for n in g.nodes}


class TurnRatioTable:
    """Split fractions per allowed connection plus per-link trip-ending fractions.

    Stored as flat arrays aligned with ``Network.connections``.
    """

    def __init__(self, network: "Network", beta: np.ndarray | None = None, ending: np.ndarray | None = None):
        self.network = network
        self.beta = network.uniform_beta() if beta is None else np.asarray(beta, dtype=float).copy()
        if ending is None:
            ending = np.where(network.has_downstream, 0.0, 1.0)
        self.ending = np.asarray(ending, dtype=float).copy()

    def copy(self) -> "TurnRatioTable":
        return TurnRatioTable(self.network, self.beta, self.ending)

    def ratio(self, z: str, w: str) -> float:
        return float(self.beta[self.network.conn_index[(z, w)]])

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.network.conn_from, weights=self.beta, minlength=self.network.n_links)

    def violations(self, tol: float = 1e-9) -> list[str]:
        net = self.network
        out = []
        if np.any(self.beta < 0):
            out.append("negative turn ratio")
        sums = self.row_sums()
        bad = np.flatnonzero(net.has_downstream & (np.abs(sums - 1.0) > tol))
        out += [f"row {net.link_ids[i]} sums to {sums[i]}" for i in bad]
        if np.any((self.ending < 0) | (self.ending > 1)):
            out.append("ending fraction outside [0, 1]")
        return out


class Network:
    """Immutable, validated network aggregate with array views for simulation."""

    def __init__(
        self,
        links: Sequence[Link],
        nodes: Sequence[SignalizedNode],
        partition: RegionPartition | None = None,
        vehicle_length: float = VEHICLE_LENGTH,
    ):
        self.vehicle_length = vehicle_length
        self.links = tuple(links)
        self.nodes = tuple(nodes)
        self.link_ids = [l.id for l in self.links]
        self.node_ids = [n.id for n in self.nodes]
        _check_unique(self.link_ids, "link")
        _check_unique(self.node_ids, "node")
        self.link_index = {lid: i for i, lid in enumerate(self.link_ids)}
        self.node_index = {nid: i for i, nid in enumerate(self.node_ids)}
        self.node_by_id = {n.id: n for n in self.nodes}
        self.link_by_id = {l.id: l for l in self.links}
        self._resolve()
        if partition is None:
            partition = RegionPartition(("all",), {lid: "all" for lid in self.link_ids})
        self.partition = partition
        self._resolve_partition()

    # construction -----------------------------------------------------
    def _resolve(self):
        for link in self.links:
            for ref in (link.downstream_node, link.upstream_node):
                if ref is not None and ref not in self.node_index:
                    raise NetworkError(f"link {link.id}: dangling node reference {ref}")
        conn_from, conn_to, conn_node = [], [], []
        self.conn_index = {}
        for node in self.nodes:
            for z in node.incoming + node.outgoing:
                if z not in self.link_index:
                    raise NetworkError(f"node {node.id}: dangling link reference {z}")
            for z in node.incoming:
                if self.link_by_id[z].downstream_node != node.id:
                    raise NetworkError(f"node {node.id}: incoming link {z} ends elsewhere")
            for z, w in node.connections:
                if z not in node.incoming or w not in node.outgoing:
                    raise NetworkError(f"node {node.id}: connection ({z}, {w}) not adjacent")
                if (z, w) in self.conn_index:
                    raise NetworkError(f"duplicate connection ({z}, {w})")
                self.conn_index[(z, w)] = len(conn_from)
                conn_from.append(self.link_index[z])
                conn_to.append(self.link_index[w])
                conn_node.append(self.node_index[node.id])
            for ph in node.phases:
                for appr in ph.approaches:
                    if appr not in self.conn_index:
                        raise NetworkError(f"node {node.id} phase {ph.id}: unknown approach {appr}")
            problems = validate_signal_plan(node)
            if problems:
                raise NetworkError("; ".join(problems))
        self.conn_from = np.array(conn_from, dtype=np.int64)
        self.conn_to = np.array(conn_to, dtype=np.int64)
        self.conn_node = np.array(conn_node, dtype=np.int64)
        self.n_links = len(self.links)
        self.n_conns = len(conn_from)
        self.length = np.array([l.length for l in self.links])
        self.lanes = np.array([l.lanes for l in self.links], dtype=float)
        self.capacity = np.array(
            [l.capacity if l.capacity is not None else storage_capacity(l.length, l.lanes, self.vehicle_length)
             for l in self.links],
            dtype=float,
        )
        self.saturation = np.array([l.saturation_flow for l in self.links])
        self.free_speed = np.array([l.free_flow_speed for l in self.links])
        self.is_origin = np.array([l.is_origin for l in self.links])
        self.is_destination = np.array([l.is_destination for l in self.links])
        self.has_downstream = np.bincount(self.conn_from, minlength=self.n_links) > 0
        order = np.argsort(self.conn_from, kind="stable")
        bounds = np.searchsorted(self.conn_from[order], np.arange(self.n_links + 1))
        self.out_conns = [order[bounds[i]:bounds[i + 1]] for i in range(self.n_links)]

    def _resolve_partition(self):
        part = self.partition
        missing = [lid for lid in self.link_ids if lid not in part.link_region]
        if missing:
            raise NetworkError(f"partition misses links: {missing[:5]}")
        extra = [lid for lid in part.link_region if lid not in self.link_index]
        if extra:
            raise NetworkError(f"partition references unknown links: {extra[:5]}")
        for lid, r in part.link_region.items():
            if r not in part.regions:
                raise NetworkError(f"link {lid}: unknown region {r}")
        self.region_index = {r: i for i, r in enumerate(part.regions)}
        self.link_region = np.array([self.region_index[part.link_region[lid]] for lid in self.link_ids])
        seen = set()
        for grp in part.boundary_groups:
            for nid in grp.nodes:
                if nid not in self.node_index:
                    raise NetworkError(f"boundary group {grp.source}->{grp.target}: unknown node {nid}")
                if nid in seen:
                    raise NetworkError(f"node {nid} in more than one boundary group")
                seen.add(nid)
                nphases = len(self.node_by_id[nid].phases)
                p, s = grp.primary[nid], grp.secondary[nid]
                if not (0 <= p < nphases and 0 <= s < nphases and p != s):
                    raise NetworkError(f"boundary node {nid}: bad primary/secondary phases")
        for r, lids in part.entry_links.items():
            for lid in lids:
                if lid not in self.link_index:
                    raise NetworkError(f"entry link {lid} of region {r} unknown")

    # helpers ----------------------------------------------------------
    @property
    def n_regions(self) -> int:
        return len(self.partition.regions)

    def uniform_beta(self) -> np.ndarray:
        counts = np.bincount(self.conn_from, minlength=self.n_links).astype(float)
        return 1.0 / counts[self.conn_from] if self.n_conns else np.zeros(0)

    def signalized_nodes(self) -> list[str]:
        return [n.id for n in self.nodes if n.signalized]

    def mp_eligible_nodes(self, threshold: float = MP_ELIGIBILITY_THRESHOLD) -> list[str]:
        """Signalized nodes with an adjustable phase, excluding perimeter-control nodes."""
        boundary = self.partition.boundary_nodes
        return [
            n.id for n in self.nodes
            if n.signalized and n.id not in boundary
            and sum(ph.eligible_for_mp(threshold) for ph in n.phases) >= 2
        ]

    def origins(self) -> list[str]:
        return [l.id for l in self.links if l.is_origin]

    def destinations(self) -> list[str]:
        return [l.id for l in self.links if l.is_destination]

    def region_entry_links(self, region: str) -> list[str]:
        if region in self.partition.entry_links:
            return list(self.partition.entry_links[region])
        r = self.region_index[region]
        return [lid for i, lid in enumerate(self.link_ids) if self.is_origin[i] and self.link_region[i] == r]


def _check_unique(ids: Iterable[str], kind: str):
    seen = set()
    for i in ids:
        if i in seen:
            raise NetworkError(f"duplicate {kind} id {i}")
        seen.add(i)


def build_network(links, nodes, plans=None, partition=None, vehicle_length: float = VEHICLE_LENGTH) -> Network:
    """Validate and assemble a network.

    ``plans`` optionally maps node id to fixed-time greens that replace the
    phases' own ``fixed_green`` values.
    """
    if plans:
        nodes = [_with_plan(n, plans[n.id]) if n.id in plans else n for n in nodes]
    return Network(links, nodes, partition, vehicle_length)


def _with_plan(node: SignalizedNode, greens) -> SignalizedNode:
    if len(greens) != len(node.phases):
        raise NetworkError(f"node {node.id}: plan has {len(greens)} greens for {len(node.phases)} phases")
    phases = tuple(replace(ph, fixed_green=int(g)) for ph, g in zip(node.phases, greens))
    return replace(node, phases=phases)
