"""Synthetic signalized grid networks with column-band regions."""
from __future__ import annotations

import numpy as np

from .network import (BoundaryGroup, Link, Network, Phase, RegionPartition, SignalizedNode,
                      build_network)

# heading -> (d_row, d_col)
_STEP = {"E": (0, 1), "W": (0, -1), "S": (1, 0), "N": (-1, 0)}
_OPPOSITE = {"E": "W", "W": "E", "N": "S", "S": "N"}


def node_id(r: int, c: int) -> str:
    return f"n{r}_{c}"


def gen_grid_network(
    rows: int,
    cols: int,
    n_regions: int = 3,
    length: float = 200.0,
    lanes: int = 2,
    lane_saturation: float = 0.5,
    free_flow_speed: float = 25 / 3.6,
    edge_length: float = 100.0,
    cycle: int = 90,
    lost_time: int = 10,
    phases: int = 2,
    greens=None,
    internal_od_every: int = 0,
    vehicle_length: float = 5.0,
) -> Network:
    """Bidirectional ``rows x cols`` grid of signalized intersections.

    Every perimeter node gets one entry (origin) and one exit (destination)
    link per outer side. Regions are contiguous column bands; the last
    column of a band gates flow into the next band and the first column of
    a band gates flow back into the previous one. With ``internal_od_every``
    = k, every k-th internal link is also an origin and a destination.
    """
    if rows < 2 or cols < 2:
        raise ValueError("grid needs at least 2 rows and 2 columns")
    if not 1 <= n_regions <= cols:
        raise ValueError("number of regions must be between 1 and the number of columns")
    if phases not in (2, 4):
        raise ValueError("phases must be 2 or 4")
    bands = np.array_split(np.arange(cols), n_regions)
    if any(len(b) < 2 for b in bands[1:-1]):
        # an inner one-column band would put its nodes in two boundary groups
        raise ValueError("inner regions need at least two columns")
    col_region = {}
    for b, band in enumerate(bands):
        for c in band:
            col_region[int(c)] = f"R{b + 1}"
    sat = lane_saturation * lanes

    links: list[Link] = []
    heading: dict[str, str] = {}
    link_region: dict[str, str] = {}
    incoming = {node_id(r, c): [] for r in range(rows) for c in range(cols)}
    outgoing = {node_id(r, c): [] for r in range(rows) for c in range(cols)}

    def add(lid, up, down, head, region, ln, origin=False, dest=False):
        links.append(Link(lid, ln, lanes, sat, free_flow_speed, down, up, region, origin, dest))
        heading[lid] = head
        link_region[lid] = region
        if down is not None:
            incoming[down].append(lid)
        if up is not None:
            outgoing[up].append(lid)

    k_internal = 0
    for r in range(rows):
        for c in range(cols):
            for head, (dr, dc) in _STEP.items():
                r2, c2 = r + dr, c + dc
                if 0 <= r2 < rows and 0 <= c2 < cols:
                    od = internal_od_every > 0 and k_internal % internal_od_every == 0
                    k_internal += 1
                    add(f"l{r}_{c}-{r2}_{c2}", node_id(r, c), node_id(r2, c2), head,
                        col_region[c2], length, od, od)
                else:
                    # outer side: entry heading inwards, exit heading outwards
                    side = head
                    add(f"in_{side}_{r}_{c}", None, node_id(r, c), _OPPOSITE[side], col_region[c],
                        edge_length, origin=True)
                    add(f"out_{side}_{r}_{c}", node_id(r, c), None, side, col_region[c],
                        edge_length, dest=True)

    by_id = {l.id: l for l in links}
    if greens is None:
        g_each = (cycle - lost_time) // phases
        greens = [g_each] * phases
        greens[0] += (cycle - lost_time) - g_each * phases
    groups_of = {2: [("E", "W"), ("N", "S")], 4: [("E",), ("W",), ("N",), ("S",)]}[phases]
    names = {2: ["EW", "NS"], 4: ["EB", "WB", "NB", "SB"]}[phases]

    nodes = []
    for r in range(rows):
        for c in range(cols):
            nid = node_id(r, c)
            conns = []
            for z in incoming[nid]:
                up = by_id[z].upstream_node
                for w in outgoing[nid]:
                    if heading[w] == _OPPOSITE[heading[z]]:
                        continue  # no U-turns
                    if up is not None and by_id[w].downstream_node == up:
                        continue
                    conns.append((z, w))
            ph = []
            for p, heads in enumerate(groups_of):
                appr = tuple((z, w) for z, w in conns if heading[z] in heads)
                ph.append(Phase(names[p], appr, int(greens[p])))
            nodes.append(SignalizedNode(nid, tuple(incoming[nid]), tuple(outgoing[nid]), tuple(conns),
                                        tuple(ph), cycle, lost_time, 0))

    regions = tuple(f"R{b + 1}" for b in range(n_regions))
    groups = []
    for b in range(n_regions - 1):
        last, first = int(bands[b][-1]), int(bands[b + 1][0])
        for src, dst, col, head in ((regions[b], regions[b + 1], last, "E"),
                                    (regions[b + 1], regions[b], first, "W")):
            members = tuple(node_id(r, col) for r in range(rows))
            prim = _phase_with_heading(groups_of, head)
            sec = _largest_conflicting(greens, groups_of, prim)
            groups.append(BoundaryGroup(src, dst, members, {m: prim for m in members},
                                        {m: sec for m in members}))
    entry = {reg: [l.id for l in links if l.is_origin and link_region[l.id] == reg] for reg in regions}
    partition = RegionPartition(regions, link_region, tuple(groups), entry)
    return build_network(links, nodes, partition=partition, vehicle_length=vehicle_length)


def _phase_with_heading(groups_of, head) -> int:
    for p, heads in enumerate(groups_of):
        if head in heads:
            return p
    raise ValueError(head)


def _largest_conflicting(greens, groups_of, primary) -> int:
    axis = {"E": 0, "W": 0, "N": 1, "S": 1}
    prim_axis = axis[groups_of[primary][0]]
    cands = [p for p, heads in enumerate(groups_of) if axis[heads[0]] != prim_axis]
    return max(cands, key=lambda p: (greens[p], -p))
