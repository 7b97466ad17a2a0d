"""JSON/CSV readers and writers for networks, demand, turn ratios and trajectories.

Field names are documented in ``docs/formats.md``.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .demand import Demand, ODEntry, TrapezoidProfile
from .network import (VEHICLE_LENGTH, BoundaryGroup, Link, Network, Phase, RegionPartition,
                      SignalizedNode, TurnRatioTable, build_network)
from .sim import SimTrajectory

FORMAT_VERSION = 1


# networks -----------------------------------------------------------------
def network_to_dict(net: Network) -> dict:
    links = []
    for l in net.links:
        d = {
            "id": l.id, "length": l.length, "lanes": l.lanes, "saturation_flow": l.saturation_flow,
            "free_flow_speed": l.free_flow_speed, "upstream_node": l.upstream_node,
            "downstream_node": l.downstream_node, "is_origin": l.is_origin, "is_destination": l.is_destination,
        }
        if l.capacity is not None:
            d["capacity"] = l.capacity
        links.append(d)
    nodes, phases = [], []
    for n in net.nodes:
        nodes.append({
            "id": n.id, "incoming": list(n.incoming), "outgoing": list(n.outgoing),
            "connections": [list(c) for c in n.connections], "cycle": n.cycle, "lost_time": n.lost_time,
            "offset": n.offset, "phases": [p.id for p in n.phases],
        })
        for p in n.phases:
            phases.append({"node": n.id, "id": p.id, "approaches": [list(a) for a in p.approaches],
                           "fixed_green": p.fixed_green, "min_green": p.min_green})
    part = net.partition
    partition = {
        "regions": list(part.regions),
        "link_region": {lid: part.link_region[lid] for lid in net.link_ids},
        "entry_links": {r: list(v) for r, v in part.entry_links.items()},
        "boundary_groups": [
            {"source": g.source, "target": g.target, "nodes": list(g.nodes),
             "primary": {m: net.node_by_id[m].phases[g.primary[m]].id for m in g.nodes},
             "secondary": {m: net.node_by_id[m].phases[g.secondary[m]].id for m in g.nodes}}
            for g in part.boundary_groups
        ],
    }
    return {"format_version": FORMAT_VERSION, "vehicle_length": net.vehicle_length, "links": links,
            "nodes": nodes, "phases": phases, "partition": partition}


def network_from_dict(data: dict) -> Network:
    links = [
        Link(d["id"], float(d["length"]), int(d["lanes"]), float(d["saturation_flow"]),
             float(d["free_flow_speed"]), d.get("downstream_node"), d.get("upstream_node"),
             d.get("region"), bool(d.get("is_origin", False)), bool(d.get("is_destination", False)),
             d.get("capacity"))
        for d in data["links"]
    ]
    by_node: dict = {}
    for p in data.get("phases", []):
        by_node.setdefault(p["node"], {})[p["id"]] = Phase(
            p["id"], tuple(tuple(a) for a in p["approaches"]), int(p["fixed_green"]), int(p.get("min_green", 7)))
    nodes = []
    for d in data["nodes"]:
        own = by_node.get(d["id"], {})
        order = d.get("phases", list(own))
        missing = [pid for pid in order if pid not in own]
        if missing:
            raise ValueError(f"node {d['id']}: unknown phases {missing}")
        nodes.append(SignalizedNode(
            d["id"], tuple(d["incoming"]), tuple(d["outgoing"]), tuple(tuple(c) for c in d["connections"]),
            tuple(own[pid] for pid in order), int(d.get("cycle", 90)), int(d.get("lost_time", 10)),
            int(d.get("offset", 0))))
    partition = None
    part = data.get("partition")
    if part is not None:
        phase_pos = {n.id: {p.id: i for i, p in enumerate(n.phases)} for n in nodes}
        link_region = dict(part.get("link_region") or {})
        for l in links:
            if l.id not in link_region and l.region is not None:
                link_region[l.id] = l.region
        groups = []
        for g in part.get("boundary_groups", []):
            try:
                prim = {m: phase_pos[m][pid] for m, pid in g["primary"].items()}
                sec = {m: phase_pos[m][pid] for m, pid in g["secondary"].items()}
            except KeyError as exc:
                raise ValueError(f"boundary group {g['source']}->{g['target']}: unknown node or phase {exc}") from exc
            groups.append(BoundaryGroup(g["source"], g["target"], tuple(g["nodes"]), prim, sec))
        partition = RegionPartition(tuple(part["regions"]), link_region, tuple(groups),
                                    {r: tuple(v) for r, v in part.get("entry_links", {}).items()})
    return build_network(links, nodes, partition=partition,
                         vehicle_length=float(data.get("vehicle_length", VEHICLE_LENGTH)))


def save_network(net: Network, path) -> None:
    _write_json(path, network_to_dict(net))


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


# demand -------------------------------------------------------------------
def demand_to_dict(demand: Demand) -> dict:
    prof = demand.profile
    return {
        "format_version": FORMAT_VERSION,
        "profile": None if prof is None else {"warmup": prof.warmup, "peak": prof.peak, "rampdown": prof.rampdown},
        "entries": [
            {"origin": e.origin, "destination": e.destination, "rate": e.rate, "start": e.start,
             "end": None if math.isinf(e.end) else e.end}
            for e in demand.entries
        ],
    }


def demand_from_dict(data: dict) -> Demand:
    prof = data.get("profile", {})
    profile = None if prof is None else TrapezoidProfile(**prof)
    entries = []
    for e in data["entries"]:
        rate = float(e["rate"])
        if rate < 0:
            raise ValueError(f"negative rate for {e['origin']} -> {e['destination']}")
        end = e.get("end")
        entries.append(ODEntry(e["origin"], e["destination"], rate, float(e.get("start", 0.0)),
                               math.inf if end is None else float(end)))
    return Demand(tuple(entries), profile)


def save_demand(demand: Demand, path) -> None:
    _write_json(path, demand_to_dict(demand))


def load_demand(path) -> Demand:
    with open(path) as fh:
        return demand_from_dict(json.load(fh))


# turn ratios --------------------------------------------------------------
def write_turn_ratios_csv(path, ratios: TurnRatioTable, network: Network) -> None:
    """One row per allowed connection plus one ``ending`` row per link."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["node", "in_link", "out_link", "ratio"])
        for c in range(network.n_conns):
            wr.writerow([network.node_ids[network.conn_node[c]], network.link_ids[network.conn_from[c]],
                         network.link_ids[network.conn_to[c]], _num(ratios.beta[c])])
        for i, lid in enumerate(network.link_ids):
            wr.writerow([network.links[i].downstream_node or "", lid, "ending", _num(ratios.ending[i])])


# trajectories -------------------------------------------------------------
def write_timeseries_csv(path, traj: SimTrajectory) -> None:
    regions = list(traj.regions)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step"] + [f"n_{r}" for r in regions] + [f"production_{r}" for r in regions]
                    + ["total_virtual_queue", "cumulative_endings"])
        for k in range(traj.n_steps):
            wr.writerow([k] + [_num(v) for v in traj.accumulation[k]] + [_num(v) for v in traj.production[k]]
                        + [_num(traj.virtual_queue[k]), _num(traj.cumulative_endings[k])])


def write_mfd_csv(path, traj: SimTrajectory, interval_steps: int = 90) -> None:
    """Interval means of accumulation and production per region."""
    regions = list(traj.regions)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["interval", "start_step", "region", "accumulation", "production"])
        for i, k0 in enumerate(range(0, traj.n_steps, interval_steps)):
            k1 = min(traj.n_steps, k0 + interval_steps)
            n = traj.accumulation[k0:k1].mean(axis=0)
            p = traj.production[k0:k1].mean(axis=0)
            for r, reg in enumerate(regions):
                wr.writerow([i, k0, reg, _num(n[r]), _num(p[r])])


def write_control_log_csv(path, log: list, layout) -> None:
    names = [f"u_{a}_{b}" if a != b else f"u_{a}" for a, b in layout]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["interval", "step", "active"] + names)
        for i, (k, u, active, _n) in enumerate(log):
            wr.writerow([i, k, int(active)] + [_num(v) for v in u])


def _num(x) -> str:
    return repr(float(x))


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=False) + "\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj
