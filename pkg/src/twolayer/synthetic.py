"""Seeded synthetic OD demand for grid networks.

Two patterns are provided: ``mixed`` spreads trips from every origin over
random destinations across the whole grid; ``directional`` adds a dominant
flow from the outer regions into the central one on top of a lighter mixed
background.
"""
from __future__ import annotations

import numpy as np

from .demand import Demand, ODEntry, TrapezoidProfile
from .network import Network


def _dest_pool(network: Network, origin: str, dests: list[str]) -> list[str]:
    # skip the exit next to the entry (same node) and the origin link itself
    up = network.link_by_id[origin].downstream_node
    return [d for d in dests if d != origin and network.link_by_id[d].upstream_node != up]


def mixed_demand(network: Network, origin_rate: float, seed: int | None = None, dests_per_origin: int = 6,
                 internal_share: float = 0.5, profile: TrapezoidProfile | None = None) -> Demand:
    """Every origin sends ``origin_rate`` veh/h (internal origins ``internal_share`` of it)
    to ``dests_per_origin`` destinations drawn uniformly, with random weights."""
    rng = np.random.default_rng(seed)
    dests = network.destinations()
    entries = []
    for o in network.origins():
        pool = _dest_pool(network, o, dests)
        k = min(dests_per_origin, len(pool))
        if k == 0:
            continue
        chosen = rng.choice(len(pool), size=k, replace=False)
        wts = rng.uniform(0.5, 1.5, size=k)
        total = origin_rate * (1.0 if network.link_by_id[o].upstream_node is None else internal_share)
        for i, wt in zip(chosen, wts):
            entries.append(ODEntry(o, pool[i], float(total * wt / wts.sum())))
    return Demand(tuple(entries), profile if profile is not None else TrapezoidProfile())


def directional_demand(network: Network, origin_rate: float, seed: int | None = None,
                       target_region: str | None = None, focus_share: float = 0.7,
                       cross_share: float = 0.0, dests_per_origin: int = 6, internal_share: float = 0.5,
                       profile: TrapezoidProfile | None = None) -> Demand:
    """Origins outside ``target_region`` send ``focus_share`` of their trips into it.

    A further ``cross_share`` goes to destinations in regions other than the
    target and the origin's own, so with column bands it crosses the target.
    The target defaults to the middle region of the partition. Origins inside
    the target keep a mixed pattern.
    """
    rng = np.random.default_rng(seed)
    regions = network.partition.regions
    target = target_region if target_region is not None else regions[len(regions) // 2]
    t_idx = network.region_index[target]
    dests = network.destinations()
    inside = [d for d in dests if network.link_region[network.link_index[d]] == t_idx]
    entries = []
    for o in network.origins():
        total = origin_rate * (1.0 if network.link_by_id[o].upstream_node is None else internal_share)
        in_target = network.link_region[network.link_index[o]] == t_idx
        groups = [(_dest_pool(network, o, dests), 1.0)]
        if not in_target:
            o_reg = network.link_region[network.link_index[o]]
            across = [d for d in dests if network.link_region[network.link_index[d]] not in (t_idx, o_reg)]
            groups = [(_dest_pool(network, o, inside), focus_share),
                      (_dest_pool(network, o, across), cross_share),
                      (_dest_pool(network, o, dests), 1.0 - focus_share - cross_share)]
        for pool, share in groups:
            k = min(dests_per_origin, len(pool))
            if k == 0 or share <= 0:
                continue
            chosen = rng.choice(len(pool), size=k, replace=False)
            wts = rng.uniform(0.5, 1.5, size=k)
            for i, wt in zip(chosen, wts):
                entries.append(ODEntry(o, pool[i], float(total * share * wt / wts.sum())))
    return Demand(tuple(entries), profile if profile is not None else TrapezoidProfile())


def make_demand(network: Network, kind: str, origin_rate: float, seed: int | None = None, **kw) -> Demand:
    if kind == "mixed":
        return mixed_demand(network, origin_rate, seed, **kw)
    if kind == "directional":
        return directional_demand(network, origin_rate, seed, **kw)
    raise ValueError(f"unknown demand pattern {kind!r}")
