"""Critical-node ranking for Max-Pressure placement.

Nodes are scored from a fixed-time run over a peak window by three
occupancy statistics of their incoming links: the mean occupancy, the
spread of occupancy across the incoming links, and the share of signal
cycles in which at least one incoming link was congested. The weighted
score ``R = a*m1 + b*m2 + c*Nc`` ranks nodes in increasing order.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .network import Network
from .sim import SimTrajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodeCriticality:
    node: str
    m1: float
    m2: float
    n_c: float
    score: float = 0.0


def default_peak_window(total_accumulation, fraction: float = 0.8) -> tuple[int, int]:
    """Longest contiguous run of steps with accumulation >= ``fraction`` of its maximum.

    Returns a half-open step interval ``(start, stop)``; earliest run wins ties.
    """
    acc = np.asarray(total_accumulation, dtype=float)
    if acc.size == 0:
        raise ValueError("empty accumulation series")
    peak = acc.max()
    if peak <= 0:
        return 0, acc.size
    above = np.concatenate(([False], acc >= fraction * peak, [False]))
    edges = np.flatnonzero(np.diff(above.astype(np.int8)))
    starts, stops = edges[::2], edges[1::2]
    best = int(np.argmax(stops - starts))
    return int(starts[best]), int(stops[best])


def occupancy_metrics(occupancy: np.ndarray, cycle_steps: int, threshold: float = 0.8,
                      first_cycle_offset: int = 0) -> tuple[float, float, float]:
    """(m1, m2, Nc) from an occupancy series of shape (steps, incoming links).

    Cycles are consecutive blocks of ``cycle_steps`` starting at
    ``first_cycle_offset``; partial blocks at either end are ignored unless
    the window holds no complete cycle, in which case it counts as one.
    """
    occ = np.asarray(occupancy, dtype=float)
    if occ.ndim != 2 or occ.shape[0] == 0:
        raise ValueError("empty peak window")
    if occ.shape[1] == 0:
        raise ValueError("node has no incoming links")
    m1 = float(occ.mean(axis=1).mean())
    m2 = float(occ.var(axis=1).mean())
    n_full = (occ.shape[0] - first_cycle_offset) // cycle_steps if cycle_steps > 0 else 0
    if n_full >= 1:
        blocks = occ[first_cycle_offset:first_cycle_offset + n_full * cycle_steps]
        means = blocks.reshape(n_full, cycle_steps, -1).mean(axis=1)
    else:
        means = occ.mean(axis=0, keepdims=True)
    congested = np.any(means >= threshold - 1e-12, axis=1)
    return m1, m2, float(congested.mean())


def node_metrics(trajectory: SimTrajectory, network: Network, node: str,
                 peak_window: tuple[int, int] | None = None, threshold: float = 0.8) -> NodeCriticality:
    """Criticality statistics of one node over the peak window of a recorded run."""
    if trajectory.link_accumulation is None:
        raise ValueError("trajectory was recorded without link states")
    if peak_window is None:
        peak_window = default_peak_window(trajectory.total_accumulation)
    k0, k1 = peak_window
    if k1 <= k0:
        raise ValueError("empty peak window")
    nd = network.node_by_id[node]
    if not nd.incoming:
        raise ValueError(f"node {node} has no incoming links")
    idx = np.array([network.link_index[z] for z in nd.incoming])
    occ = trajectory.link_accumulation[k0:k1, idx].astype(float) / network.capacity[idx]
    step = trajectory.step
    cycle_steps = max(1, int(round(nd.cycle / step)))
    # align blocks with the node's own cycle starts
    first = int((-(k0 * step - nd.offset) % nd.cycle) / step) % cycle_steps
    m1, m2, nc = occupancy_metrics(occ, cycle_steps, threshold, first)
    return NodeCriticality(node, m1, m2, nc)


def all_node_metrics(trajectory: SimTrajectory, network: Network, nodes: Iterable[str],
                     peak_window: tuple[int, int] | None = None, threshold: float = 0.8) -> list[NodeCriticality]:
    if peak_window is None:
        peak_window = default_peak_window(trajectory.total_accumulation)
    return [node_metrics(trajectory, network, n, peak_window, threshold) for n in nodes]


def score(metrics: Sequence[NodeCriticality], weights) -> list[NodeCriticality]:
    a, b, c = (float(x) for x in weights)
    return [NodeCriticality(m.node, m.m1, m.m2, m.n_c, a * m.m1 + b * m.m2 + c * m.n_c) for m in metrics]


def rank_nodes(metrics: Sequence[NodeCriticality], weights) -> list[NodeCriticality]:
    """Scored nodes in increasing score order; ties broken by node id."""
    return sorted(score(metrics, weights), key=lambda m: (m.score, m.node))


def selection_size(rate: float, n_eligible: int) -> int:
    if not 0 < rate <= 1:
        raise ValueError(f"penetration rate must be in (0, 1], got {rate}")
    # guard against 0.3 * 10 = 3.0000000000000004
    return min(n_eligible, int(math.ceil(rate * n_eligible - 1e-9)))


def rank_and_select(metrics: Sequence[NodeCriticality], weights, rate: float,
                    eligible: Iterable[str] | None = None) -> list[str]:
    """The ``ceil(rate * |eligible|)`` lowest-scoring eligible nodes, in rank order."""
    if eligible is not None:
        keep = set(eligible)
        metrics = [m for m in metrics if m.node in keep]
    n = selection_size(rate, len(metrics))
    return [m.node for m in rank_nodes(metrics, weights)[:n]]


def random_sets(eligible: Sequence[str], rate: float, count: int, seed: int | None = None) -> list[list[str]]:
    """``count`` uniform samples without replacement of the targeted-set size."""
    if count < 1:
        raise ValueError("count must be at least 1")
    pool = sorted(eligible)
    n = selection_size(rate, len(pool))
    rng = np.random.default_rng(seed)
    return [sorted(pool[i] for i in rng.choice(len(pool), size=n, replace=False)) for _ in range(count)]


@dataclass
class CalibrationResult:
    best: tuple | None
    table: list  # (weights, vht or None, error message or None)


def calibrate_weights(grid: Iterable, rate: float, metrics: Sequence[NodeCriticality],
                      simulate: Callable[[list[str]], float], eligible: Iterable[str] | None = None,
                      out_path=None) -> CalibrationResult:
    """Grid search over score weights; ``simulate(nodes)`` returns the run's VHT.

    Failing grid points are recorded with their error and skipped. The
    first point reaching the lowest VHT wins.
    """
    grid = [tuple(float(x) for x in w) for w in grid]
    if not grid:
        raise ValueError("empty weight grid")
    table, best, best_vht = [], None, math.inf
    for w in grid:
        nodes = rank_and_select(metrics, w, rate, eligible)
        try:
            vht = float(simulate(nodes))
        except Exception as exc:  # noqa: BLE001 - failures are part of the table
            log.warning("grid point %s failed: %s", w, exc)
            table.append((w, None, str(exc)))
            continue
        table.append((w, vht, None))
        if vht < best_vht:
            best, best_vht = w, vht
    if out_path is not None:
        write_calibration_csv(out_path, table)
    return CalibrationResult(best, table)


def write_ranking_csv(path, ranked: Sequence[NodeCriticality]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["node_id", "m1", "m2", "N_c", "R", "rank"])
        for i, m in enumerate(ranked, start=1):
            wr.writerow([m.node, repr(m.m1), repr(m.m2), repr(m.n_c), repr(m.score), i])


def read_ranking_csv(path) -> list[NodeCriticality]:
    with open(path, newline="") as fh:
        return [NodeCriticality(r["node_id"], float(r["m1"]), float(r["m2"]), float(r["N_c"]), float(r["R"]))
                for r in csv.DictReader(fh)]


def write_calibration_csv(path, table) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["alpha", "beta", "gamma", "VHT", "error"])
        for (a, b, c), vht, err in table:
            wr.writerow([a, b, c, "" if vht is None else repr(vht), err or ""])
