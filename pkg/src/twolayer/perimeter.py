"""MFD-based perimeter control between regions.

A multivariable PI regulator maps regional accumulations to control
variables: one mean primary green per directed boundary (i -> j) and one
external gating level per region. Boundary greens are then distributed over
the boundary nodes with queue weights, external levels become entry
saturation factors, and after deactivation the fixed-time plans are walked
back in rate-limited steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import miqp
from .network import Network


@dataclass
class PiState:
    kp: np.ndarray  # (n_u, n_regions)
    ki: np.ndarray
    setpoint: np.ndarray
    n_start: np.ndarray
    n_stop: np.ndarray
    u: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    n_prev: np.ndarray | None = None
    active: bool = False
    min_regions_start: int = 2

    def __post_init__(self):
        self.kp = np.atleast_2d(np.asarray(self.kp, dtype=float))
        self.ki = np.atleast_2d(np.asarray(self.ki, dtype=float))
        for name in ("setpoint", "n_start", "n_stop", "u", "u_min", "u_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).copy())
        n_u, n_r = len(self.u), len(self.setpoint)
        if self.kp.shape != (n_u, n_r) or self.ki.shape != (n_u, n_r):
            raise ValueError(f"gain matrices must be {n_u}x{n_r}, got {self.kp.shape} and {self.ki.shape}")
        if not (len(self.u_min) == len(self.u_max) == n_u):
            raise ValueError("u bounds do not match the control layout")
        if not (len(self.n_start) == len(self.n_stop) == n_r):
            raise ValueError("thresholds do not match the number of regions")


def pi_step(state: PiState, n) -> tuple[np.ndarray, bool]:
    """One control interval: hysteresis update, then the PI law when active.

    Activation needs ``n_i >= n_start_i`` in at least ``min_regions_start``
    regions; deactivation needs ``n_i < n_stop_i`` in every region. While
    active, ``u <- u - Kp (n - n_prev) - Ki (n - setpoint)`` is clamped to the
    bounds. The law works on increments, so clamping ``u`` itself keeps any
    excess out of the state and no separate anti-windup is needed.
    """
    n = np.asarray(n, dtype=float)
    if n.shape != state.setpoint.shape:
        raise ValueError("accumulation vector does not match the regions")
    if np.any(n < 0):
        raise ValueError("negative accumulation")
    n_prev = n if state.n_prev is None else state.n_prev
    if not state.active:
        need = min(state.min_regions_start, len(n))
        if int(np.sum(n >= state.n_start)) >= need:
            state.active = True
    elif np.all(n < state.n_stop):
        state.active = False
    if state.active:
        dp = state.kp @ (n - n_prev)
        di = state.ki @ (n - state.setpoint)
        state.u = np.clip(state.u - dp - di, state.u_min, state.u_max)
    state.n_prev = n.copy()
    return state.u.copy(), state.active


def allocate_node_green(u: float, g_total: int, q_primary: float, q_secondary: float,
                        prev_primary: int, prev_secondary: int, min_green: int = 7,
                        rate_limit: int = 5) -> tuple[int, int]:
    """Primary/secondary split for one boundary node by scanning integer primaries.

    Minimises ``Qp (Gp - u)^2 + Qs (Gs - (Gt - u))^2`` with ``Gp + Gs = Gt``.
    Zero weights on both phases fall back to unit weights.
    """
    if q_primary <= 0 and q_secondary <= 0:
        q_primary = q_secondary = 1.0
    lo = max(min_green, prev_primary - rate_limit, g_total - prev_secondary - rate_limit)
    hi = min(prev_primary + rate_limit, g_total - min_green, g_total - prev_secondary + rate_limit)
    if lo > hi:
        raise miqp.InfeasibleProblem(f"no feasible primary green in [{lo}, {hi}]")
    best, best_cost = None, None
    for gp in range(lo, hi + 1):
        gs = g_total - gp
        cost = q_primary * (gp - u) ** 2 + q_secondary * (gs - (g_total - u)) ** 2
        if best_cost is None or cost < best_cost - 1e-12:
            best, best_cost = gp, cost
    return best, g_total - best


def allocate_boundary_greens(u: float, nodes, q_primary, q_secondary, previous, min_green: int = 7,
                             rate_limit: int = 5) -> dict:
    """Per-node (primary, secondary) greens for one directed boundary.

    ``previous`` maps node id to its current (primary, secondary) greens; the
    sum is the node's fixed budget. The joint problem separates per node.
    """
    out = {}
    for m in nodes:
        gp, gs = previous[m]
        out[m] = allocate_node_green(u, gp + gs, q_primary[m], q_secondary[m], gp, gs, min_green, rate_limit)
    return out


def external_gate(u: float, nominal: float, previous: float = 1.0, rate: float | None = None,
                  floor: float = 0.15) -> float:
    """Entry saturation factor for a region's external perimeter."""
    target = min(1.0, max(floor, u / nominal))
    if rate is not None:
        target = previous + float(np.clip(target - previous, -rate, rate))
    return target


def restore_ftc(plans: dict, ftc: dict, rate_limit: int = 5) -> tuple[dict, bool]:
    """Move every phase of every plan towards its fixed-time green by at most ``rate_limit``.

    Plans are (primary, secondary) pairs with a constant sum, so stepping
    the primary and giving the rest to the secondary keeps the cycle.
    """
    out = {}
    done = True
    for m, (gp, gs) in plans.items():
        fp, fs = ftc[m]
        new_p = gp + int(np.clip(fp - gp, -rate_limit, rate_limit))
        out[m] = (new_p, gp + gs - new_p)
        done &= out[m] == (fp, fs)
    return out, done


@dataclass
class PerimeterConfig:
    kp: list
    ki: list
    setpoint: list
    n_start: list | None = None
    n_stop: list | None = None
    start_factor: float = 1.0
    stop_factor: float = 0.85
    interval: float = 90.0
    min_green: int = 7
    rate_limit: int = 5
    external_nominal: float = 40.0
    external_floor: float = 0.15
    external_rate: float = 0.2
    min_regions_start: int = 2

    def thresholds(self):
        sp = np.asarray(self.setpoint, dtype=float)
        start = sp * self.start_factor if self.n_start is None else np.asarray(self.n_start, dtype=float)
        stop = sp * self.stop_factor if self.n_stop is None else np.asarray(self.n_stop, dtype=float)
        return start, stop


class PerimeterController:
    """Wires the PI regulator, boundary allocation and gating into a simulation."""

    def __init__(self, network: Network, config: PerimeterConfig):
        self.network = network
        self.config = config
        self.groups = list(network.partition.boundary_groups)
        self.layout = network.partition.control_layout

    def attach(self, sim):
        net, cfg = self.network, self.config
        start, stop = cfg.thresholds()
        n_b = len(self.groups)
        u0, lo, hi = [], [], []
        self.ftc = {}
        for g in self.groups:
            plans = {}
            for m in g.nodes:
                node = net.node_by_id[m]
                fg = node.fixed_greens
                plans[m] = (fg[g.primary[m]], fg[g.secondary[m]])
            self.ftc[(g.source, g.target)] = plans
            u0.append(np.mean([p for p, _ in plans.values()]))
            lo.append(cfg.min_green)
            hi.append(min(p + s for p, s in plans.values()) - cfg.min_green)
        n_r = net.n_regions
        u0 += [cfg.external_nominal] * n_r
        lo += [cfg.external_floor * cfg.external_nominal] * n_r
        hi += [cfg.external_nominal] * n_r
        self.pi = PiState(cfg.kp, cfg.ki, cfg.setpoint, start, stop, u0, lo, hi,
                          min_regions_start=cfg.min_regions_start)
        self.u_nominal = np.array(u0)
        self.step_interval = max(1, int(round(cfg.interval / sim.config.step)))
        self.entry = [np.array([net.link_index[l] for l in net.region_entry_links(r)], dtype=np.int64)
                      for r in net.partition.regions]
        self.sigma = np.ones(n_r)
        self.restoring = False
        self.mark_k = 0
        self.mark_region = np.zeros(n_r)
        self.mark_x = np.zeros(net.n_links)
        self.log = sim.control_log
        self._n_b = n_b

    def _node_plan(self, sim, g, m):
        greens = sim.current_greens(m)
        return greens[g.primary[m]], greens[g.secondary[m]]

    def _request(self, sim, g, m, gp, gs):
        greens = list(sim.current_greens(m))
        greens[g.primary[m]] = gp
        greens[g.secondary[m]] = gs
        sim.request_plan(m, greens)

    def before_step(self, sim, k: int):
        if k == 0 or k % self.step_interval:
            return
        net, cfg = self.network, self.config
        steps = k - self.mark_k
        n = (sim.cum_region - self.mark_region) / steps
        xbar = (sim.cum_x - self.mark_x) / steps
        self.mark_k, self.mark_region, self.mark_x = k, sim.cum_region.copy(), sim.cum_x.copy()

        was_active = self.pi.active
        if not was_active and self.pi.n_prev is not None:
            # a new activation starts from the plans currently in force
            self.pi.u[:self._n_b] = [np.mean([self._node_plan(sim, g, m)[0] for m in g.nodes]) for g in self.groups]
            self.pi.u[self._n_b:] = self.sigma * cfg.external_nominal
        u, active = pi_step(self.pi, n)
        if was_active and not active:
            self.restoring = True

        if active:
            self.restoring = False
            for b, g in enumerate(self.groups):
                prev, qp, qs = {}, {}, {}
                for m in g.nodes:
                    node = net.node_by_id[m]
                    prev[m] = self._node_plan(sim, g, m)
                    qp[m] = sum(xbar[net.link_index[z]] for z in node.phases[g.primary[m]].incoming)
                    qs[m] = sum(xbar[net.link_index[z]] for z in node.phases[g.secondary[m]].incoming)
                alloc = allocate_boundary_greens(u[b], g.nodes, qp, qs, prev, cfg.min_green, cfg.rate_limit)
                for m, (gp, gs) in alloc.items():
                    self._request(sim, g, m, gp, gs)
            for r in range(net.n_regions):
                self.sigma[r] = external_gate(u[self._n_b + r], cfg.external_nominal, self.sigma[r],
                                              cfg.external_rate, cfg.external_floor)
        elif self.restoring:
            done = True
            for g in self.groups:
                plans = {m: self._node_plan(sim, g, m) for m in g.nodes}
                new, ok = restore_ftc(plans, self.ftc[(g.source, g.target)], cfg.rate_limit)
                done &= ok
                for m, (gp, gs) in new.items():
                    if (gp, gs) != plans[m]:
                        self._request(sim, g, m, gp, gs)
            for r in range(net.n_regions):
                self.sigma[r] = external_gate(cfg.external_nominal, cfg.external_nominal, self.sigma[r],
                                              cfg.external_rate, cfg.external_floor)
            self.restoring = not (done and np.all(self.sigma == 1.0))
        for r, idx in enumerate(self.entry):
            sim.gate[idx] = self.sigma[r]
        self.log.append((k, u.tolist(), bool(active), n.tolist()))
