"""Scenario configuration, orchestration and result export.

A scenario wires together a network, a demand, and a control mode:

``ftc``    fixed-time plans only
``mp``     Max-Pressure at a selected set of nodes
``pc``     perimeter control at the boundary nodes and region entries
``pc+mp``  both layers, run independently of each other

A fixed-time baseline run supplies ΔVHT, the node-criticality metrics for
targeted selection, and the MFD set-points when they are not given.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io, selection
from .demand import Demand, perturb_demand
from .grid import gen_grid_network
from .maxpressure import MaxPressureController
from .network import MP_ELIGIBILITY_THRESHOLD, Network
from .perimeter import PerimeterConfig, PerimeterController
from .sim import SimConfig, SimTrajectory, Simulator
from .synthetic import make_demand

MODES = ("ftc", "mp", "pc", "pc+mp")
SELECTIONS = ("all", "targeted", "random")


class ConfigError(ValueError):
    pass


@dataclass
class MpSettings:
    rate: float = 1.0
    selection: str = "all"
    weights: tuple = (0.6, -1.8, -1.0)
    random_count: int = 10
    random_index: int = 0
    seed: int = 0
    rate_limit: int = 5
    threshold: float = MP_ELIGIBILITY_THRESHOLD
    occupancy_threshold: float = 0.8
    peak_window: tuple | None = None  # steps, half-open
    nodes: list | None = None  # explicit node set, overrides selection


@dataclass
class PcSettings:
    kp: list | None = None  # full matrices (u components x regions), row-major
    ki: list | None = None
    # structured gains used when matrices are absent:
    # (own region, target region, external) coefficients
    kp_coeffs: tuple = (0.01, 0.02, 0.01)
    ki_coeffs: tuple = (0.001, 0.004, 0.002)
    setpoints: list | None = None
    setpoint_scale: float = 1.0
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
    bins: int = 25


@dataclass
class ScenarioConfig:
    mode: str = "ftc"
    network: str | None = None
    grid: dict | None = None
    demand: str | None = None
    demand_model: dict | None = None
    demand_cv: float = 0.0
    demand_seed: int | None = None
    perturb_seed: int | None = None
    mp: MpSettings = field(default_factory=MpSettings)
    pc: PcSettings = field(default_factory=PcSettings)
    horizon: float = 21600.0
    step: float = 1.0
    turn_ratio_window: float = 900.0
    jam_threshold: float = 0.95
    min_speed: float = 0.5
    seed: int = 0
    output: str | None = None
    record_turn_ratios: bool = False

    def __post_init__(self):
        if isinstance(self.mp, dict):
            self.mp = _from_dict(MpSettings, self.mp)
        if isinstance(self.pc, dict):
            self.pc = _from_dict(PcSettings, self.pc)
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.network is None and self.grid is None:
            raise ConfigError("either a network file or grid parameters are required")
        if self.demand is None and self.demand_model is None:
            raise ConfigError("either a demand file or a demand model is required")
        if self.mode in ("mp", "pc+mp"):
            if self.mp.selection not in SELECTIONS:
                raise ConfigError(f"selection must be one of {SELECTIONS}")
            if not 0 <= self.mp.rate <= 1:
                raise ConfigError("penetration rate must be in [0, 1]")
        if self.horizon <= 0 or self.step <= 0:
            raise ConfigError("horizon and step must be positive")
        if self.demand_cv < 0:
            raise ConfigError("demand_cv must be non-negative")

    @property
    def horizon_steps(self) -> int:
        return int(round(self.horizon / self.step))

    def sim_config(self, record_links: bool = True) -> SimConfig:
        return SimConfig(step=self.step, jam_threshold=self.jam_threshold, turn_ratio_window=self.turn_ratio_window,
                         min_speed=self.min_speed, record_links=record_links,
                         record_turn_ratios=self.record_turn_ratios)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ScenarioConfig":
        cfg = _from_dict(cls, data)
        if base_dir is not None:
            for name in ("network", "demand", "output"):
                val = getattr(cfg, name)
                if val is not None and not Path(val).is_absolute():
                    setattr(cfg, name, str(Path(base_dir) / val))
        return cfg


def _from_dict(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        data = json.load(fh)
    return ScenarioConfig.from_dict(data, base_dir=Path(path).parent)


# inputs -------------------------------------------------------------------
def load_network_for(config: ScenarioConfig) -> Network:
    if config.network is not None:
        return io.load_network(config.network)
    return gen_grid_network(**config.grid)


def load_demand_for(config: ScenarioConfig, network: Network) -> Demand:
    if config.demand is not None:
        demand = io.load_demand(config.demand)
    else:
        model = dict(config.demand_model)
        pattern = model.pop("pattern", "mixed")
        rate = model.pop("origin_rate")
        seed = config.demand_seed if config.demand_seed is not None else config.seed
        demand = make_demand(network, pattern, rate, seed, **model)
    if config.demand_cv > 0:
        seed = config.perturb_seed if config.perturb_seed is not None else config.seed
        demand = perturb_demand(demand, config.demand_cv, seed)
    return demand


# set-points and gains -----------------------------------------------------
@dataclass
class Setpoints:
    n_hat: np.ndarray
    n_start: np.ndarray
    n_stop: np.ndarray
    bin_centers: np.ndarray | None = None
    binned_production: np.ndarray | None = None  # (bins, regions), nan where empty


def estimate_setpoints(trajectory: SimTrajectory, bins: int = 25, start_factor: float = 1.0,
                       stop_factor: float = 0.85) -> Setpoints:
    """Critical accumulation per region from the binned production MFD.

    Accumulations are split into ``bins`` equal-width bins between their
    minimum and maximum; the centre of the bin with the highest mean
    production is the set-point.
    """
    acc, prod = trajectory.accumulation, trajectory.production
    R = acc.shape[1]
    n_hat = np.zeros(R)
    centers = np.zeros((bins, R))
    binned = np.full((bins, R), np.nan)
    for r in range(R):
        a, p = acc[:, r], prod[:, r]
        if a.size == 0 or not np.any(p > 0) or a.max() <= a.min():
            raise ValueError(f"degenerate MFD for region {trajectory.regions[r]}")
        edges = np.linspace(a.min(), a.max(), bins + 1)
        idx = np.clip(np.searchsorted(edges, a, side="right") - 1, 0, bins - 1)
        counts = np.bincount(idx, minlength=bins)
        sums = np.bincount(idx, weights=p, minlength=bins)
        occupied = counts > 0
        binned[occupied, r] = sums[occupied] / counts[occupied]
        centers[:, r] = 0.5 * (edges[:-1] + edges[1:])
        best = int(np.nanargmax(binned[:, r]))
        n_hat[r] = centers[best, r]
    return Setpoints(n_hat, start_factor * n_hat, stop_factor * n_hat, centers, binned)


def production_drop(trajectory: SimTrajectory, bins: int = 25, interval_steps: int = 90) -> np.ndarray:
    """Relative loss of production past the peak, per region.

    Interval means of accumulation and production are binned on ``[0, max]``;
    the result is ``1 - P(last occupied bin) / max binned P``. Zero means the
    region never left the rising branch of its MFD.
    """
    K = trajectory.n_steps // interval_steps * interval_steps
    R = trajectory.accumulation.shape[1]
    if K == 0:
        return np.zeros(R)
    acc = trajectory.accumulation[:K].reshape(-1, interval_steps, R).mean(axis=1)
    prod = trajectory.production[:K].reshape(-1, interval_steps, R).mean(axis=1)
    out = np.zeros(R)
    for r in range(R):
        top = acc[:, r].max()
        if top <= 0:
            continue
        idx = np.minimum((acc[:, r] / top * bins).astype(int), bins - 1)
        counts = np.bincount(idx, minlength=bins)
        means = np.bincount(idx, weights=prod[:, r], minlength=bins)[counts > 0] / counts[counts > 0]
        if means.max() > 0:
            out[r] = 1.0 - means[-1] / means.max()
    return out


def structured_gains(network: Network, own: float, target: float, external: float) -> np.ndarray:
    """Gain matrix with a fixed sign pattern over the control layout.

    A boundary component ``i -> j`` grows with the accumulation of ``i`` and
    shrinks with that of ``j``; an external component ``i`` shrinks with the
    accumulation of ``i``. Under ``u <- u - K (...)`` that means negative
    entries for the source and positive ones for the target.
    """
    layout = network.partition.control_layout
    K = np.zeros((len(layout), network.n_regions))
    for row, (a, b) in enumerate(layout):
        ia, ib = network.region_index[a], network.region_index[b]
        if a == b:
            K[row, ia] = external
        else:
            K[row, ia] = -own
            K[row, ib] = target
    return K


def perimeter_config(settings: PcSettings, network: Network, setpoints: Setpoints | None) -> PerimeterConfig:
    kp = np.asarray(settings.kp, dtype=float) if settings.kp is not None else structured_gains(network, *settings.kp_coeffs)
    ki = np.asarray(settings.ki, dtype=float) if settings.ki is not None else structured_gains(network, *settings.ki_coeffs)
    shape = (len(network.partition.control_layout), network.n_regions)
    if kp.shape != shape or ki.shape != shape:
        raise ConfigError(f"gain matrices must be {shape[0]}x{shape[1]}")
    if settings.setpoints is not None:
        sp = np.asarray(settings.setpoints, dtype=float) * settings.setpoint_scale
    elif setpoints is not None:
        sp = setpoints.n_hat * settings.setpoint_scale
    else:
        raise ConfigError("perimeter control needs set-points or a baseline run")
    return PerimeterConfig(
        kp.tolist(), ki.tolist(), sp.tolist(), settings.n_start, settings.n_stop, settings.start_factor,
        settings.stop_factor, settings.interval, settings.min_green, settings.rate_limit,
        settings.external_nominal, settings.external_floor, settings.external_rate, settings.min_regions_start,
    )


# orchestration ------------------------------------------------------------
@dataclass
class ScenarioResult:
    config: ScenarioConfig
    trajectory: SimTrajectory
    baseline: SimTrajectory | None
    nodes: list
    ranking: list | None
    setpoints: Setpoints | None
    perimeter: PerimeterConfig | None
    network: Network

    @property
    def vht(self) -> float:
        return self.trajectory.vht()

    @property
    def baseline_vht(self) -> float | None:
        return None if self.baseline is None else self.baseline.vht()

    @property
    def delta_vht(self) -> float | None:
        b = self.baseline_vht
        return None if b is None else delta_vht_percent(self.vht, b)


def delta_vht_percent(vht: float, baseline: float) -> float:
    if baseline <= 0:
        return math.nan
    return 100.0 * (vht - baseline) / baseline


def run_baseline(config: ScenarioConfig, network: Network, demand: Demand) -> SimTrajectory:
    sim = Simulator(network, demand, [], config.sim_config(record_links=True))
    return sim.run(config.horizon_steps, config.seed)


def select_mp_nodes(config: ScenarioConfig, network: Network, baseline: SimTrajectory | None):
    """MP node set for the configured selection mode, plus the ranking if computed."""
    mp = config.mp
    if mp.nodes is not None:
        return list(mp.nodes), None
    eligible = network.mp_eligible_nodes(mp.threshold)
    if mp.rate == 0:
        return [], None
    if mp.selection == "all":
        return eligible, None
    if mp.selection == "random":
        sets = selection.random_sets(eligible, mp.rate, max(mp.random_count, mp.random_index + 1), mp.seed)
        return sets[mp.random_index], None
    if baseline is None:
        raise ConfigError("targeted selection needs a fixed-time baseline run")
    window = tuple(mp.peak_window) if mp.peak_window is not None else None
    metrics = selection.all_node_metrics(baseline, network, eligible, window, mp.occupancy_threshold)
    ranked = selection.rank_nodes(metrics, mp.weights)
    return selection.rank_and_select(metrics, mp.weights, mp.rate), ranked


def run_scenario(config: ScenarioConfig, network: Network | None = None, demand: Demand | None = None,
                 baseline: SimTrajectory | None = None, export: bool = True) -> ScenarioResult:
    """Baseline (when needed), node selection, controller wiring, simulation and export."""
    net = network if network is not None else load_network_for(config)
    dem = demand if demand is not None else load_demand_for(config, net)
    mode = config.mode
    if baseline is None and mode != "ftc":
        baseline = run_baseline(config, net, dem)

    nodes, ranking = [], None
    if mode in ("mp", "pc+mp"):
        nodes, ranking = select_mp_nodes(config, net, baseline)

    setpoints, pcfg = None, None
    controllers = []
    if mode in ("pc", "pc+mp"):
        if config.pc.setpoints is None:
            setpoints = estimate_setpoints(baseline, config.pc.bins, config.pc.start_factor, config.pc.stop_factor)
        pcfg = perimeter_config(config.pc, net, setpoints)
        controllers.append(PerimeterController(net, pcfg))
    if nodes:
        controllers.append(MaxPressureController(net, nodes, config.mp.rate_limit, config.mp.threshold))

    if mode == "ftc":
        traj = run_baseline(config, net, dem)
        baseline = traj
    else:
        traj = Simulator(net, dem, controllers, config.sim_config(record_links=False)).run(
            config.horizon_steps, config.seed)
    result = ScenarioResult(config, traj, baseline, nodes, ranking, setpoints, pcfg, net)
    if export and config.output is not None:
        export_outputs(result, config.output)
    return result


def activation_spans(control_log: list) -> list[tuple[int, int]]:
    """(first step, last step) of each run of active control intervals."""
    spans, start, last = [], None, None
    for k, _u, active, _n in control_log:
        if active and start is None:
            start = k
        if not active and start is not None:
            spans.append((start, last))
            start = None
        if active:
            last = k
    if start is not None:
        spans.append((start, last))
    return spans


def summarize(result: ScenarioResult) -> dict:
    traj = result.trajectory
    cfg = result.config
    out = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "steps": traj.n_steps,
        "step": traj.step,
        "vht": traj.vht(),
        "baseline": "ftc",
        "baseline_vht": result.baseline_vht,
        "delta_vht_pct": None if result.delta_vht is None else round(result.delta_vht, 1),
        "peak_accumulation": traj.peak_accumulation(),
        "peak_regional_accumulation": dict(zip(traj.regions, traj.accumulation.max(axis=0).tolist()))
        if traj.n_steps else {r: 0.0 for r in traj.regions},
        "trips_generated": float(traj.cumulative_generated[-1]) if traj.n_steps else 0.0,
        "trips_completed": float(traj.cumulative_endings[-1]) if traj.n_steps else 0.0,
        "mp_nodes": len(result.nodes),
        "pc_activation_spans": [list(s) for s in activation_spans(traj.control_log)],
    }
    if result.perimeter is not None:
        out["pc_setpoints"] = dict(zip(traj.regions, result.perimeter.setpoint))
    return io.to_jsonable(out)


def export_outputs(result: ScenarioResult, out_dir) -> dict:
    """Write time series, MFD, summary, node-set manifest and logs to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj = result.trajectory
    io.write_timeseries_csv(out / "timeseries.csv", traj)
    io.write_mfd_csv(out / "mfd.csv", traj, max(1, int(round(90 / traj.step))))
    summary = summarize(result)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    mp = result.config.mp
    manifest = {
        "mode": result.config.mode,
        "selection": None if result.config.mode in ("ftc", "pc") else (
            "explicit" if mp.nodes is not None else mp.selection),
        "rate": None if result.config.mode in ("ftc", "pc") else mp.rate,
        "weights": list(mp.weights) if mp.selection == "targeted" else None,
        "nodes": list(result.nodes),
        "pc_boundary_nodes": sorted(result.network.partition.boundary_nodes)
        if result.config.mode in ("pc", "pc+mp") else [],
    }
    (out / "nodes.json").write_text(json.dumps(io.to_jsonable(manifest), indent=1, sort_keys=True) + "\n")
    if result.ranking is not None:
        selection.write_ranking_csv(out / "ranking.csv", result.ranking)
    if result.perimeter is not None:
        io.write_control_log_csv(out / "pc_log.csv", traj.control_log, result.network.partition.control_layout)
    for k, ratios in traj.turn_ratio_log:
        io.write_turn_ratios_csv(out / f"turn_ratios_{k:06d}.csv", ratios, result.network)
    return summary


def with_overrides(config: ScenarioConfig, **changes) -> ScenarioConfig:
    """Copy of ``config`` with top-level and ``mp.``/``pc.`` prefixed overrides."""
    mp = {k[3:]: v for k, v in changes.items() if k.startswith("mp.")}
    pc = {k[3:]: v for k, v in changes.items() if k.startswith("pc.")}
    top = {k: v for k, v in changes.items() if "." not in k}
    new = replace(config, mp=replace(config.mp, **mp), pc=replace(config.pc, **pc), **top)
    return new
