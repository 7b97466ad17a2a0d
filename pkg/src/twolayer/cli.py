"""Command-line entry point: ``twolayer <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import io, scenario, selection
from .demand import perturb_demand
from .grid import gen_grid_network
from .synthetic import make_demand


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if "-" in part.strip()[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part.strip():
            out.append(int(part))
    return out


def cmd_gen_grid(args) -> int:
    net = gen_grid_network(args.rows, args.cols, n_regions=args.regions, length=args.length, lanes=args.lanes,
                           lane_saturation=args.lane_saturation, free_flow_speed=args.speed,
                           cycle=args.cycle, lost_time=args.lost_time, phases=args.phases,
                           internal_od_every=args.internal_od_every)
    io.save_network(net, args.out)
    print(f"wrote {args.out}: {net.n_links} links, {len(net.nodes)} nodes, {net.n_regions} regions")
    if args.demand_out:
        dem = make_demand(net, args.pattern, args.origin_rate, args.seed)
        io.save_demand(dem, args.demand_out)
        print(f"wrote {args.demand_out}: {len(dem.entries)} OD pairs")
    return 0


def cmd_simulate(args) -> int:
    cfg = scenario.load_config(args.config)
    changes = {"output": args.out}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.mode is not None:
        changes["mode"] = args.mode
    cfg = scenario.with_overrides(cfg, **changes)
    res = scenario.run_scenario(cfg)
    summary = scenario.summarize(res)
    print(json.dumps({k: summary[k] for k in ("mode", "vht", "baseline_vht", "delta_vht_pct")}))
    return 0


def cmd_select_nodes(args) -> int:
    cfg = scenario.load_config(args.config)
    net = scenario.load_network_for(cfg)
    dem = scenario.load_demand_for(cfg, net)
    base = scenario.run_baseline(cfg, net, dem)
    weights = tuple(args.weights) if args.weights else tuple(cfg.mp.weights)
    eligible = net.mp_eligible_nodes(cfg.mp.threshold)
    window = tuple(cfg.mp.peak_window) if cfg.mp.peak_window is not None else None
    metrics = selection.all_node_metrics(base, net, eligible, window, cfg.mp.occupancy_threshold)
    ranked = selection.rank_nodes(metrics, weights)
    selection.write_ranking_csv(args.out, ranked)
    rate = args.rate if args.rate is not None else cfg.mp.rate
    chosen = selection.rank_and_select(metrics, weights, rate)
    print(json.dumps({"rate": rate, "weights": list(weights), "nodes": chosen}))
    return 0


def cmd_calibrate(args) -> int:
    cfg = scenario.load_config(args.config)
    cfg = scenario.with_overrides(cfg, mode="mp", output=None, **{"mp.selection": "targeted"})
    net = scenario.load_network_for(cfg)
    dem = scenario.load_demand_for(cfg, net)
    base = scenario.run_baseline(cfg, net, dem)
    eligible = net.mp_eligible_nodes(cfg.mp.threshold)
    window = tuple(cfg.mp.peak_window) if cfg.mp.peak_window is not None else None
    metrics = selection.all_node_metrics(base, net, eligible, window, cfg.mp.occupancy_threshold)
    grid = list(itertools.product(_floats(args.alpha), _floats(args.beta), _floats(args.gamma)))
    rate = args.rate if args.rate is not None else cfg.mp.rate

    def simulate(nodes):
        run_cfg = scenario.with_overrides(cfg, **{"mp.nodes": list(nodes)})
        return scenario.run_scenario(run_cfg, net, dem, base, export=False).vht

    res = selection.calibrate_weights(grid, rate, metrics, simulate, out_path=args.out)
    print(json.dumps({"best": res.best, "points": len(grid)}))
    return 0


def cmd_perturb_demand(args) -> int:
    dem = io.load_demand(args.demand)
    io.save_demand(perturb_demand(dem, args.cv, args.seed), args.out)
    print(f"wrote {args.out}")
    return 0


def _sweep_job(job):
    cfg, label = job
    res = scenario.run_scenario(cfg, export=False)
    return label + (res.vht, res.baseline_vht, res.delta_vht)


def cmd_sweep(args) -> int:
    base_cfg = scenario.with_overrides(scenario.load_config(args.config), output=None)
    modes = args.modes.split(",") if args.modes else [base_cfg.mode]
    rates = _floats(args.rates) if args.rates else [base_cfg.mp.rate]
    selections = args.selections.split(",") if args.selections else [base_cfg.mp.selection]
    seeds = _ints(args.seeds) if args.seeds else [base_cfg.seed]
    cvs = _floats(args.cv) if args.cv else [base_cfg.demand_cv]
    reps = args.replications
    jobs = []
    for mode, seed, cv, rep in itertools.product(modes, seeds, cvs, range(reps)):
        mp_grid = [(None, None, 0)]
        if mode in ("mp", "pc+mp"):
            mp_grid = []
            for rate, sel in itertools.product(rates, selections):
                count = base_cfg.mp.random_count if sel == "random" else 1
                mp_grid += [(rate, sel, i) for i in range(count)]
        for rate, sel, idx in mp_grid:
            changes = {"mode": mode, "seed": seed, "demand_cv": cv,
                       "perturb_seed": seed * 1000 + rep if cv > 0 else None}
            if rate is not None:
                changes.update({"mp.rate": rate, "mp.selection": sel, "mp.random_index": idx})
            jobs.append((scenario.with_overrides(base_cfg, **changes),
                         (mode, seed, cv, rep, rate if rate is not None else "", sel or "", idx)))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            rows = list(ex.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["mode", "seed", "cv", "replication", "rate", "selection", "set_index", "vht", "baseline_vht",
                     "delta_vht_pct"])
        for r in rows:
            wr.writerow(list(r[:7]) + [repr(r[7]), "" if r[8] is None else repr(r[8]),
                                       "" if r[9] is None else f"{r[9]:.1f}"])
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} runs)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twolayer", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-grid", help="write a synthetic grid network (and optionally a demand)")
    g.add_argument("--rows", type=int, default=10)
    g.add_argument("--cols", type=int, default=10)
    g.add_argument("--regions", type=int, default=3)
    g.add_argument("--length", type=float, default=200.0)
    g.add_argument("--lanes", type=int, default=2)
    g.add_argument("--lane-saturation", type=float, default=0.5, help="veh/s per lane")
    g.add_argument("--speed", type=float, default=25 / 3.6, help="free-flow speed, m/s")
    g.add_argument("--cycle", type=int, default=90)
    g.add_argument("--lost-time", type=int, default=10)
    g.add_argument("--phases", type=int, choices=(2, 4), default=2)
    g.add_argument("--internal-od-every", type=int, default=4)
    g.add_argument("--out", required=True)
    g.add_argument("--demand-out")
    g.add_argument("--pattern", choices=("mixed", "directional"), default="mixed")
    g.add_argument("--origin-rate", type=float, default=800.0, help="veh/h per entry origin")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_grid)

    s = sub.add_parser("simulate", help="run one scenario and export its results")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--mode", choices=scenario.MODES)
    s.set_defaults(func=cmd_simulate)

    n = sub.add_parser("select-nodes", help="rank nodes from a fixed-time run")
    n.add_argument("--config", required=True)
    n.add_argument("--out", required=True, help="ranking CSV")
    n.add_argument("--rate", type=float)
    n.add_argument("--weights", type=float, nargs=3, metavar=("ALPHA", "BETA", "GAMMA"))
    n.set_defaults(func=cmd_select_nodes)

    c = sub.add_parser("calibrate", help="grid search over ranking weights")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True, help="calibration CSV")
    c.add_argument("--rate", type=float)
    c.add_argument("--alpha", default="-1,0,1")
    c.add_argument("--beta", default="-1,0,1")
    c.add_argument("--gamma", default="-1,0,1")
    c.set_defaults(func=cmd_calibrate)

    d = sub.add_parser("perturb-demand", help="draw a perturbed OD matrix")
    d.add_argument("--demand", required=True)
    d.add_argument("--cv", type=float, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_perturb_demand)

    w = sub.add_parser("sweep", help="penetration-rate, seed and perturbation sweeps")
    w.add_argument("--config", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--modes", help="comma list, e.g. ftc,mp,pc,pc+mp")
    w.add_argument("--rates", help="comma list of penetration rates")
    w.add_argument("--selections", help="comma list of all,targeted,random")
    w.add_argument("--seeds", help="e.g. 0-4 or 0,3,7")
    w.add_argument("--cv", help="comma list of demand coefficients of variation")
    w.add_argument("--replications", type=int, default=1)
    w.add_argument("--jobs", type=int, default=1)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (scenario.ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
