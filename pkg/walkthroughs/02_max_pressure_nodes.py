"""Which intersections should run Max-Pressure?

Ranks the eligible intersections by how congested and unbalanced their
approaches were in the fixed-time run, picks the ranking weights by a small
grid search, then compares the top-ranked nodes with random node sets of the
same size and with Max-Pressure on every eligible node.

Run with ``python walkthroughs/02_max_pressure_nodes.py`` (a few minutes).
"""
import itertools
from pathlib import Path

import numpy as np

from twolayer import scenario
from twolayer.selection import all_node_metrics, calibrate_weights, rank_nodes

config_path = Path(__file__).resolve().parents[1] / "configs" / "medium.json"
cfg = scenario.with_overrides(scenario.load_config(config_path), output=None)
net = scenario.load_network_for(cfg)
demand = scenario.load_demand_for(cfg, net)
baseline = scenario.run_baseline(cfg, net, demand)
print(f"fixed-time VHT {baseline.vht():.0f} veh.h")


def run(**changes):
    run_cfg = scenario.with_overrides(cfg, **changes)
    return scenario.run_scenario(run_cfg, net, demand, baseline, export=False)


# %% criticality metrics over the peak window
metrics = all_node_metrics(baseline, net, net.mp_eligible_nodes())

# %% grid search for the ranking weights at a 17.5% deployment (27 runs)
rate = 0.175
grid = itertools.product((-1.0, 0.0, 1.0), repeat=3)
weights = calibrate_weights(grid, rate, metrics, lambda nodes: run(**{"mp.nodes": nodes}).vht).best
print(f"best weights {weights}")
print("node     mean occ  spread  congested cycles")
for m in rank_nodes(metrics, weights)[:8]:
    print(f"{m.node:8s} {m.m1:8.2f} {m.m2:7.3f} {m.n_c:8.2f}")

# %% targeted, random and full deployments
targeted = run(**{"mp.selection": "targeted", "mp.rate": rate, "mp.weights": weights}).delta_vht
randoms = [run(**{"mp.selection": "random", "mp.rate": rate, "mp.random_index": i}).delta_vht for i in range(10)]
full = run().delta_vht
print(f"targeted {rate:.1%}: {targeted:+.1f}% VHT")
print(f"random {rate:.1%}:   median {np.median(randoms):+.1f}% over {len(randoms)} sets {np.round(randoms, 1)}")
print(f"all nodes:       {full:+.1f}% VHT")
