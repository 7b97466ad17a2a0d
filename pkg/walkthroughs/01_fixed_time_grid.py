"""Fixed-time baseline on a 10x10 grid.

Builds the three-region grid, loads it with a peak-hour demand, runs the
store-and-forward simulator under fixed-time signals and looks at what the
regional fundamental diagrams say about the peak.

Run with ``python walkthroughs/01_fixed_time_grid.py``.
"""
import numpy as np

from twolayer.grid import gen_grid_network
from twolayer.scenario import estimate_setpoints
from twolayer.sim import SimConfig, run
from twolayer.synthetic import make_demand

net = gen_grid_network(10, 10)
print(f"{net.n_links} links, {len(net.nodes)} signalized nodes, regions {net.partition.regions}")
print(f"{len(net.partition.boundary_nodes)} boundary nodes, {len(net.mp_eligible_nodes())} MP-eligible nodes")

demand = make_demand(net, "directional", 600.0, seed=0)  # the configs/medium.json demand
print(f"{len(demand.entries)} OD pairs, {sum(e.rate for e in demand.entries):.0f} veh/h at peak")

# %% six hours at one-second steps
traj = run(net, [], demand, 21600, seed=0, config=SimConfig(record_links=False))
print(f"VHT = {traj.vht():.0f} veh.h")
print(f"trips completed: {traj.cumulative_endings[-1]:.0f} of {traj.cumulative_generated[-1]:.0f}")

# %% mean accumulation and production over each half hour
half = 1800
for k in range(0, traj.n_steps, half):
    n = np.round(traj.accumulation[k:k + half].mean(axis=0)).astype(int)
    p = np.round(traj.production[k:k + half].mean(axis=0) * 3.6).astype(int)  # veh.m/s -> veh.km/h
    print(f"{k / 3600:3.1f}-{(k + half) / 3600:3.1f} h  n={n}  production (veh.km/h)={p}")

# %% where production peaks: these become the perimeter-control setpoints
sp = estimate_setpoints(traj)
for r, region in enumerate(traj.regions):
    print(f"{region}: peak accumulation {traj.accumulation[:, r].max():.0f}, best accumulation {sp.n_hat[r]:.0f}")
