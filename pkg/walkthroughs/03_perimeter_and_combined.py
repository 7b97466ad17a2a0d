"""Perimeter control on its own and combined with Max-Pressure.

Drives a heavily loaded grid into gridlock under fixed-time control, then
lets a PI perimeter controller meter the region borders and the network
entries. The combined run adds Max-Pressure on every interior
intersection.

Run with ``python walkthroughs/03_perimeter_and_combined.py``.
"""
from pathlib import Path

import numpy as np

from twolayer import scenario
from twolayer.scenario import activation_spans

config_path = Path(__file__).resolve().parents[1] / "configs" / "high.json"
cfg = scenario.with_overrides(scenario.load_config(config_path), mode="pc", output=None)
net = scenario.load_network_for(cfg)
demand = scenario.load_demand_for(cfg, net)
baseline = scenario.run_baseline(cfg, net, demand)
print(f"fixed-time VHT {baseline.vht():.0f} veh.h, "
      f"{baseline.cumulative_endings[-1]:.0f} of {baseline.cumulative_generated[-1]:.0f} trips completed")

# %% perimeter control alone
pc = scenario.run_scenario(cfg, net, demand, baseline, export=False)
print("setpoints:", np.round(pc.setpoints.n_hat).astype(int))
print(f"PC:    {pc.delta_vht:+.1f}% VHT, active during {activation_spans(pc.trajectory.control_log)} (steps)")

# %% mid-activation: boundary greens and external gates, 40 s is the nominal value
log = pc.trajectory.control_log
active_rows = [row for row in log if row[2]]
k, u, active, n = active_rows[len(active_rows) // 2]
print(f"step {k}, accumulation {np.round(n).astype(int)}")
for (a, b), val in zip(net.partition.control_layout, u):
    print(f"  u[{a}->{b}] = {val:5.1f} s" if a != b else f"  u[{a} external] = {val:5.1f} s")

# %% adding Max-Pressure inside the regions
both = scenario.run_scenario(scenario.with_overrides(cfg, mode="pc+mp"), net, demand, baseline, export=False)
print(f"PC+MP: {both.delta_vht:+.1f}% VHT with {len(both.nodes)} MP nodes")

# %% Max-Pressure alone struggles once queues spill back
mp = scenario.run_scenario(scenario.with_overrides(cfg, mode="mp"), net, demand, baseline, export=False)
print(f"MP:    {mp.delta_vht:+.1f}% VHT")
