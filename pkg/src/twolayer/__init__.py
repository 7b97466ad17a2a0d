"""Mesoscopic store-and-forward traffic simulation with two control layers.

Max-Pressure runs at individual intersections; a multivariable PI
regulator gates flows between regions of a partitioned network.
"""
from .demand import Demand, ODEntry, TrapezoidProfile, perturb_demand
from .grid import gen_grid_network
from .miqp import AllocationProblem, InfeasibleProblem, brute_force_oracle, solve
from .network import (BoundaryGroup, Link, Network, NetworkError, Phase, RegionPartition, SignalizedNode,
                      TurnRatioTable, build_network, validate_signal_plan)
from .scenario import ScenarioConfig, estimate_setpoints, run_scenario
from .sim import LinkState, SimConfig, SimTrajectory, Simulator, compute_vht, production, regional_accumulation, run

__all__ = [
    "AllocationProblem", "BoundaryGroup", "Demand", "InfeasibleProblem", "Link", "LinkState", "Network",
    "NetworkError", "ODEntry", "Phase", "RegionPartition", "ScenarioConfig", "SignalizedNode", "SimConfig",
    "SimTrajectory", "Simulator", "TrapezoidProfile", "TurnRatioTable", "brute_force_oracle", "build_network",
    "compute_vht", "estimate_setpoints", "gen_grid_network", "perturb_demand", "production",
    "regional_accumulation", "run", "run_scenario", "solve", "validate_signal_plan",
]
