"""Exact solver for small separable convex integer allocation problems.

Problems have the form::

    minimize    sum_j w_j * (G_j - t_j)**2
    subject to  sum_j G_j = B
                l_j <= G_j <= u_j,  G_j integer

which covers both the max-pressure green projection and the per-node
boundary green allocation of perimeter control.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class InfeasibleProblem(ValueError):
    pass


@dataclass(frozen=True)
class AllocationProblem:
    weights: tuple[float, ...]
    targets: tuple[float, ...]
    lower: tuple[int, ...]
    upper: tuple[int, ...]
    budget: int

    def __post_init__(self):
        n = len(self.weights)
        if not (len(self.targets) == len(self.lower) == len(self.upper) == n):
            raise ValueError("weights, targets and bounds must have equal length")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise InfeasibleProblem("lower bound exceeds upper bound")
        if sum(self.lower) > self.budget or sum(self.upper) < self.budget:
            raise InfeasibleProblem(
                f"budget {self.budget} outside [{sum(self.lower)}, {sum(self.upper)}]"
            )

    @classmethod
    def build(cls, weights, targets, lower, upper, budget) -> "AllocationProblem":
        return cls(
            tuple(float(w) for w in weights),
            tuple(float(t) for t in targets),
            tuple(int(v) for v in lower),
            tuple(int(v) for v in upper),
            int(budget),
        )

    def objective(self, g: Sequence[int]) -> float:
        return float(sum(w * (x - t) ** 2 for w, x, t in zip(self.weights, g, self.targets)))


def solve(problem: AllocationProblem) -> list[int]:
    """Greedy marginal allocation starting from the lower bounds.

    Each remaining unit of budget goes to the variable with the smallest
    marginal cost ``w * (2 * (G - t) + 1)``. Because every term is convex
    in G this greedy is globally optimal. Ties go to weighted variables
    before zero-weight ones, then to the lowest index.
    """
    g = list(problem.lower)
    remaining = problem.budget - sum(g)
    heap = []
    for j, (w, t) in enumerate(zip(problem.weights, problem.targets)):
        if g[j] < problem.upper[j]:
            heap.append((w * (2.0 * (g[j] - t) + 1.0), w == 0.0, j))
    heapq.heapify(heap)
    while remaining > 0:
        _, _, j = heapq.heappop(heap)
        g[j] += 1
        remaining -= 1
        if g[j] < problem.upper[j]:
            w, t = problem.weights[j], problem.targets[j]
            heapq.heappush(heap, (w * (2.0 * (g[j] - t) + 1.0), w == 0.0, j))
    return g


def brute_force_oracle(problem: AllocationProblem, max_points: int = 10**6) -> list[int]:
    """Exhaustive enumeration; test use only.

    Among optimal points (objective equal to 1e-9), prefers the largest total
    allocation to weighted variables and then the lexicographically largest
    vector, which is the tie-break :func:`solve` realises.
    """
    ranges = [range(lo, hi + 1) for lo, hi in zip(problem.lower, problem.upper)]
    size = int(np.prod([len(r) for r in ranges], dtype=float))
    if size > max_points:
        raise ValueError(f"search space of {size} points exceeds {max_points}")
    best_key, best = None, None
    for cand in itertools.product(*ranges):
        if sum(cand) != problem.budget:
            continue
        obj = problem.objective(cand)
        weighted = sum(c for c, w in zip(cand, problem.weights) if w > 0)
        if best_key is None or obj < best_key[0] - 1e-9:
            best_key, best = (obj, weighted, cand), cand
        elif abs(obj - best_key[0]) <= 1e-9 and (weighted, cand) > best_key[1:]:
            best_key, best = (min(obj, best_key[0]), weighted, cand), cand
    if best is None:
        raise InfeasibleProblem("no feasible point")
    return list(best)
