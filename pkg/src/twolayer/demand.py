"""Origin-destination demand with a time profile, plus seeded perturbation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class ODEntry:
    origin: str
    destination: str
    rate: float  # veh/h at profile level 1
    start: float = 0.0
    end: float = math.inf


@dataclass(frozen=True)
class TrapezoidProfile:
    """Linear warm-up, constant peak, linear ramp-down, then zero."""

    warmup: float = 900.0
    peak: float = 7200.0
    rampdown: float = 1800.0

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        up = np.clip(t / self.warmup, 0.0, 1.0) if self.warmup > 0 else (t >= 0).astype(float)
        t_down = self.warmup + self.peak
        if self.rampdown > 0:
            down = np.clip(1.0 - (t - t_down) / self.rampdown, 0.0, 1.0)
        else:
            down = (t < t_down).astype(float)
        return np.where(t < 0, 0.0, np.minimum(up, down))

    def mean_over(self, t0: float, t1: float, n: int = 64) -> float:
        """Average profile level on [t0, t1) by midpoint rule."""
        if t1 <= t0:
            return 0.0
        mids = t0 + (np.arange(n) + 0.5) * (t1 - t0) / n
        return float(self(mids).mean())


@dataclass(frozen=True)
class Demand:
    entries: tuple[ODEntry, ...]
    profile: TrapezoidProfile | None = field(default_factory=TrapezoidProfile)

    def level(self, t) -> np.ndarray:
        if self.profile is None:
            return np.ones_like(np.asarray(t, dtype=float))
        return self.profile(t)

    def origin_rates(self, origins: list[str], horizon_steps: int, step: float) -> np.ndarray:
        """Vehicles generated per step and origin, shape (steps, len(origins)).

        Uses the profile value at the step midpoint.
        """
        col = {o: i for i, o in enumerate(origins)}
        t_mid = (np.arange(horizon_steps) + 0.5) * step
        lev = self.level(t_mid)
        out = np.zeros((horizon_steps, len(origins)))
        for e in self.entries:
            if e.origin not in col:
                raise KeyError(f"demand origin {e.origin} is not an origin link")
            active = (t_mid >= e.start) & (t_mid < e.end)
            out[:, col[e.origin]] += np.where(active, lev, 0.0) * e.rate / 3600.0 * step
        return out

    def od_volumes(self, t0: float, t1: float) -> dict:
        """Nominal volume per (origin, destination) generated on [t0, t1)."""
        vols: dict = {}
        levels: dict = {}
        for e in self.entries:
            a, b = max(t0, e.start), min(t1, e.end)
            if b <= a:
                continue
            if (a, b) not in levels:
                levels[(a, b)] = 1.0 if self.profile is None else self.profile.mean_over(a, b)
            lev = levels[(a, b)]
            v = e.rate / 3600.0 * (b - a) * lev
            if v > 0:
                vols[(e.origin, e.destination)] = vols.get((e.origin, e.destination), 0.0) + v
        return vols

    def total_rates(self) -> dict:
        out: dict = {}
        for e in self.entries:
            out[(e.origin, e.destination)] = out.get((e.origin, e.destination), 0.0) + e.rate
        return out

    def scaled(self, factor: float) -> "Demand":
        return replace(self, entries=tuple(replace(e, rate=e.rate * factor) for e in self.entries))


def perturb_demand(demand: Demand, cv: float, seed: int | None = None) -> Demand:
    """Replace every OD rate by an independent normal draw (sd = cv * mean).

    Negative draws are redrawn, so each rate follows the normal law
    truncated at zero.
    """
    if cv < 0:
        raise ValueError("coefficient of variation must be non-negative")
    if cv == 0:
        return demand
    rng = np.random.default_rng(seed)
    entries = []
    for e in demand.entries:
        r = rng.normal(e.rate, cv * e.rate)
        while r < 0:
            r = rng.normal(e.rate, cv * e.rate)
        entries.append(replace(e, rate=float(r)))
    return replace(demand, entries=tuple(entries))
