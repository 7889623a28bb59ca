"""Piecewise-constant policy interventions and greedy schedule search."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .models import (
    DiseaseParams,
    InvalidParameterError,
    ModelSpec,
    Trajectory,
    init_state,
    integrate_daily,
    peak_infected_many,
    simulate,
    total_infected,
)

REMAINING_HORIZON = "remaining-horizon"


def default_grid() -> tuple[float, ...]:
    return tuple(round(0.05 * i, 10) for i in range(21))


@dataclass(frozen=True)
class InterventionSchedule:
    """Level ``levels[k]`` holds on days ``[breakpoints[k], breakpoints[k+1])``."""

    breakpoints: tuple[int, ...]
    levels: tuple[float, ...]
    horizon: int

    def __post_init__(self):
        bps = tuple(int(b) for b in self.breakpoints)
        lvls = tuple(float(v) for v in self.levels)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "levels", lvls)
        if len(bps) != len(lvls):
            raise InvalidParameterError("breakpoints and levels must have equal length")
        if not bps or bps[0] != 0:
            raise InvalidParameterError("breakpoints must start at day 0")
        if any(nxt <= cur for cur, nxt in zip(bps, bps[1:])):
            raise InvalidParameterError("breakpoints must be strictly increasing")
        if any(not 0.0 <= v <= 1.0 for v in lvls):
            raise InvalidParameterError("levels must lie in [0, 1]")
        if self.horizon < bps[-1]:
            raise InvalidParameterError("horizon precedes the last breakpoint")

    @classmethod
    def constant(cls, u: float, horizon: int) -> "InterventionSchedule":
        return cls((0,), (u,), horizon)

    def at(self, t: float) -> float:
        if not 0 <= t <= self.horizon:
            raise InvalidParameterError(f"t={t} outside [0, {self.horizon}]")
        k = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return self.levels[k]

    def daily_levels(self, days: Optional[int] = None) -> np.ndarray:
        days = self.horizon if days is None else days
        out = np.empty(days)
        bounds = list(self.breakpoints[1:]) + [max(days, self.horizon)]
        for start, stop, level in zip(self.breakpoints, bounds, self.levels):
            out[start:stop] = level
        return out

    def compact(self) -> "InterventionSchedule":
        """Merge adjacent segments that share a level."""
        bps, lvls = [self.breakpoints[0]], [self.levels[0]]
        for b, v in zip(self.breakpoints[1:], self.levels[1:]):
            if v != lvls[-1]:
                bps.append(b)
                lvls.append(v)
        return InterventionSchedule(tuple(bps), tuple(lvls), self.horizon)


@dataclass(frozen=True)
class PolicySearchConfig:
    threshold: float = 0.10
    u_grid: tuple[float, ...] = field(default_factory=default_grid)
    decision_interval: int = 7
    lookahead: Union[int, str] = REMAINING_HORIZON
    horizon: int = 365

    def __post_init__(self):
        object.__setattr__(self, "u_grid", tuple(float(u) for u in self.u_grid))
        problems = []
        if not 0 < self.threshold <= 1:
            problems.append(f"threshold must lie in (0, 1], got {self.threshold}")
        g = self.u_grid
        if list(g) != sorted(g) or len(set(g)) != len(g):
            problems.append("u_grid must be strictly ascending")
        if 0.0 not in g or 1.0 not in g:
            problems.append("u_grid must contain 0 and 1")
        if any(not 0 <= u <= 1 for u in g):
            problems.append("u_grid levels must lie in [0, 1]")
        if int(self.decision_interval) < 1:
            problems.append("decision_interval must be a positive integer")
        if self.lookahead != REMAINING_HORIZON and (
            isinstance(self.lookahead, str) or int(self.lookahead) < 1
        ):
            problems.append(f"lookahead must be a positive integer or {REMAINING_HORIZON!r}")
        if int(self.horizon) < 1:
            problems.append("horizon must be a positive integer")
        if problems:
            raise InvalidParameterError("; ".join(problems))


@dataclass(frozen=True)
class Decision:
    day: int
    u: float
    satisfied: bool
    lookahead_days: int


@dataclass(frozen=True)
class PolicyResult:
    schedule: InterventionSchedule
    feasible: bool
    decisions: tuple[Decision, ...]

    def __iter__(self):
        # allows ``schedule, feasible = greedy_search(...)``
        return iter((self.schedule, self.feasible))


def effective_beta(beta: float, u: float) -> float:
    if not 0.0 <= u <= 1.0:
        raise InvalidParameterError(f"intervention level u must lie in [0, 1], got {u}")
    return (1.0 - u) * beta


def sweep(
    spec: ModelSpec, params: DiseaseParams, u_values: Sequence[float], horizon: int
) -> list[Trajectory]:
    return [simulate(spec, params, horizon_days=horizon, u=u) for u in u_values]


def lookahead_days(config: PolicySearchConfig, day: int, segment: int) -> int:
    remaining = config.horizon - day
    if config.lookahead == REMAINING_HORIZON:
        return remaining
    # never look less far than the segment being committed
    return min(remaining, max(int(config.lookahead), segment))


def greedy_search(
    spec: ModelSpec, params: DiseaseParams, config: PolicySearchConfig
) -> PolicyResult:
    """Pick, at each decision day, the smallest grid level whose lookahead stays under threshold.

    The lookahead holds the candidate level constant from the current state
    and bounds the peak total-infected fraction (E excluded). When no level
    satisfies the bound the segment is run at ``u = 1`` and the result is
    flagged infeasible.
    """
    horizon = int(config.horizon)
    interval = int(config.decision_interval)
    grid = np.asarray(config.u_grid)
    state = init_state(spec, params)

    breakpoints, levels, decisions = [], [], []
    feasible = True
    day = 0
    while day < horizon:
        segment = min(interval, horizon - day)
        window = lookahead_days(config, day, segment)
        peaks = peak_infected_many(spec, params, state, grid, window)
        ok = np.flatnonzero(peaks <= config.threshold)
        if ok.size:
            u = float(grid[ok[0]])
        else:
            u = 1.0
            feasible = False
        decisions.append(Decision(day, u, bool(ok.size), window))
        breakpoints.append(day)
        levels.append(u)
        states, _ = integrate_daily(spec, params, state, np.full(segment, u))
        state = states[-1]
        day += segment

    schedule = InterventionSchedule(tuple(breakpoints), tuple(levels), horizon)
    return PolicyResult(schedule, feasible, tuple(decisions))


def max_infected(trajectory: Trajectory) -> float:
    return float(total_infected(trajectory.family, trajectory.states).max())
