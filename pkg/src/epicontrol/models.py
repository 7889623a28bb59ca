"""Compartmental model structures and deterministic trajectory simulation.

All compartments are fractions of a closed population. Transmission is
parameterised by R0 and the recovery rate, ``beta = r0 * gamma``; a policy
level ``u`` in [0, 1] scales it to ``(1 - u) * beta``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from numba import njit

if TYPE_CHECKING:
    from .intervention import InterventionSchedule

SUBSTEPS_PER_DAY = 4
NEGATIVE_TOLERANCE = 1e-12
DEFAULT_IOTA = 1e-4


class InvalidParameterError(ValueError):
    pass


class IntegratorError(RuntimeError):
    pass


class Family(str, enum.Enum):
    SIR = "SIR"
    SEIR = "SEIR"
    SEI3RD = "SEI3RD"

    @property
    def compartments(self) -> tuple[str, ...]:
        return _COMPARTMENTS[self]

    @property
    def code(self) -> int:
        return _CODES[self]


_COMPARTMENTS = {
    Family.SIR: ("S", "I", "R"),
    Family.SEIR: ("S", "E", "I", "R"),
    Family.SEI3RD: ("S", "E", "I1", "I2", "I3", "R", "D"),
}
_CODES = {Family.SIR: 0, Family.SEIR: 1, Family.SEI3RD: 2}
# compartments counted as "currently infected" (E excluded)
_INFECTED = {
    Family.SIR: (1,),
    Family.SEIR: (2,),
    Family.SEI3RD: (2, 3, 4),
}


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    refined: bool = True
    population: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not self.population > 0:
            raise InvalidParameterError(f"population must be > 0, got {self.population}")

    @property
    def n_compartments(self) -> int:
        return len(self.family.compartments)

    @property
    def label(self) -> str:
        return self.family.value + ("(i)" if self.refined else "")


@dataclass(frozen=True)
class StageRates:
    """SEI3RD severity ladder: I1 -> I2 -> I3 -> D, each stage recovering to R."""

    p1: float = 1 / 5
    p2: float = 1 / 6
    g1: float = 1 / 6
    g2: float = 1 / 8
    g3: float = 1 / 10
    delta: float = 1 / 15
    w1: float = 0.6
    w2: float = 0.3
    w3: float = 0.1

    def validate(self) -> None:
        for name in ("p1", "p2", "g1", "g2", "g3", "delta", "w1", "w2", "w3"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise InvalidParameterError(f"stage rate {name} must be >= 0, got {value}")
        total = self.w1 + self.w2 + self.w3
        if abs(total - 1.0) > 1e-12:
            raise InvalidParameterError(f"infectiousness weights must sum to 1, got {total!r}")


@dataclass(frozen=True)
class DiseaseParams:
    r0: float = 3.0
    gamma: float = 0.1
    sigma: float = 1 / 5.1
    stage: StageRates = field(default_factory=StageRates)
    rho: float = 1.0
    iota: float = DEFAULT_IOTA

    def __post_init__(self):
        # zero rates are admitted so a frozen vector field can be built
        for name in ("r0", "gamma", "sigma"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise InvalidParameterError(f"{name} must be non-negative, got {value}")
        if not 0 < self.rho <= 1:
            raise InvalidParameterError(f"rho must lie in (0, 1], got {self.rho}")
        if not 0 <= self.iota < 1:
            raise InvalidParameterError(f"iota must lie in [0, 1), got {self.iota}")
        self.stage.validate()

    @property
    def beta(self) -> float:
        return self.r0 * self.gamma

    def with_(self, **changes) -> "DiseaseParams":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Daily-sampled compartment fractions plus daily incidence.

    ``states`` has shape ``(horizon + 1, n_compartments)``; ``incidence[t]``
    is the susceptible outflow between day ``t`` and ``t + 1``.
    """

    family: Family
    times: np.ndarray
    states: np.ndarray
    incidence: np.ndarray

    def __post_init__(self):
        for arr in (self.times, self.states, self.incidence):
            arr.setflags(write=False)

    @property
    def compartments(self) -> tuple[str, ...]:
        return self.family.compartments

    def __getitem__(self, name: str) -> np.ndarray:
        return self.states[:, self.compartments.index(name)]

    @property
    def infected(self) -> np.ndarray:
        """Total currently-infected fraction (I, or I1+I2+I3)."""
        return total_infected(self.family, self.states)

    @property
    def horizon(self) -> int:
        return len(self.times) - 1

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.family == other.family
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.incidence, other.incidence)
        )


def total_infected(family: Family, states: np.ndarray) -> np.ndarray:
    idx = _INFECTED[Family(family)]
    out = states[..., idx[0]].copy()
    for i in idx[1:]:
        out = out + states[..., i]
    return out


def rate_vector(params: DiseaseParams) -> np.ndarray:
    st = params.stage
    return np.array(
        [params.beta, params.gamma, params.sigma,
         st.p1, st.p2, st.g1, st.g2, st.g3, st.delta, st.w1, st.w2, st.w3],
        dtype=np.float64,
    )


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _deriv(family, rates, y, u, out):
    beta = (1.0 - u) * rates[0]
    gamma = rates[1]
    sigma = rates[2]
    if family == 0:
        inf = beta * y[0] * y[1]
        rec = gamma * y[1]
        out[0] = -inf
        out[1] = inf - rec
        out[2] = rec
    elif family == 1:
        inf = beta * y[0] * y[2]
        onset = sigma * y[1]
        rec = gamma * y[2]
        out[0] = -inf
        out[1] = inf - onset
        out[2] = onset - rec
        out[3] = rec
    else:
        p1 = rates[3]
        p2 = rates[4]
        g1 = rates[5]
        g2 = rates[6]
        g3 = rates[7]
        delta = rates[8]
        force = beta * (rates[9] * y[2] + rates[10] * y[3] + rates[11] * y[4])
        inf = force * y[0]
        onset = sigma * y[1]
        f12 = p1 * y[2]
        f23 = p2 * y[3]
        r1 = g1 * y[2]
        r2 = g2 * y[3]
        r3 = g3 * y[4]
        dead = delta * y[4]
        out[0] = -inf
        out[1] = inf - onset
        out[2] = onset - f12 - r1
        out[3] = f12 - f23 - r2
        out[4] = f23 - dead - r3
        out[5] = r1 + r2 + r3
        out[6] = dead


@njit(cache=True)
def _rk4_raw(family, rates, y, u, dt):
    n = y.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    _deriv(family, rates, y, u, k1)
    for i in range(n):
        tmp[i] = y[i] + 0.5 * dt * k1[i]
    _deriv(family, rates, tmp, u, k2)
    for i in range(n):
        tmp[i] = y[i] + 0.5 * dt * k2[i]
    _deriv(family, rates, tmp, u, k3)
    for i in range(n):
        tmp[i] = y[i] + dt * k3[i]
    _deriv(family, rates, tmp, u, k4)
    out = np.empty(n)
    for i in range(n):
        out[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return out


@njit(cache=True)
def _clamp(y):
    """Clamp negatives to zero and renormalise; returns the pre-clamp minimum."""
    lowest = y[0]
    clamped = False
    total = 0.0
    for i in range(y.shape[0]):
        if y[i] < lowest:
            lowest = y[i]
        if y[i] < 0.0:
            y[i] = 0.0
            clamped = True
        total += y[i]
    # RK4 already conserves the sum; renormalising untouched states would
    # only add rounding noise to monotone compartments
    if clamped and total > 0.0:
        for i in range(y.shape[0]):
            y[i] /= total
    return lowest


@njit(cache=True)
def _integrate(family, rates, y0, u_daily, substeps):
    days = u_daily.shape[0]
    n = y0.shape[0]
    states = np.empty((days + 1, n))
    states[0] = y0
    y = y0.copy()
    dt = 1.0 / substeps
    lowest = 0.0
    for d in range(days):
        u = u_daily[d]
        for _ in range(substeps):
            y = _rk4_raw(family, rates, y, u, dt)
            m = _clamp(y)
            if m < lowest:
                lowest = m
        states[d + 1] = y
    return states, lowest


@njit(cache=True)
def _integrate_many(family, rates, y0, u_levels, days, substeps):
    """Peak total-infected over ``days`` for each constant level in ``u_levels``."""
    n_levels = u_levels.shape[0]
    peaks = np.empty(n_levels)
    lows = np.empty(n_levels)
    u_daily = np.empty(days)
    for j in range(n_levels):
        u_daily[:] = u_levels[j]
        states, low = _integrate(family, rates, y0, u_daily, substeps)
        lows[j] = low
        peak = 0.0
        for d in range(days + 1):
            if family == 0:
                v = states[d, 1]
            elif family == 1:
                v = states[d, 2]
            else:
                v = states[d, 2] + states[d, 3] + states[d, 4]
            if v > peak:
                peak = v
        peaks[j] = peak
    return peaks, lows


# ---------------------------------------------------------------------------
# public operations


def _check_u(u: float) -> None:
    if not 0.0 <= u <= 1.0:
        raise InvalidParameterError(f"intervention level u must lie in [0, 1], got {u}")


def init_state(spec: ModelSpec, params: DiseaseParams) -> np.ndarray:
    """Initial compartment fractions.

    Refined variants seed ``params.iota`` into I (or I1); the plain variants
    start from a single index case, ``1 / population``.
    """
    if spec.refined:
        seed = params.iota
    else:
        seed = 1.0 / spec.population
    if not 0 <= seed < 1:
        raise InvalidParameterError(f"initial infected fraction must lie in [0, 1), got {seed}")
    y = np.zeros(spec.n_compartments)
    y[0] = 1.0 - seed
    y[1 if spec.family is Family.SIR else 2] = seed
    return y


def derivatives(spec: ModelSpec, params: DiseaseParams, state, u: float = 0.0) -> np.ndarray:
    _check_u(u)
    y = np.asarray(state, dtype=np.float64)
    out = np.empty_like(y)
    _deriv(spec.family.code, rate_vector(params), y, float(u), out)
    return out


def step(spec: ModelSpec, params: DiseaseParams, state, u: float, dt: float) -> np.ndarray:
    """One classical RK4 step of length ``dt`` days, clamped and renormalised."""
    _check_u(u)
    if not dt > 0:
        raise InvalidParameterError(f"dt must be > 0, got {dt}")
    y = _rk4_raw(spec.family.code, rate_vector(params), np.asarray(state, dtype=np.float64), float(u), float(dt))
    lowest = _clamp(y)
    if lowest < -NEGATIVE_TOLERANCE:
        raise IntegratorError(f"compartment fell to {lowest:.3e} during integration")
    return y


def integrate_daily(
    spec: ModelSpec,
    params: DiseaseParams,
    y0: np.ndarray,
    u_daily: np.ndarray,
    substeps: int = SUBSTEPS_PER_DAY,
) -> tuple[np.ndarray, float]:
    """Integrate from ``y0`` with one intervention level per day.

    Returns the ``(len(u_daily) + 1, k)`` state array and the lowest
    pre-clamp compartment value seen.
    """
    u_daily = np.ascontiguousarray(u_daily, dtype=np.float64)
    if u_daily.size and (u_daily.min() < 0 or u_daily.max() > 1):
        raise InvalidParameterError("intervention levels must lie in [0, 1]")
    states, lowest = _integrate(
        spec.family.code, rate_vector(params), np.ascontiguousarray(y0, dtype=np.float64), u_daily, substeps
    )
    if lowest < -NEGATIVE_TOLERANCE:
        raise IntegratorError(f"compartment fell to {lowest:.3e} during integration")
    return states, lowest


def trajectory_from_states(family: Family, states: np.ndarray) -> Trajectory:
    incidence = states[:-1, 0] - states[1:, 0]
    # S is non-increasing; renormalisation can leave ~1e-18 noise
    incidence = np.maximum(incidence, 0.0)
    return Trajectory(
        family=Family(family),
        times=np.arange(states.shape[0]),
        states=states,
        incidence=incidence,
    )


def simulate(
    spec: ModelSpec,
    params: DiseaseParams,
    schedule: Optional["InterventionSchedule"] = None,
    horizon_days: int = 365,
    *,
    u: Optional[float] = None,
    initial: Optional[np.ndarray] = None,
) -> Trajectory:
    """Daily trajectory from :func:`init_state` using RK4 with 4 substeps per day.

    Pass either an :class:`InterventionSchedule` or a constant level ``u``;
    with neither, no intervention is applied.
    """
    if horizon_days < 0:
        raise InvalidParameterError("horizon_days must be >= 0")
    if schedule is not None and u is not None:
        raise InvalidParameterError("pass either schedule or u, not both")
    if schedule is not None:
        if schedule.horizon < horizon_days:
            raise InvalidParameterError(
                f"schedule covers {schedule.horizon} days but horizon is {horizon_days}"
            )
        u_daily = schedule.daily_levels(horizon_days)
    else:
        level = 0.0 if u is None else float(u)
        _check_u(level)
        u_daily = np.full(horizon_days, level)
    y0 = init_state(spec, params) if initial is None else np.asarray(initial, dtype=np.float64)
    states, _ = integrate_daily(spec, params, y0, u_daily)
    return trajectory_from_states(spec.family, states)


def peak_infected_many(
    spec: ModelSpec,
    params: DiseaseParams,
    y0: np.ndarray,
    levels: Sequence[float],
    days: int,
) -> np.ndarray:
    """Peak total-infected fraction over ``days`` for each constant level, starting at ``y0``."""
    peaks, lows = _integrate_many(
        spec.family.code,
        rate_vector(params),
        np.ascontiguousarray(y0, dtype=np.float64),
        np.ascontiguousarray(levels, dtype=np.float64),
        int(days),
        SUBSTEPS_PER_DAY,
    )
    if lows.size and lows.min() < -NEGATIVE_TOLERANCE:
        raise IntegratorError(f"compartment fell to {lows.min():.3e} during integration")
    return peaks
