"""Posterior-predictive forecasts of observed daily cases."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .inference import (
    InsufficientSamplesError,
    ObservedSeries,
    PosteriorSamples,
    expected_counts,
)
from .models import DiseaseParams, ModelSpec, simulate

BAND_LEVELS = (0.05, 0.5, 0.95)


@dataclass(frozen=True, eq=False)
class ForecastBands:
    times: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    draws_used: int
    history: int
    observed: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return len(self.times) - self.history

    def contains(self, values: np.ndarray, start: int = 0) -> np.ndarray:
        """Elementwise ``lower <= values <= upper`` for days ``start, start+1, ...``."""
        stop = start + len(values)
        return (self.lower[start:stop] <= values) & (values <= self.upper[start:stop])

    def mean_width(self) -> float:
        return float(np.mean(self.upper - self.lower)) if len(self.times) else 0.0


@dataclass(frozen=True, eq=False)
class ReplayResult:
    expected: np.ndarray
    residuals: np.ndarray


def posterior_predictive(
    samples: PosteriorSamples,
    spec: ModelSpec,
    fixed: DiseaseParams,
    data: ObservedSeries,
    horizon: int,
    n_draws: int = 500,
    seed: Optional[int] = None,
    *,
    noise: bool = True,
) -> ForecastBands:
    """Central 90% predictive bands over the history window plus ``horizon`` days.

    History days carry the fitted expectation ``rho * incidence * N`` for
    each parameter draw; future days additionally receive Poisson
    observation noise (unless ``noise`` is off).
    """
    if len(samples) == 0:
        raise InsufficientSamplesError("posterior has no draws")
    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    rng = np.random.default_rng(seed)
    if n_draws < len(samples):
        idx = np.sort(rng.choice(len(samples), size=n_draws, replace=False))
    else:
        idx = np.arange(len(samples))
    history = len(data)
    days = history + horizon

    paths = np.empty((idx.size, days))
    cache: dict[float, np.ndarray] = {}
    for row, i in enumerate(idx):
        r0, rho = samples.draws[i]
        inc = cache.get(r0)
        if inc is None:
            inc = simulate(spec, fixed.with_(r0=r0), horizon_days=days).incidence
            cache[r0] = inc
        # same operation order as expected_counts so a point posterior is exact
        paths[row] = rho * inc * data.population
    if noise and horizon:
        paths[:, history:] = rng.poisson(paths[:, history:])

    if days:
        lower, median, upper = np.quantile(paths, BAND_LEVELS, axis=0, method="interpolated_inverted_cdf")
    else:
        lower = median = upper = np.empty(0)
    observed = np.concatenate([data.counts.astype(np.float64), np.full(horizon, np.nan)])
    return ForecastBands(
        times=np.arange(days),
        median=median,
        lower=lower,
        upper=upper,
        draws_used=int(idx.size),
        history=history,
        observed=observed,
    )


def replay_fit(theta, spec: ModelSpec, fixed: DiseaseParams, data: ObservedSeries) -> ReplayResult:
    """Expected observed counts over the data window at ``theta`` and the residuals."""
    expected = expected_counts(theta, spec, fixed, len(data), data.population)
    return ReplayResult(expected=expected, residuals=data.counts - expected)
