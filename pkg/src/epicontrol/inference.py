"""Posterior inference over (R0, rho) from under-reported daily case counts.

Observed counts are modelled as Poisson with mean ``rho * incidence * N``.
Both the optimiser and the sampler work in unconstrained coordinates
``(ln r0, logit rho)``; everything reported is back-transformed.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit
from scipy.optimize import minimize
from scipy.special import expit, gammaln, logit

from .models import (
    SUBSTEPS_PER_DAY,
    DiseaseParams,
    ModelSpec,
    _integrate,
    init_state,
    rate_vector,
    simulate,
)

log = logging.getLogger(__name__)

RATE_FLOOR = 1e-8
MIN_SERIES_LENGTH = 14
MIN_SUMMARY_DRAWS = 100


class FittingError(RuntimeError):
    pass


class ConvergenceError(FittingError):
    def __init__(self, message, theta=None, value=None):
        super().__init__(message)
        self.theta = theta
        self.value = value


class InsufficientSamplesError(ValueError):
    pass


class DiagnosticsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PriorSpec:
    r0_loc: float = math.log(2.0)
    r0_scale: float = 0.5
    rho_a: float = 2.0
    rho_b: float = 2.0

    def __post_init__(self):
        if not self.r0_scale > 0:
            raise ValueError(f"r0 prior scale must be > 0, got {self.r0_scale}")
        if not (self.rho_a > 0 and self.rho_b > 0):
            raise ValueError("rho prior Beta shapes must be > 0")

    @property
    def mode(self) -> tuple[float, float]:
        """Joint prior mode in the constrained space (Beta shapes > 1 assumed)."""
        r0 = math.exp(self.r0_loc - self.r0_scale**2)
        a, b = self.rho_a, self.rho_b
        rho = (a - 1) / (a + b - 2) if a > 1 and b > 1 else a / (a + b)
        return r0, rho


@dataclass(frozen=True, eq=False)
class ObservedSeries:
    dates: tuple
    counts: np.ndarray
    population: float

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1:
            raise ValueError("counts must be one-dimensional")
        if counts.size and (np.any(counts < 0) or np.any(counts != np.round(counts))):
            raise ValueError("counts must be non-negative integers")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != counts.size:
            raise ValueError("dates and counts differ in length")
        if not self.population > 0:
            raise ValueError("population must be > 0")

    def __len__(self) -> int:
        return self.counts.size

    def head(self, n: int) -> "ObservedSeries":
        return ObservedSeries(self.dates[:n], self.counts[:n], self.population)

    def __eq__(self, other):
        if not isinstance(other, ObservedSeries):
            return NotImplemented
        return (
            self.dates == other.dates
            and np.array_equal(self.counts, other.counts)
            and self.population == other.population
        )


@dataclass(frozen=True)
class FitConfig:
    chains: int = 4
    iterations: int = 5000
    burn_in: int = 2000
    proposal_scale: float = 0.1
    seed: int = 0
    restarts: int = 5
    init_jitter: float = 0.01
    adapt_batch: int = 50

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if not self.proposal_scale > 0:
            raise ValueError("proposal_scale must be > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    draws: np.ndarray
    chains: int
    acceptance_rate: tuple[float, ...]
    seed: int
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=np.float64).reshape(-1, 2)
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "acceptance_rate", tuple(float(a) for a in self.acceptance_rate))

    @property
    def r0(self) -> np.ndarray:
        return self.draws[:, 0]

    @property
    def rho(self) -> np.ndarray:
        return self.draws[:, 1]

    def __len__(self) -> int:
        return self.draws.shape[0]

    def by_chain(self) -> np.ndarray:
        return self.draws.reshape(self.chains, -1, 2)

    def rhat(self) -> np.ndarray:
        """Split-chain potential scale reduction for (r0, rho)."""
        per = self.by_chain()
        half = per.shape[1] // 2
        if half < 2:
            return np.full(2, np.nan)
        split = np.concatenate([per[:, :half], per[:, half : 2 * half]], axis=0)
        n = split.shape[1]
        w = split.var(axis=1, ddof=1).mean(axis=0)
        b = n * split.mean(axis=1).var(axis=0, ddof=1)
        var_plus = (n - 1) / n * w + b / n
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.sqrt(var_plus / w)

    def __eq__(self, other):
        if not isinstance(other, PosteriorSamples):
            return NotImplemented
        return (
            np.array_equal(self.draws, other.draws)
            and self.chains == other.chains
            and self.acceptance_rate == other.acceptance_rate
            and self.seed == other.seed
        )


@dataclass(frozen=True)
class ParameterSummary:
    mean: float
    sd: float
    q05: float
    q50: float
    q95: float


@dataclass(frozen=True)
class PosteriorSummary:
    r0: ParameterSummary
    rho: ParameterSummary
    n_draws: int


# ---------------------------------------------------------------------------
# transforms


def to_unconstrained(theta) -> np.ndarray:
    r0, rho = theta
    return np.array([math.log(r0), float(logit(rho))])


def to_constrained(z) -> tuple[float, float]:
    return math.exp(z[0]), float(expit(z[1]))


def log_jacobian(z) -> float:
    """log |d(r0, rho) / d(z)| for the (exp, expit) back-transform."""
    # log(expit(z)) + log(1 - expit(z)) = -softplus(-z) - softplus(z)
    return z[0] - np.logaddexp(0.0, -z[1]) - np.logaddexp(0.0, z[1])


# ---------------------------------------------------------------------------
# densities


def log_prior(theta, prior: PriorSpec = PriorSpec()) -> float:
    r0, rho = theta
    if not (r0 > 0 and 0 < rho < 1):
        return -math.inf
    s = prior.r0_scale
    lr = math.log(r0)
    lp_r0 = -lr - math.log(s * math.sqrt(2 * math.pi)) - (lr - prior.r0_loc) ** 2 / (2 * s * s)
    a, b = prior.rho_a, prior.rho_b
    log_beta_fn = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    lp_rho = (a - 1) * math.log(rho) + (b - 1) * math.log1p(-rho) - log_beta_fn
    return lp_r0 + lp_rho


@njit(cache=True)
def _poisson_loglik(family, rates, y0, u_daily, substeps, counts, scale, const):
    states, lowest = _integrate(family, rates, y0, u_daily, substeps)
    total = 0.0
    for t in range(counts.shape[0]):
        inc = states[t, 0] - states[t + 1, 0]
        if inc < 0.0:
            inc = 0.0
        lam = scale * inc + 1e-8
        total += counts[t] * math.log(lam) - lam
    return total - const, lowest


class LogPosterior:
    """Callable log posterior on unconstrained coordinates, for one data set.

    Precomputes everything that does not depend on (r0, rho) so that the
    sampler's inner loop is one compiled simulation per evaluation.
    """

    def __init__(
        self,
        spec: ModelSpec,
        fixed: DiseaseParams,
        data: ObservedSeries,
        prior: PriorSpec = PriorSpec(),
        *,
        use_likelihood: bool = True,
        jacobian: bool = True,
    ):
        self.spec = spec
        self.fixed = fixed
        self.data = data
        self.prior = prior
        self.use_likelihood = use_likelihood
        self.jacobian = jacobian
        self._family = spec.family.code
        self._rates = rate_vector(fixed)
        self._y0 = init_state(spec, fixed)
        self._u = np.zeros(len(data))
        self._counts = np.ascontiguousarray(data.counts, dtype=np.float64)
        self._const = float(gammaln(self._counts + 1.0).sum())
        self.evaluations = 0

    def log_likelihood(self, theta) -> float:
        r0, rho = theta
        rates = self._rates.copy()
        rates[0] = r0 * self.fixed.gamma
        value, lowest = _poisson_loglik(
            self._family, rates, self._y0, self._u, SUBSTEPS_PER_DAY,
            self._counts, rho * self.data.population, self._const,
        )
        if lowest < -1e-12:
            raise FittingError(f"simulation failed at r0={r0!r}, rho={rho!r}")
        return value

    def log_posterior(self, theta) -> float:
        lp = log_prior(theta, self.prior)
        if not math.isfinite(lp) or not self.use_likelihood:
            return lp
        return lp + self.log_likelihood(theta)

    def __call__(self, z) -> float:
        self.evaluations += 1
        if not np.all(np.isfinite(z)) or abs(z[0]) > 700:
            return -math.inf
        theta = to_constrained(z)
        try:
            value = self.log_posterior(theta)
        except FittingError:
            # an integrator blow-up at an extreme proposal is zero density
            return -math.inf
        if self.jacobian and math.isfinite(value):
            value += log_jacobian(z)
        return value


def log_likelihood(theta, spec: ModelSpec, fixed: DiseaseParams, data: ObservedSeries) -> float:
    """Poisson log-likelihood of the observed counts at ``theta = (r0, rho)``."""
    r0, rho = theta
    if not (r0 > 0 and 0 < rho <= 1):
        return -math.inf
    return LogPosterior(spec, fixed, data).log_likelihood((r0, rho))


def expected_counts(theta, spec: ModelSpec, fixed: DiseaseParams, days: int, population: float) -> np.ndarray:
    """``rho * incidence * N`` over ``days`` days (no rate floor)."""
    r0, rho = theta
    traj = simulate(spec, fixed.with_(r0=r0), horizon_days=days)
    return rho * traj.incidence * population


def synthetic_series(
    spec: ModelSpec,
    params: DiseaseParams,
    days: int,
    seed: Optional[int] = None,
    *,
    noise: bool = True,
    start: str = "2020-01-22",
) -> ObservedSeries:
    """Counts drawn as Poisson(rho * incidence * N), or rounded means when ``noise`` is off."""
    lam = expected_counts((params.r0, params.rho), spec, params, days, spec.population)
    if noise:
        counts = np.random.default_rng(seed).poisson(lam)
    else:
        counts = np.round(lam)
    dates = tuple(str(d) for d in np.datetime64(start) + np.arange(days))
    return ObservedSeries(dates, counts.astype(np.int64), spec.population)


def _check_series(data: ObservedSeries) -> None:
    if len(data) < MIN_SERIES_LENGTH:
        raise ValueError(f"series has {len(data)} rows; at least {MIN_SERIES_LENGTH} are required")


# ---------------------------------------------------------------------------
# MAP


def fit_map(
    spec: ModelSpec,
    fixed: DiseaseParams,
    data: ObservedSeries,
    prior: PriorSpec = PriorSpec(),
    config: FitConfig = FitConfig(),
    *,
    use_likelihood: bool = True,
) -> tuple[tuple[float, float], float]:
    """Maximise log prior + log likelihood with restarted Nelder-Mead.

    The first start is the prior mode; the others are seeded prior draws.
    Returns ``((r0, rho), log_posterior)``.
    """
    if use_likelihood:
        _check_series(data)
    target = LogPosterior(spec, fixed, data, prior, use_likelihood=use_likelihood, jacobian=False)

    def objective(z):
        value = target(z)
        return -value if math.isfinite(value) else 1e300

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x4D4150]))
    starts = [to_unconstrained(prior.mode)]
    for _ in range(config.restarts - 1):
        r0 = math.exp(rng.normal(prior.r0_loc, prior.r0_scale))
        rho = float(np.clip(rng.beta(prior.rho_a, prior.rho_b), 1e-3, 1 - 1e-3))
        starts.append(to_unconstrained((r0, rho)))

    options = {"xatol": 1e-9, "fatol": 1e-9, "maxiter": 4000, "maxfev": 8000}
    best_z, best_f, improved = None, math.inf, False
    for z0 in starts:
        f0 = objective(z0)
        res = minimize(objective, z0, method="Nelder-Mead", options=options)
        # a fresh simplex at the optimum escapes premature collapse
        res = minimize(objective, res.x, method="Nelder-Mead", options=options)
        improved = improved or res.fun < f0
        if res.fun < best_f:
            best_z, best_f = res.x, res.fun
    if best_z is None or not improved or best_f >= 1e300:
        theta = None if best_z is None else to_constrained(best_z)
        raise ConvergenceError("MAP optimisation failed to improve on any start", theta, -best_f)
    theta = to_constrained(best_z)
    log.debug("MAP %s logpost=%.6f after %d evaluations", theta, -best_f, target.evaluations)
    return theta, -float(best_f)


# ---------------------------------------------------------------------------
# MCMC


def adaptive_metropolis(
    log_target: Callable[[np.ndarray], float],
    start: np.ndarray,
    iterations: int,
    burn_in: int,
    rng: np.random.Generator,
    *,
    scale: float = 0.1,
    batch: int = 50,
) -> tuple[np.ndarray, float]:
    """Random-walk Metropolis with proposal adaptation confined to burn-in.

    Every ``batch`` burn-in iterations the step size is nudged toward 30%
    acceptance; once enough burn-in history exists the proposal shape is
    the empirical covariance of the recent half of burn-in. After burn-in
    the step size is frozen at its average over the second half of burn-in.
    Returns the retained draws (post burn-in, unconstrained) and their
    acceptance rate.
    """
    x = np.array(start, dtype=np.float64)
    d = x.size
    lp = log_target(x)
    if not math.isfinite(lp):
        raise FittingError(f"chain start {x} has zero posterior density")
    chol = np.eye(d)
    log_s = math.log(scale)
    history = np.empty((burn_in, d))
    kept = np.empty((iterations - burn_in, d))
    normals = rng.standard_normal((iterations, d))
    log_u = np.log(rng.random(iterations))
    shaped = False
    scale_trace = []
    accepted_batch = 0
    accepted_kept = 0
    for i in range(iterations):
        proposal = x + math.exp(log_s) * (chol @ normals[i])
        lp_new = log_target(proposal)
        accept = log_u[i] < lp_new - lp
        if accept:
            x, lp = proposal, lp_new
        if i < burn_in:
            history[i] = x
            accepted_batch += accept
            if (i + 1) % batch == 0:
                rate = accepted_batch / batch
                accepted_batch = 0
                log_s += 3.0 * (rate - 0.3)
                if i + 1 >= 4 * batch:
                    recent = history[(i + 1) // 2 : i + 1]
                    cov = np.cov(recent, rowvar=False).reshape(d, d)
                    if np.all(np.isfinite(cov)) and np.linalg.det(cov) > 0:
                        try:
                            chol = np.linalg.cholesky(cov + 1e-14 * np.eye(d))
                        except np.linalg.LinAlgError:
                            pass
                        else:
                            if not shaped:
                                log_s = math.log(2.38 / math.sqrt(d))
                                shaped = True
                scale_trace.append(log_s)
            if i + 1 == burn_in and len(scale_trace) >= 4:
                # freeze at the average over the second half of burn-in
                log_s = float(np.mean(scale_trace[len(scale_trace) // 2 :]))
        else:
            kept[i - burn_in] = x
            accepted_kept += accept
    n_kept = iterations - burn_in
    return kept, accepted_kept / n_kept


def fit_mcmc(
    spec: ModelSpec,
    fixed: DiseaseParams,
    data: ObservedSeries,
    prior: PriorSpec = PriorSpec(),
    config: FitConfig = FitConfig(),
    *,
    init: Optional[tuple[float, float]] = None,
    use_likelihood: bool = True,
    log_target: Optional[Callable[[np.ndarray], float]] = None,
) -> PosteriorSamples:
    """Sample the (r0, rho) posterior with ``config.chains`` adaptive Metropolis chains.

    Chains start from jittered copies of ``init`` (the MAP point by default)
    and use independent child seeds of ``config.seed``. ``log_target``
    replaces the posterior with an arbitrary unconstrained density, which
    the test-suite uses to check calibration against known targets.
    """
    if log_target is None:
        if use_likelihood:
            _check_series(data)
        log_target = LogPosterior(spec, fixed, data, prior, use_likelihood=use_likelihood)
        if init is None:
            init, _ = fit_map(spec, fixed, data, prior, config, use_likelihood=use_likelihood)
    elif init is None:
        init = prior.mode
    z_init = to_unconstrained(init)

    children = np.random.SeedSequence(config.seed).spawn(config.chains)
    draws, rates, notes = [], [], []
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        start = z_init + config.init_jitter * rng.standard_normal(z_init.size)
        kept, rate = adaptive_metropolis(
            log_target, start, config.iterations, config.burn_in, rng,
            scale=config.proposal_scale, batch=config.adapt_batch,
        )
        if rate < 0.01:
            msg = f"chain {k} acceptance rate {rate:.4f} is below 1% after adaptation"
            warnings.warn(msg, DiagnosticsWarning, stacklevel=2)
            notes.append(msg)
        draws.append(np.column_stack([np.exp(kept[:, 0]), expit(kept[:, 1])]))
        rates.append(rate)
    return PosteriorSamples(np.concatenate(draws), config.chains, tuple(rates), config.seed, tuple(notes))


# ---------------------------------------------------------------------------
# summaries


def _summary(values: np.ndarray) -> ParameterSummary:
    # type-4 quantiles: linear interpolation of the empirical CDF, so the
    # p-quantile of n draws is exactly the (n*p)-th order statistic
    q = np.quantile(values, [0.05, 0.5, 0.95], method="interpolated_inverted_cdf")
    return ParameterSummary(
        mean=float(values.mean()),
        sd=float(values.std()),
        q05=float(q[0]),
        q50=float(q[1]),
        q95=float(q[2]),
    )


def summarize(samples: PosteriorSamples, min_draws: int = MIN_SUMMARY_DRAWS) -> PosteriorSummary:
    if len(samples) < min_draws:
        raise InsufficientSamplesError(f"{len(samples)} draws retained; at least {min_draws} needed")
    return PosteriorSummary(_summary(samples.r0), _summary(samples.rho), len(samples))


def quantile(values: Sequence[float], q) -> np.ndarray:
    return np.quantile(np.asarray(values, dtype=np.float64), q, method="interpolated_inverted_cdf")
