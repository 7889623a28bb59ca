"""Compartmental epidemic models, (R0, rho) inference, forecasting and intervention search."""
from .forecast import ForecastBands, posterior_predictive, replay_fit
from .inference import (
    FitConfig,
    ObservedSeries,
    PosteriorSamples,
    PriorSpec,
    fit_map,
    fit_mcmc,
    log_likelihood,
    log_prior,
    summarize,
    synthetic_series,
)
from .intervention import (
    InterventionSchedule,
    PolicySearchConfig,
    effective_beta,
    greedy_search,
    sweep,
)
from .models import (
    DiseaseParams,
    Family,
    ModelSpec,
    StageRates,
    Trajectory,
    derivatives,
    init_state,
    simulate,
    step,
)

__version__ = "0.1.0"
