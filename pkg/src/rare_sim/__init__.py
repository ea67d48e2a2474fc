"""Cross-entropy importance sampling for rare failure probabilities.

Modules:

* :mod:`rare_sim.gaussian` - Gaussian sampling, structured covariances,
  likelihood ratios and weighted moment estimators.
* :mod:`rare_sim.estimators` - crude Monte Carlo, fixed-density IS and the
  adaptive CE / iCE families (full, diagonal, rank-one along the mean).
* :mod:`rare_sim.limit_states` - benchmark performance functions.
* :mod:`rare_sim.harness` - repeated experiments, sweeps and table output.
"""

from .estimators import (
    DiagonalCovariance,
    EstimatorConfig,
    FixedCovariance,
    FixedMean,
    FullCovariance,
    RankOneAlongMean,
    TrialResult,
    crude_monte_carlo,
    importance_sampling,
    run_ce,
    run_ice,
)
from .gaussian import GaussianParams, RankOne, make_rng
from .harness import ExperimentSpec, ExperimentSummary, run_experiment
from .limit_states import make_limit_state

__version__ = "0.1.0"

__all__ = [
    "DiagonalCovariance",
    "EstimatorConfig",
    "FixedCovariance",
    "FixedMean",
    "FullCovariance",
    "RankOneAlongMean",
    "TrialResult",
    "crude_monte_carlo",
    "importance_sampling",
    "run_ce",
    "run_ice",
    "GaussianParams",
    "RankOne",
    "make_rng",
    "ExperimentSpec",
    "ExperimentSummary",
    "run_experiment",
    "make_limit_state",
]
