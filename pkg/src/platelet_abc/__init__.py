"""Platelet deposition forward model with ABC calibration.

Exposes the forward simulator, the summary/discrepancy layer, the ABC
samplers (sklearn-style estimators), and the task executor used to spread
simulations over workers.
"""

from .deposition import (
    BulkState,
    DepositionSeries,
    ModelParams,
    PARAM_NAMES,
    SimulationConfig,
    SubstrateGrid,
    VARIABLE_NAMES,
    cluster_census,
    simulate,
    with_seed,
)
from .errors import (
    ConfigurationError,
    DataFormatError,
    InferenceError,
    PlateletABCError,
    SimulationError,
)
from .inference import (
    Particle,
    Population,
    PredictiveSummary,
    PriorBox,
    RejectionABC,
    SABC,
    adapt_cov,
    bayes_estimate,
    default_prior,
    perturb,
    posterior_correlation,
    posterior_predictive,
    rejection_abc,
    sabc,
    sample_prior,
    task_seed,
)
from .io import ObservedDataset, RunConfig, load_observed, load_run_config, synth_dataset
from .scheduling import (
    ExecutorTimeline,
    MapResult,
    SimulationExecutor,
    Task,
    chunked_map,
    dynamic_map,
    imbalance_report,
    makespan,
    simulate_schedule,
)
from .summaries import (
    SummaryStatistics,
    SummaryVector,
    bhattacharyya_rho,
    discrepancy,
    discrepancy_from_summaries,
    summarize,
)

__all__ = [
    "BulkState",
    "ConfigurationError",
    "DataFormatError",
    "DepositionSeries",
    "ExecutorTimeline",
    "InferenceError",
    "MapResult",
    "ModelParams",
    "ObservedDataset",
    "PARAM_NAMES",
    "Particle",
    "PlateletABCError",
    "Population",
    "PredictiveSummary",
    "PriorBox",
    "RejectionABC",
    "RunConfig",
    "SABC",
    "SimulationConfig",
    "SimulationError",
    "SimulationExecutor",
    "SubstrateGrid",
    "SummaryStatistics",
    "SummaryVector",
    "Task",
    "VARIABLE_NAMES",
    "adapt_cov",
    "bayes_estimate",
    "bhattacharyya_rho",
    "chunked_map",
    "cluster_census",
    "default_prior",
    "discrepancy",
    "discrepancy_from_summaries",
    "dynamic_map",
    "imbalance_report",
    "load_observed",
    "load_run_config",
    "makespan",
    "perturb",
    "posterior_correlation",
    "posterior_predictive",
    "rejection_abc",
    "sabc",
    "sample_prior",
    "simulate",
    "simulate_schedule",
    "summarize",
    "synth_dataset",
    "task_seed",
    "with_seed",
]
