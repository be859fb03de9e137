"""Nested partially-latent class models for case-control etiology
studies: simulation, exact likelihoods, a native Gibbs/Metropolis
sampler, posterior summaries, and posterior predictive checks."""

__version__ = "0.1.0"

from .core import (
    BRS,
    NOS_LABEL,
    SS,
    CauseList,
    ContinuousColumn,
    CovariateTable,
    Dataset,
    FactorColumn,
    InputError,
    McmcSettings,
    MeasurementSlice,
    ModelSpec,
    Template,
    TprPriorSpec,
    make_template,
    summarize_slice,
    validate_dataset,
)
from .datagen import (
    BrsSliceRecipe,
    SimulationRecipe,
    SsSliceRecipe,
    combine_and_reorder,
    simulate,
)
from .likelihood import (
    MeasurementParams,
    MixingWeights,
    marginal_loglik,
    subject_loglik,
)
from .posterior import (
    CscfSummary,
    convergence,
    ess,
    individual_predictions,
    ppc_slord,
    ppc_top_patterns,
    split_rhat,
    summarize_cscf,
)
from .priors import BetaRange, StickBreakingPrior, beta_from_range, stick_weights
from .runio import PosteriorRun, load_run, write_run
from .sampler import DataInconsistencyError, NplcmModel, run

__all__ = [
    "BRS", "SS", "NOS_LABEL", "CauseList", "ContinuousColumn", "CovariateTable",
    "Dataset", "FactorColumn", "InputError", "McmcSettings", "MeasurementSlice",
    "ModelSpec", "Template", "TprPriorSpec", "make_template", "summarize_slice",
    "validate_dataset", "BrsSliceRecipe", "SimulationRecipe", "SsSliceRecipe",
    "combine_and_reorder", "simulate", "MeasurementParams", "MixingWeights",
    "marginal_loglik", "subject_loglik", "CscfSummary", "convergence", "ess",
    "individual_predictions", "ppc_slord", "ppc_top_patterns", "split_rhat",
    "summarize_cscf", "BetaRange", "StickBreakingPrior", "beta_from_range",
    "stick_weights", "PosteriorRun", "load_run", "write_run",
    "DataInconsistencyError", "NplcmModel", "run",
]
