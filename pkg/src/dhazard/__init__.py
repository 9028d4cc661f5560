"""Scalable additive discrete-time hazard models.

Survival records are expanded into person-period form, structured
additive predictors (P-splines, tensor products, linear and categorical
terms) are fitted by penalized backfitting, and model terms together
with their smoothing parameters are selected by batchwise backfitting:
stochastic per-term updates on individual-level batches, scored and
accepted out-of-batch.
"""

from .basis import (
    DesignBlock,
    TermSpec,
    bspline_basis,
    build_blocks,
    center_block,
    difference_penalty,
    tensor_product,
)
from .data import (
    AugmentedDataset,
    Batch,
    ColumnSchema,
    IndividualRecord,
    augment,
    load_csv,
    sample_batch,
    truncate_to_horizon,
)
from .engine import (
    EngineConfig,
    FitReport,
    boosting_iteration,
    fit,
    run_boosting,
    run_refit,
    stochastic_update,
    tau_search,
)
from .errors import ConfigError, EmptySelectionError, HorizonError, ValidationError
from .model import (
    ModelState,
    PredictorDesign,
    WorkingQuantities,
    aic,
    backfit_update,
    edf,
    fit_backfitting,
    inverse_link,
    loglik,
    score_weights,
    survival_curve,
)
from .predict import FittedHazardModel, load_model, model_from_fit, save_model
from .simulate import (
    SimConfig,
    StudyReport,
    TrueModel,
    gen_covariates,
    gen_events,
    mse_effect,
    run_study,
    selection_frequency,
    true_effects,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentedDataset",
    "Batch",
    "ColumnSchema",
    "ConfigError",
    "DesignBlock",
    "EmptySelectionError",
    "EngineConfig",
    "FitReport",
    "FittedHazardModel",
    "HorizonError",
    "IndividualRecord",
    "ModelState",
    "PredictorDesign",
    "SimConfig",
    "StudyReport",
    "TermSpec",
    "TrueModel",
    "ValidationError",
    "WorkingQuantities",
    "aic",
    "augment",
    "backfit_update",
    "boosting_iteration",
    "bspline_basis",
    "build_blocks",
    "center_block",
    "difference_penalty",
    "edf",
    "fit",
    "fit_backfitting",
    "gen_covariates",
    "gen_events",
    "inverse_link",
    "load_csv",
    "load_model",
    "loglik",
    "model_from_fit",
    "mse_effect",
    "run_boosting",
    "run_refit",
    "run_study",
    "sample_batch",
    "save_model",
    "score_weights",
    "selection_frequency",
    "stochastic_update",
    "survival_curve",
    "tau_search",
    "tensor_product",
    "true_effects",
    "truncate_to_horizon",
]
