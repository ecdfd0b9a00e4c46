"""Marginalized causal models for randomized designs with noncompliance."""

from confounder_forge.causal.data import (  # noqa: F401
    COMPLIER,
    NEVER_TAKER,
    ALWAYS_TAKER,
    UNKNOWN,
    CovariateInfo,
    DataError,
    Observation,
    Dataset,
    load_dataset,
)
from confounder_forge.causal.spec import (  # noqa: F401
    ModelSpec,
    SpecError,
    apply_random_intercept_reparam,
    apply_ratio_reparam,
    combine_two_confounders,
    random_intercept_map,
    ratio_exposure_coefficient,
    two_confounder_map,
)
from confounder_forge.causal.builders import (  # noqa: F401
    AteSummary,
    FitResult,
    LogPosterior,
    build_logpost,
    extract_ate,
    fit,
    h_interaction,
)
