"""Censored mixture modeling of sequential card-game risk taking.

A finite-mixture, multiply inflated, censoring-aware count regression for
32-card risk tasks, with a matching cohort simulator, segment-count
selection, posterior profiling, and prediction utilities.
"""

from .data import DataError, pack, read_children, read_trials, write_table
from .design import (
    Block,
    CovariateSchema,
    DesignInfo,
    PackedData,
    apply_standardize,
    build_design,
    standardize,
    sum_zero_collapse,
    sum_zero_expand,
)
from .distributions import (
    ATTRACTORS,
    SUPPORT_MAX,
    InflatedNB,
    inflated_cdf,
    inflated_pmf,
    nb_cdf,
    nb_logpmf,
    nb_pmf,
    nb_survival,
    softplus,
    softplus_deriv,
)
from .estimate import (
    FitConfig,
    FitResult,
    fit,
    fit_result_to_dict,
    initialize,
    numerical_hessian,
    warm_start,
)
from .game import (
    ALL_SETTINGS,
    GameSetting,
    TrialOutcome,
    conditional_censor_prob,
    expected_round_score,
    marginal_censor_prob,
    omega,
    risk_neutral_optimum,
    simulate_trial,
    simulate_trials,
    survival_prob,
)
from .inference import (
    PosteriorMatrix,
    SegmentSelectionReport,
    WaldProfile,
    bic,
    posteriors,
    select_segments,
    significance_stars,
    weighted_profile,
)
from .likelihood import (
    component_logliks,
    game_loglik,
    loglik_gradient,
    negloglik_and_grad,
    person_loglik,
    responsibilities,
    theta,
    total_negloglik,
)
from .params import (
    ModelParams,
    ParamSpace,
    collapse,
    delta_method_cov,
    expand,
    jacobian_of_expand,
    params_from_dict,
    params_to_dict,
)
from .predict import (
    PredictedDistribution,
    aggregate_distribution,
    base_tail_mass,
    censor_correct,
    censored_outcome_distribution,
    evaluate,
    expected_cards,
    expected_cards_rows,
    mixture_pmf_rows,
)
from .simulate import (
    CategoricalSpec,
    CovariateGenerator,
    NumericSpec,
    SimConfig,
    generate_dataset,
)

__version__ = "0.1.0"
