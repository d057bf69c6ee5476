"""Reference configuration: the published four-segment parameter set used as
simulator ground truth, the default covariate schema with game-setting by sex
interactions, and a cohort-like covariate generator.

The published tables give intercepts, shares, slopes, and their standard
errors, but no dispersion or inflation weights; those two are calibrated here
so simulated cohorts reproduce the reported censoring prevalence (~0.68) and
keep the base-count tail above 100 below 1e-4 at every attainable rate.
"""

from __future__ import annotations

import numpy as np

from .design import CovariateSchema
from .params import ModelParams
from .simulate import CategoricalSpec, CovariateGenerator, NumericSpec, SimConfig

TRUE_SHARES = np.array([0.097, 0.275, 0.357, 0.271])
TRUE_INTERCEPTS = np.array([5.85, 11.04, 18.68, 37.52])
TRUE_DISPERSION = 20.0  # calibrated, not published
TRUE_INFLATION = np.array([0.90, 0.02, 0.05, 0.03])  # calibrated, not published

PUBLISHED_SHARE_SE = np.array([0.006, 0.011, 0.012, 0.011])
PUBLISHED_INTERCEPT_SE = np.array([0.152, 0.188, 0.295, 0.772])

ETHNICITY_LABELS = (
    "dutch",
    "asian",
    "african",
    "moroccan",
    "dutch_antilles",
    "surinamese",
    "turkish",
    "other_western",
)
EDUCATION_LABELS = ("no_or_primary", "secondary", "higher")
INCOME_LABELS = ("lt2000", "2000_4000", "gt4000")

# slopes in design order: numerics, person blocks, game blocks, interactions
TRUE_BETA = np.array(
    [
        -0.012,  # age
        -0.539,  # iq
        -0.286, 0.286,  # sex: boy, girl
        -1.170, -0.875, 0.570, 0.477, -0.139, 0.288, 0.527, 0.322,  # ethnicity
        0.571, -0.231, -0.340,  # education
        -0.134, -0.231, 0.365,  # income
        0.343, -0.343,  # gain: 10, 30
        0.195, -0.195,  # loss: 250, 750
        0.850, -0.850,  # loss cards: 1, 3
        0.823, -0.823,  # prev loss: no, yes
        0.502, -0.502,  # second prev loss: no, yes
        -0.170, 0.170, 0.170, -0.170,  # gain x sex: 10:boy 30:boy 10:girl 30:girl
        0.154, -0.154, -0.154, 0.154,  # loss x sex
        0.169, -0.169, -0.169, 0.169,  # loss cards x sex
    ]
)


def default_schema(interactions: bool = True) -> CovariateSchema:
    """Covariate layout matching the published regression table."""
    return CovariateSchema(
        numeric=("age", "iq"),
        categorical=(
            ("sex", ("boy", "girl")),
            ("ethnicity", ETHNICITY_LABELS),
            ("education", EDUCATION_LABELS),
            ("income", INCOME_LABELS),
            ("gain", ("10", "30")),
            ("loss", ("250", "750")),
            ("loss_cards", ("1", "3")),
            ("prev_loss", ("0", "1")),
            ("prev2_loss", ("0", "1")),
        ),
        interactions=(
            (("gain", "sex"), ("loss", "sex"), ("loss_cards", "sex"))
            if interactions
            else ()
        ),
    )


def game_only_schema() -> CovariateSchema:
    """Settings-only layout for small studies without person covariates."""
    return CovariateSchema(
        numeric=(),
        categorical=(
            ("gain", ("10", "30")),
            ("loss", ("250", "750")),
            ("loss_cards", ("1", "3")),
            ("prev_loss", ("0", "1")),
            ("prev2_loss", ("0", "1")),
        ),
        interactions=(),
    )


def true_model() -> ModelParams:
    """The frozen four-segment ground truth for recovery studies."""
    return ModelParams(
        alpha=TRUE_INTERCEPTS.copy(),
        beta=TRUE_BETA.copy(),
        delta=TRUE_DISPERSION,
        phi=TRUE_INFLATION.copy(),
        pi=TRUE_SHARES.copy(),
    )


def default_covariates() -> CovariateGenerator:
    """Cohort-like marginals for the synthetic children."""
    return CovariateGenerator(
        numeric={
            "age": NumericSpec(mean=10.6, sd=0.6),
            "iq": NumericSpec(mean=102.0, sd=14.7),
        },
        categorical={
            "sex": CategoricalSpec(("boy", "girl"), (0.5, 0.5)),
            "ethnicity": CategoricalSpec(
                ETHNICITY_LABELS,
                (0.598, 0.050, 0.049, 0.050, 0.021, 0.071, 0.060, 0.101),
            ),
            "education": CategoricalSpec(EDUCATION_LABELS, (0.067, 0.422, 0.511)),
            "income": CategoricalSpec(INCOME_LABELS, (0.205, 0.438, 0.357)),
        },
    )


def reference_sim_config(n_children: int = 3404, seed: int = 0,
                         interactions: bool = True) -> SimConfig:
    """Ground-truth simulation at the published scale (N=3404, 16 rounds)."""
    schema = default_schema(interactions)
    params = true_model()
    if not interactions:
        params = ModelParams(
            alpha=params.alpha,
            beta=params.beta[:-12],
            delta=params.delta,
            phi=params.phi,
            pi=params.pi,
        )
    return SimConfig(
        n_children=n_children,
        true_params=params,
        schema=schema,
        covariates=default_covariates(),
        seed=seed,
    )
