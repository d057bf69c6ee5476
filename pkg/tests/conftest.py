import numpy as np
import pytest

from cmm.cli import _design_for_schema
from cmm.data import pack
from cmm.estimate import FitConfig, fit
from cmm.params import ModelParams
from cmm.presets import game_only_schema
from cmm.simulate import CovariateGenerator, SimConfig, generate_dataset

GAME_BETA = np.array(
    [0.343, -0.343, 0.195, -0.195, 0.85, -0.85, 0.823, -0.823, 0.502, -0.502]
)


def game_only_truth(n_segments: int = 2) -> ModelParams:
    """Small ground truth over the five game factors only."""
    alpha = {1: [14.0], 2: [8.0, 24.0], 3: [6.0, 15.0, 26.0]}[n_segments]
    pi = {1: [1.0], 2: [0.4, 0.6], 3: [0.25, 0.45, 0.3]}[n_segments]
    return ModelParams(
        alpha=np.array(alpha),
        beta=GAME_BETA.copy(),
        delta=8.0,
        phi=np.array([0.90, 0.02, 0.05, 0.03]),
        pi=np.array(pi),
    )


def simulate_game_only(n_children: int, seed: int, n_segments: int = 2,
                       n_trials: int = 16):
    cfg = SimConfig(
        n_children=n_children,
        true_params=game_only_truth(n_segments),
        schema=game_only_schema(),
        covariates=CovariateGenerator(numeric={}, categorical={}),
        n_trials=n_trials,
        seed=seed,
    )
    children, trials = generate_dataset(cfg)
    packed = pack(children, trials, game_only_schema())
    return children, trials, packed


@pytest.fixture(scope="session")
def small_sim():
    return simulate_game_only(n_children=160, seed=11)


@pytest.fixture(scope="session")
def small_fit(small_sim):
    _, _, packed = small_sim
    return fit(packed, FitConfig(n_segments=2, seed=5))


@pytest.fixture(scope="session")
def truth_design():
    return _design_for_schema(game_only_schema())
