import numpy as np
import pytest

from cmm.distributions import SUPPORT_MAX, nb_pmf, softplus
from cmm.game import GameSetting, marginal_censor_prob
from cmm.predict import (
    aggregate_distribution,
    base_tail_mass,
    censor_correct,
    censored_outcome_distribution,
    evaluate,
    expected_cards,
    expected_cards_rows,
    fitted_rates,
    mixture_pmf_rows,
)

from conftest import game_only_truth


def _slow_expected(params, x, M=100):
    total = 0.0
    levels = np.arange(0, M + 1)
    for s in range(params.n_segments):
        mu = softplus(params.alpha[s] + x @ params.beta)
        f = nb_pmf(levels, float(mu), params.delta)
        base = (levels * f).sum() + M * max(1.0 - f.sum(), 0.0)
        spikes = params.phi[2] * (94 / 7) + params.phi[3] * 31.0
        total += params.pi[s] * (params.phi[0] * base + spikes)
    return total


def test_expected_cards_matches_slow_reference(small_sim):
    _, _, packed = small_sim
    params = game_only_truth()
    X = packed.X[:40]
    fast = expected_cards_rows(params, X)
    for r in range(X.shape[0]):
        assert abs(fast[r] - _slow_expected(params, X[r])) < 1e-10
    assert abs(expected_cards(params, X[0]) - fast[0]) < 1e-12


def test_predictions_stay_on_the_board(small_fit, small_sim):
    _, _, packed = small_sim
    y_hat = expected_cards_rows(small_fit.params, packed.X)
    assert np.all(y_hat >= 0.0)
    assert np.all(y_hat <= SUPPORT_MAX)


def test_mixture_pmf_rows_normalization(small_sim):
    _, _, packed = small_sim
    params = game_only_truth()
    pmf = mixture_pmf_rows(params, packed.X[:30])
    assert pmf.shape == (30, SUPPORT_MAX + 1)
    assert np.allclose(pmf.sum(axis=1), 1.0, atol=1e-10)
    literal = mixture_pmf_rows(params, packed.X[:30], truncate_at_32=False)
    assert np.all(literal.sum(axis=1) <= 1.0 + 1e-12)
    # only the top cell differs between the two conventions
    assert np.allclose(pmf[:, :32], literal[:, :32], atol=1e-12)


def test_aggregate_distribution_is_row_mean(small_sim):
    _, _, packed = small_sim
    params = game_only_truth()
    X = packed.X[:25]
    agg = aggregate_distribution(params, X)
    rows = mixture_pmf_rows(params, X)
    assert np.allclose(agg.mass, rows.mean(axis=0), atol=1e-12)
    assert abs(agg.mass.sum() - 1.0) < 1e-10


def test_censor_correct_rescales_by_stop_chance(small_sim):
    _, _, packed = small_sim
    params = game_only_truth()
    agg = aggregate_distribution(params, packed.X[:25])
    for n_loss in (1, 3):
        s = GameSetting(10, 250, n_loss)
        corrected = censor_correct(agg, s)
        assert corrected[0] == 0.0  # a stop needs at least one card turned
        for k in range(1, SUPPORT_MAX + 1):
            assert abs(corrected[k] - agg.mass[k] * marginal_censor_prob(k, s)) < 1e-14


def test_censored_outcome_distribution_reference(small_sim):
    _, _, packed = small_sim
    params = game_only_truth()
    X = packed.X[:25]
    s = GameSetting(10, 250, 3)
    curve = censored_outcome_distribution(params, X, s)
    pmf = mixture_pmf_rows(params, X)
    for k in range(1, SUPPORT_MAX + 1):
        ref = marginal_censor_prob(k, s) * pmf[:, k:].sum(axis=1).mean()
        assert abs(curve[k] - ref) < 1e-12
    assert curve[0] == 0.0
    normed = censored_outcome_distribution(params, X, s, normalize=True)
    assert abs(normed.sum() - 1.0) < 1e-12


def test_evaluate_scores_uncensored_rounds_only():
    y = np.array([5, 8, 12, 3, 30])
    censored = np.array([0, 0, 1, 0, 1])
    y_hat = np.array([5.0, 8.0, -99.0, 3.0, 99.0])  # garbage where censored
    rmse, mad = evaluate(y_hat, y, censored)
    assert rmse == 0.0 and mad == 0.0
    y_hat2 = y_hat.copy()
    y_hat2[0] = 7.0
    rmse2, mad2 = evaluate(y_hat2, y, censored)
    assert abs(rmse2 - np.sqrt(4.0 / 3.0)) < 1e-12
    assert abs(mad2 - 2.0 / 3.0) < 1e-12
    with pytest.raises(ValueError):
        evaluate(y_hat, y, np.ones(5))


def test_base_tail_mass_is_negligible_at_moderate_rates():
    mu = np.array([5.0, 12.0, 25.0])
    tail = base_tail_mass(mu, 20.0)
    assert np.all(tail < 1e-4)
    assert np.all(tail >= 0.0)


def test_fitted_rates_shape(small_sim):
    _, _, packed = small_sim
    params = game_only_truth()
    rates = fitted_rates(params, packed.X[:10])
    assert rates.shape == (2, 10)
    assert np.all(rates > 0)
