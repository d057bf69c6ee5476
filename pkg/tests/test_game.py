import itertools

import numpy as np
import pytest

from cmm.game import (
    ALL_SETTINGS,
    GameSetting,
    conditional_censor_prob,
    expected_round_score,
    first_loss_positions,
    marginal_censor_prob,
    omega,
    risk_neutral_optimum,
    simulate_trial,
    simulate_trials,
    survival_prob,
)


def test_settings_grid_is_complete():
    assert len(ALL_SETTINGS) == 8
    combos = {(s.gain_amount, s.loss_amount, s.n_loss_cards) for s in ALL_SETTINGS}
    assert combos == set(itertools.product((10, 30), (250, 750), (1, 3)))


def test_bad_setting_rejected():
    with pytest.raises(ValueError):
        GameSetting(20, 250, 1)


def test_conditional_censor_prob():
    s3 = GameSetting(10, 250, 3)
    # card k is drawn from the 33-k not yet excluded, 3 of which lose
    for k in range(1, 31):
        assert abs(conditional_censor_prob(k, s3) - 3 / (33 - k)) < 1e-15
    s1 = GameSetting(10, 250, 1)
    assert abs(conditional_censor_prob(1, s1) - 1 / 32) < 1e-15
    with pytest.raises(ValueError):
        conditional_censor_prob(31, s3)


def _enumerated_first_loss(n_loss: int) -> np.ndarray:
    """Exact first-loss distribution by enumerating loss-card positions."""
    counts = np.zeros(34)
    total = 0
    for positions in itertools.combinations(range(1, 33), n_loss):
        counts[min(positions)] += 1
        total += 1
    return counts / total


def test_marginal_censor_prob_matches_enumeration():
    for n_loss in (1, 3):
        s = GameSetting(10, 250, n_loss)
        exact = _enumerated_first_loss(n_loss)
        for k in range(1, 33):
            assert abs(marginal_censor_prob(k, s) - exact[k]) < 1e-14


def test_survival_prob_matches_enumeration():
    for n_loss in (1, 3):
        s = GameSetting(10, 250, n_loss)
        exact = _enumerated_first_loss(n_loss)
        for z in range(0, 33):
            # surviving z flips means the first loss sits strictly past z
            assert abs(survival_prob(z, s) - exact[z + 1 :].sum()) < 1e-14
        assert survival_prob(0, s) == 1.0


def test_omega_is_a_probability_distribution_over_outcomes():
    for s in ALL_SETTINGS:
        for z in range(0, 33):
            stop_mass = sum(omega(k, True, z, s) for k in range(1, z + 1))
            total = stop_mass + omega(z, False, z, s)
            assert abs(total - 1.0) < 1e-12
            assert omega(z, False, z, s) == survival_prob(z, s)


def test_survival_is_monotone():
    for s in ALL_SETTINGS:
        prev = 1.0
        for z in range(0, 33):
            cur = survival_prob(z, s)
            assert cur <= prev + 1e-15
            prev = cur


def test_expected_round_score_closed_form():
    s = GameSetting(10, 250, 1)
    # z = 1: win 10 w.p. 31/32, lose 250 with 0 safe cards w.p. 1/32
    expected = (31 / 32) * 10 + (1 / 32) * (0 * 10 - 250)
    assert abs(expected_round_score(1, s) - expected) < 1e-12
    assert expected_round_score(0, s) == 0.0


def test_simulated_scores_match_expected_value():
    rng = np.random.default_rng(12)
    s = GameSetting(30, 750, 3)
    z = 9
    _, _, score = simulate_trials(np.full(200_000, z), s, rng)
    assert abs(score.mean() - expected_round_score(z, s)) < 2.0


def test_simulate_trial_fields():
    rng = np.random.default_rng(5)
    s = GameSetting(10, 250, 1)
    for _ in range(200):
        t = simulate_trial(7, s, rng)
        assert t.z_true == 7
        if t.censored:
            assert 1 <= t.y <= 7
            assert t.score == 10 * (t.y - 1) - 250
        else:
            assert t.y == 7
            assert t.score == 70


def test_first_loss_positions_distribution():
    rng = np.random.default_rng(99)
    n = 400_000
    for n_loss in (1, 3):
        pos = first_loss_positions(n, n_loss, rng)
        exact = _enumerated_first_loss(n_loss)
        counts = np.bincount(pos, minlength=34) / n
        for k in range(1, 33):
            se = np.sqrt(exact[k] * (1 - exact[k]) / n)
            assert abs(counts[k] - exact[k]) < 5 * se + 1e-9


def test_risk_neutral_optimum_matches_brute_force():
    for s in ALL_SETTINGS:
        values = [expected_round_score(z, s) for z in range(33)]
        best = max(values)
        brute = min(z for z, v in enumerate(values) if v == best)
        assert risk_neutral_optimum(s) == brute
