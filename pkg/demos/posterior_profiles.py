"""Profile an outside score across segments and check the fitted model
against the observed card counts.

After fitting, each child gets a posterior over segments.  Those weights
turn any per-child score into segment means with a Wald test for equality;
here the score is the child's average round payoff, which should rise with
the segment intercepts.  The second half overlays predicted distributions
on the observed ones, separately for voluntarily ended and stopped rounds.

    python3 demos/posterior_profiles.py
"""

import numpy as np

from cmm.data import pack
from cmm.estimate import FitConfig, fit
from cmm.game import GameSetting, survival_prob
from cmm.inference import posteriors, significance_stars, weighted_profile
from cmm.params import ModelParams
from cmm.predict import (
    censored_outcome_distribution,
    evaluate,
    expected_cards_rows,
    mixture_pmf_rows,
)
from cmm.presets import game_only_schema
from cmm.simulate import CovariateGenerator, SimConfig, generate_dataset

GAME_BETA = np.array(
    [0.343, -0.343, 0.195, -0.195, 0.85, -0.85, 0.823, -0.823, 0.502, -0.502]
)

TRUTH = ModelParams(
    alpha=np.array([8.0, 24.0]),
    beta=GAME_BETA,
    delta=8.0,
    phi=np.array([0.90, 0.02, 0.05, 0.03]),
    pi=np.array([0.4, 0.6]),
)


def main():
    schema = game_only_schema()
    cfg = SimConfig(
        n_children=240,
        true_params=TRUTH,
        schema=schema,
        covariates=CovariateGenerator(numeric={}, categorical={}),
        seed=20,
    )
    children, trials = generate_dataset(cfg)
    packed = pack(children, trials, schema)
    result = fit(packed, FitConfig(n_segments=2, seed=1))
    post = posteriors(result, packed)

    score = trials.groupby("child_id")["score"].mean()
    score = score.reindex(children["child_id"]).to_numpy()
    profile = weighted_profile(post, score)
    stars = significance_stars(profile.p_value)
    print("posterior-weighted mean round payoff by segment")
    for s, m in enumerate(profile.psi_star, start=1):
        print(f"  segment {s}: {m:7.2f}")
    print(f"equality test: chi2({profile.df}) = {profile.statistic:.1f}, "
          f"p = {profile.p_value:.2g} {stars}")

    # voluntary ends within one setting; a round only ends by choice at k if
    # no loss card sat in the first k, so the intended-count pmf is weighted
    # by the reach probability before comparing with the observed histogram
    y = trials["y"].to_numpy()
    stopped = trials["censored"].to_numpy(dtype=bool)
    setting = GameSetting(gain_amount=10, loss_amount=250, n_loss_cards=1)
    sel = (
        (trials["gain_amount"].to_numpy() == setting.gain_amount)
        & (trials["loss_amount"].to_numpy() == setting.loss_amount)
        & (trials["n_loss_cards"].to_numpy() == setting.n_loss_cards)
    )
    vol = sel & ~stopped
    pmf = mixture_pmf_rows(result.params, packed.X[sel])
    reach = np.array([survival_prob(k, setting) for k in range(33)])
    pred = (pmf * reach[None, :]).mean(axis=0)
    pred = pred / pred.sum()
    emp = np.bincount(y[vol], minlength=33) / vol.sum()
    top = np.argsort(-emp)[:5]
    print("\ncard count   observed   predicted   (voluntary ends, top cells)")
    for k in sorted(top):
        print(f"      {k:2d}       {emp[k]:.3f}       {pred[k]:.3f}")

    # stopped rounds against the loss-position-weighted reach curve
    mask = stopped & (trials["n_loss_cards"].to_numpy() == 1)
    pred = censored_outcome_distribution(result.params, packed.X, setting,
                                         normalize=True)
    emp_c = np.bincount(y[mask], minlength=33) / mask.sum()
    tv = 0.5 * np.abs(pred - emp_c).sum()
    print(f"\nstopped rounds (one loss card): total variation distance "
          f"predicted vs observed = {tv:.3f}")

    row_ev = expected_cards_rows(result.params, packed.X)
    rmse, mad = evaluate(row_ev, y, stopped)
    print(f"expected-cards accuracy on voluntary ends: RMSE {rmse:.2f}, "
          f"MAD {mad:.2f}")


if __name__ == "__main__":
    main()
